"""AU: persists each message to a database, then forwards it.

config: db (database name).  Key is "<via>:<i>" so records from different
source paths never collide.
"""

import pathlib
import sys

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parent.parent))
from sdk_stub import Stub


def main():
    sdk = Stub()
    db = sdk.config["db"]
    while True:
        _, payload = sdk.next()
        key = f"{payload.get('via', 'x')}:{payload['i']}"
        sdk.db_put(db, key, payload)
        sdk.emit(payload)


if __name__ == "__main__":
    main()

"""AU: forwards only messages whose temp is at or above the threshold.

config: threshold (default 38).
"""

import pathlib
import sys

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parent.parent))
from sdk_stub import Stub


def main():
    sdk = Stub()
    threshold = float(sdk.config.get("threshold", 38))
    while True:
        _, payload = sdk.next()
        if float(payload["temp"]) >= threshold:
            sdk.emit(payload)


if __name__ == "__main__":
    main()

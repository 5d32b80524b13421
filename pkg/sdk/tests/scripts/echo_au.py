"""AU: re-emits every input payload unchanged."""

import pathlib
import sys

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[2] / "src"))
from datax_sdk import DataX


def main():
    sdk = DataX()
    while True:
        _, payload = sdk.next()
        sdk.emit(payload)


if __name__ == "__main__":
    main()

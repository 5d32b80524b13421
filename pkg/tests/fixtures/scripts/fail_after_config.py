"""Connects, reads its configuration, then exits nonzero."""

import pathlib
import sys

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parent.parent))
from sdk_stub import Stub

if __name__ == "__main__":
    Stub()
    sys.exit(3)

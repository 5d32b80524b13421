"""Connects, then ignores polite termination; only SIGKILL removes it."""

import pathlib
import signal
import sys
import time

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parent.parent))
from sdk_stub import Stub


def main():
    signal.signal(signal.SIGTERM, signal.SIG_IGN)
    sdk = Stub()  # reference held so the connection stays open
    while sdk is not None:
        time.sleep(0.1)


if __name__ == "__main__":
    main()

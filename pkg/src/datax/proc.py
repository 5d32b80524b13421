"""Child-process command resolution."""

from __future__ import annotations

import shlex
import sys


def resolve_command(executable: str) -> list[str]:
    """Turn an executable reference into an argv list.

    ``executable`` is a path or a command line.  A bare ``.py`` script is run
    with the current interpreter so registered scripts need no shebang.
    """
    argv = shlex.split(executable)
    if not argv:
        raise ValueError("executable must be non-empty")
    if argv[0].endswith(".py"):
        argv = [sys.executable] + argv
    return argv

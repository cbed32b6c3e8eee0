"""Small internal helpers shared across modules."""

import os
import tempfile


def atomic_write_bytes(path, data):
    """Write ``data`` to ``path`` via a temp file + rename.

    Readers never observe a partially written artifact: either the old file
    (or nothing) exists, or the complete new one does.
    """
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode("utf-8"))

import os
import tempfile
from contextlib import contextmanager
from pathlib import Path
from typing import BinaryIO, Iterator, Union

PathLike = Union[str, Path]


@contextmanager
def atomic_write(path: PathLike) -> Iterator[BinaryIO]:
    """Write to a sibling temp file and rename it over ``path`` on success"""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{target.name}.", suffix=".tmp", dir=target.parent)
    try:
        with os.fdopen(fd, "wb") as handle:
            yield handle
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(tmp_name, target)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def write_bytes(path: PathLike, payload: bytes) -> None:
    with atomic_write(path) as handle:
        handle.write(payload)


def write_text(path: PathLike, text: str) -> None:
    write_bytes(path, text.encode("utf-8"))

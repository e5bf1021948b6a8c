"""Utils."""

from __future__ import annotations

from collections.abc import Generator
from contextlib import contextmanager
from hashlib import blake2b
from json import dump as json_dump
from json import dumps as json_dumps
from json import load as json_load
from logging import ERROR, INFO, Formatter, StreamHandler, getLogger
from math import floor
from pathlib import Path
from pickle import HIGHEST_PROTOCOL
from pickle import dumps as pickle_dumps
from pickle import loads as pickle_loads
from sys import stderr, stdout
from time import perf_counter_ns
from typing import Any

from blosc import compress, decompress

logger = getLogger(__name__)

PROFILE_ON = json_dumps({"key": "%s.on"})
PROFILE_END = json_dumps({"key": "%s.end", "elapsed_ns": "%s"})


class SrdkError(Exception):
    """Root of srdk errors."""


def configure_logger(name, level=INFO):
    """Configure logger.

    This function should be done by the application.
    Libraries (like SRDK) should not configure their own loggers.
    """
    result = getLogger(name)
    result.setLevel(level)
    if result.handlers:
        return result
    formatter_string = " - ".join(
        (
            "%(asctime)-15s",
            "%(levelname)s",
            "%(name)s.%(funcName)s",
            "%(message)s",
        )
    )
    handler = StreamHandler(stdout)
    handler.setLevel(INFO)
    handler.setFormatter(Formatter(formatter_string))
    result.addHandler(handler)

    handler = StreamHandler(stderr)
    handler.setLevel(ERROR)
    handler.setFormatter(Formatter(formatter_string))
    result.addHandler(handler)
    return result


@contextmanager
def profile(key: str) -> Generator[None]:
    """Log the on and end of a timed section."""
    on = perf_counter_ns()
    logger.info(PROFILE_ON, key)
    try:
        yield
    finally:
        logger.info(PROFILE_END, key, perf_counter_ns() - on)


def path_get(
    path: Path,
    key: str,
    *,
    ext: str = "pkl.blosc.cache",
) -> Any:
    """Get from path directory."""
    name = path / f"{key}.{ext}"
    try:
        with open(name, "rb") as fin:
            compressed = fin.read()
    except FileNotFoundError:
        return None
    return pickle_loads(decompress(compressed))


def path_put(
    path: Path,
    key: str,
    value: Any,
    *,
    ext: str = "pkl.blosc.cache",
) -> None:
    """Put to path directory."""
    path.mkdir(parents=True, exist_ok=True)
    name = path / f"{key}.{ext}"
    compressed = compress(pickle_dumps(value, protocol=HIGHEST_PROTOCOL))
    with open(name, "wb") as fout:
        fout.write(compressed)


def digest(obj: Any, *parts: bytes, size: int = 16) -> str:
    """Return a stable hex digest of a json-able object and raw bytes."""
    h = blake2b(digest_size=size)
    h.update(json_dumps(obj, sort_keys=True).encode("utf-8"))
    for part in parts:
        h.update(part)
    return h.hexdigest()


def dump_json_file(obj: Any, path: str | Path) -> None:
    """Dump json to file."""
    with open(path, "w", encoding="utf-8") as fout:
        json_dump(obj, fout, indent=2, sort_keys=True)


def load_json_file(path: str | Path) -> Any:
    """Load json from file."""
    with open(path, encoding="utf-8") as fin:
        return json_load(fin)


class ConfigError(SrdkError, ValueError):
    """Invalid configuration naming the offending key."""

    def __init__(self, message: str, key: str | None = None):
        """__init__."""
        super().__init__(message)
        self.key = key


def round_half_up(value: float) -> int:
    """Round half away from zero for non-negative values."""
    return int(floor(value + 0.5))

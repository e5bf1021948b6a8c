"""Checkpoint files.

Layout: 8-byte magic, 8-byte little-endian header length, utf-8 JSON
header, then raw little-endian float64 payloads in directory order.
Directory offsets are relative to the first payload byte.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from json import JSONDecodeError
from json import dumps as json_dumps
from json import loads as json_loads
from logging import getLogger
from math import prod
from pathlib import Path
from typing import Any

import numpy as np

from .optim import AdamState
from .utils import SrdkError

logger = getLogger(__name__)

MAGIC = b"SRDKCKPT"
VERSION = 1
PREAMBLE = len(MAGIC) + 8
DTYPE = np.dtype("<f8")

MODEL = "model/"
REGRESSOR = "regressor/"
ADAM_M = "adam.m/"
ADAM_V = "adam.v/"

SAVED = '{"key": "checkpoint.save", "path": "%s", "bytes": "%s"}'
LOADED = '{"key": "checkpoint.load", "path": "%s", "tensors": "%s"}'


class CheckpointFormatError(SrdkError, ValueError):
    """Malformed checkpoint at a byte offset."""

    def __init__(self, message: str, offset: int):
        """__init__."""
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass
class Checkpoint:  # pylint: disable=too-many-instance-attributes
    """Model config, named tensors, optimizer and rng state."""

    model_config: dict[str, Any]
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    adam_t: int | None = None
    rng_state: dict[str, Any] | None = None
    epoch: int = 0
    extra: dict[str, Any] = field(default_factory=dict)
    version: int = VERSION

    @classmethod
    def build(  # pylint: disable=too-many-arguments
        cls,
        *,
        model_config: dict[str, Any],
        model_state: dict[str, np.ndarray],
        regressor_state: dict[str, np.ndarray] | None = None,
        adam: AdamState | None = None,
        rng_state: dict[str, Any] | None = None,
        epoch: int = 0,
        extra: dict[str, Any] | None = None,
    ) -> Checkpoint:
        """Prefix tensor names by role."""
        tensors = {MODEL + k: v for k, v in model_state.items()}
        for k, v in (regressor_state or {}).items():
            tensors[REGRESSOR + k] = v
        if adam is not None:
            for k, v in adam.m.items():
                tensors[ADAM_M + k] = v
            for k, v in adam.v.items():
                tensors[ADAM_V + k] = v
        return cls(
            model_config=model_config,
            tensors=tensors,
            adam_t=None if adam is None else adam.t,
            rng_state=rng_state,
            epoch=epoch,
            extra=dict(extra or {}),
        )

    def _role(self, prefix: str) -> dict[str, np.ndarray]:
        return {
            k[len(prefix) :]: v
            for k, v in self.tensors.items()
            if k.startswith(prefix)
        }

    def model_state(self) -> dict[str, np.ndarray]:
        """Return the deployable model parameters."""
        return self._role(MODEL)

    def regressor_state(self) -> dict[str, np.ndarray]:
        """Return the regressor parameters."""
        return self._role(REGRESSOR)

    def adam_state(self) -> AdamState | None:
        """Return the optimizer state, None when not saved."""
        if self.adam_t is None:
            return None
        return AdamState(
            m={k: v.copy() for k, v in self._role(ADAM_M).items()},
            v={k: v.copy() for k, v in self._role(ADAM_V).items()},
            t=self.adam_t,
        )

    @property
    def deployable_parameter_count(self) -> int:
        """Return the model parameter count without regressors."""
        return sum(v.size for v in self.model_state().values())

    @property
    def regressor_parameter_count(self) -> int:
        """Return the regressor parameter count."""
        return sum(v.size for v in self.regressor_state().values())


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    """Write ckpt to path."""
    directory = []
    offset = 0
    payloads = []
    for name, value in ckpt.tensors.items():
        data = np.ascontiguousarray(value, dtype=DTYPE)
        directory.append(
            {
                "name": name,
                "nbytes": data.nbytes,
                "offset": offset,
                "shape": list(data.shape),
            }
        )
        payloads.append(data.tobytes())
        offset += data.nbytes
    header = json_dumps(
        {
            "adam_t": ckpt.adam_t,
            "epoch": ckpt.epoch,
            "extra": ckpt.extra,
            "model_config": ckpt.model_config,
            "rng_state": ckpt.rng_state,
            "tensors": directory,
            "version": ckpt.version,
        },
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fout:
        fout.write(MAGIC)
        fout.write(len(header).to_bytes(8, "little"))
        fout.write(header)
        for each in payloads:
            fout.write(each)
    logger.info(SAVED, path, PREAMBLE + len(header) + offset)


def _header(buffer: bytes) -> tuple[dict[str, Any], int]:
    """Return the parsed header and the payload start."""
    if len(buffer) < len(MAGIC):
        raise CheckpointFormatError("Truncated magic", len(buffer))
    if buffer[: len(MAGIC)] != MAGIC:
        raise CheckpointFormatError("Bad magic", 0)
    if len(buffer) < PREAMBLE:
        raise CheckpointFormatError("Truncated header length", len(buffer))
    size = int.from_bytes(buffer[len(MAGIC) : PREAMBLE], "little")
    start = PREAMBLE + size
    if len(buffer) < start:
        raise CheckpointFormatError("Truncated header", len(buffer))
    try:
        header = json_loads(buffer[PREAMBLE:start].decode("utf-8"))
    except (UnicodeDecodeError, JSONDecodeError) as e:
        raise CheckpointFormatError("Malformed header", PREAMBLE) from e
    if not isinstance(header, dict):
        raise CheckpointFormatError("Malformed header", PREAMBLE)
    version = header.get("version")
    if version != VERSION:
        raise CheckpointFormatError(
            f"Version {version} != {VERSION}", PREAMBLE
        )
    return header, start


def validate_directory(directory: list[dict[str, Any]], start: int) -> int:
    """Check offsets are contiguous and sizes match shapes; return the end."""
    expected = 0
    for each in directory:
        offset = each["offset"]
        if offset != expected:
            raise CheckpointFormatError(
                f"{each['name']} offset {offset} != {expected}",
                start + offset,
            )
        nbytes = prod(each["shape"]) * DTYPE.itemsize
        if each["nbytes"] != nbytes:
            raise CheckpointFormatError(
                f"{each['name']} nbytes {each['nbytes']} != {nbytes}",
                start + offset,
            )
        expected = offset + nbytes
    return start + expected


def read_header(path: str | Path) -> dict[str, Any]:
    """Return the validated header of a checkpoint file."""
    with open(path, "rb") as fin:
        buffer = fin.read()
    header, start = _header(buffer)
    validate_directory(header["tensors"], start)
    return header


def load_checkpoint(path: str | Path) -> Checkpoint:
    """Read a checkpoint, raising CheckpointFormatError on corruption."""
    with open(path, "rb") as fin:
        buffer = fin.read()
    header, start = _header(buffer)
    end = validate_directory(header["tensors"], start)
    if len(buffer) < end:
        raise CheckpointFormatError("Truncated payload", len(buffer))
    if len(buffer) > end:
        raise CheckpointFormatError("Trailing bytes", end)
    tensors = {}
    for each in header["tensors"]:
        begin = start + each["offset"]
        data = np.frombuffer(
            buffer, dtype=DTYPE, count=prod(each["shape"]), offset=begin
        )
        tensors[each["name"]] = (
            data.reshape(each["shape"]).astype(np.float64).copy()
        )
    logger.info(LOADED, path, len(tensors))
    return Checkpoint(
        model_config=header["model_config"],
        tensors=tensors,
        adam_t=header.get("adam_t"),
        rng_state=header.get("rng_state"),
        epoch=header.get("epoch", 0),
        extra=header.get("extra", {}),
        version=header["version"],
    )

"""Binary tensor-file format shared by checkpoints and representation dumps.

Layout: magic b"MARN", version u32 LE, tensor count u32 LE, then per tensor:
name length u32, UTF-8 name, rank u32, dims (u32 each), raw little-endian
float32 payload. Optimizer accumulators ride along as tensors whose names end
in "/adagrad". A trailing length-prefixed UTF-8 block echoes the run config.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"MARN"
VERSION = 1

ADAGRAD_SUFFIX = "/adagrad"
PROGRESS_KEY = "trainer/progress_step"
TOTAL_STEPS_KEY = "trainer/total_steps"


class CheckpointError(RuntimeError):
    pass


def _write_tensor(buf: list, name: str, value: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    arr = np.ascontiguousarray(value, dtype="<f4")
    buf.append(struct.pack("<I", len(encoded)))
    buf.append(encoded)
    buf.append(struct.pack("<I", arr.ndim))
    buf.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
    buf.append(arr.tobytes())


def write_tensors(path, tensors: dict, config_text: str = "") -> None:
    """Write named float32 tensors (insertion order preserved)."""
    buf: list[bytes] = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, value in tensors.items():
        _write_tensor(buf, name, value)
    config_bytes = config_text.encode("utf-8")
    buf.append(struct.pack("<I", len(config_bytes)))
    buf.append(config_bytes)
    Path(path).write_bytes(b"".join(buf))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint file")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def read_tensors(path) -> tuple[dict, str]:
    """Return ({name: float32 array}, config echo text)."""
    data = Path(path).read_bytes()
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    count = r.u32()
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        name = r.take(r.u32()).decode("utf-8")
        rank = r.u32()
        dims = tuple(r.u32() for _ in range(rank))
        n_elem = int(np.prod(dims)) if dims else 1
        payload = r.take(4 * n_elem)
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    config_text = ""
    if r.pos < len(data):
        config_text = r.take(r.u32()).decode("utf-8")
    return tensors, config_text


def save_checkpoint(path, params: dict, accumulators: dict, step: int,
                    total_steps: int, config_text: str = "") -> None:
    tensors: dict[str, np.ndarray] = {}
    for name, value in params.items():
        tensors[name] = value
    for name, value in accumulators.items():
        tensors[name + ADAGRAD_SUFFIX] = value
    tensors[PROGRESS_KEY] = np.asarray([step], dtype=np.float32)
    tensors[TOTAL_STEPS_KEY] = np.asarray([total_steps], dtype=np.float32)
    write_tensors(path, tensors, config_text)


def load_checkpoint(path) -> tuple[dict, dict, int, int, str]:
    """Return (params, accumulators, step, total_steps, config echo)."""
    tensors, config_text = read_tensors(path)
    step = int(tensors.pop(PROGRESS_KEY, np.zeros(1))[0])
    total_steps = int(tensors.pop(TOTAL_STEPS_KEY, np.zeros(1))[0])
    params: dict[str, np.ndarray] = {}
    accumulators: dict[str, np.ndarray] = {}
    for name, value in tensors.items():
        if name.endswith(ADAGRAD_SUFFIX):
            accumulators[name[: -len(ADAGRAD_SUFFIX)]] = value
        else:
            params[name] = value
    return params, accumulators, step, total_steps, config_text

"""Single-file checkpoint container with manifest, named blobs, and checksum.

Layout (little-endian): magic "SLCK", u8 format version, u32 manifest length,
manifest JSON, u32 blob count, blobs, then a sha256 digest of everything
before it. Each blob is u16 name length, name, u8 dtype code, u8 ndim,
ndim x u32 dims, raw C-order payload.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig
from .errors import ChecksumError, FormatError, ValidationError
from .model import SlimNet, make_teacher

CKPT_MAGIC = b"SLCK"
CKPT_VERSION = 1

_DTYPES = {0: "<f4", 1: "<f8", 2: "<i8", 3: "u1", 4: "<i4"}
_DTYPE_CODES = {np.dtype(v): k for k, v in _DTYPES.items()}


def _pack_blob(name: str, arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr)
    code = _DTYPE_CODES.get(arr.dtype.newbyteorder("<"))
    if code is None:
        code = _DTYPE_CODES.get(np.dtype(arr.dtype.str.replace(">", "<")))
    if code is None:
        raise ValidationError(f"unsupported blob dtype {arr.dtype} for {name!r}")
    encoded = name.encode()
    out = [struct.pack("<H", len(encoded)), encoded, struct.pack("<BB", code, arr.ndim)]
    out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
    out.append(arr.astype(_DTYPES[code]).tobytes(order="C"))
    return b"".join(out)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError("checkpoint truncated")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size))


def _read_blob(reader: _Reader) -> tuple[str, np.ndarray]:
    (name_len,) = reader.unpack("<H")
    name = reader.take(name_len).decode()
    code, ndim = reader.unpack("<BB")
    if code not in _DTYPES:
        raise FormatError(f"unknown blob dtype code {code}")
    shape = reader.unpack(f"<{ndim}I") if ndim else ()
    dtype = np.dtype(_DTYPES[code])
    count = int(np.prod(shape, dtype=np.int64)) if shape else 1
    data = reader.take(count * dtype.itemsize)
    arr = np.frombuffer(data, dtype=dtype).reshape(shape).copy()
    return name, arr


@dataclass(eq=False)
class CheckpointData:
    config: RunConfig
    config_hash: str
    step: int
    epoch: int
    student_state: dict
    teacher_state: dict
    optimizer_state: dict | None
    numpy_rng_state: dict | None
    torch_rng_state: torch.Tensor | None


def _tensor_blobs(prefix: str, state: dict) -> list[tuple[str, np.ndarray]]:
    blobs = []
    for key, value in state.items():
        blobs.append((f"{prefix}.{key}", value.detach().cpu().numpy()))
    return blobs


def save_checkpoint(
    path: str | Path,
    *,
    config: RunConfig,
    step: int,
    epoch: int,
    student: SlimNet,
    teacher: SlimNet,
    optimizer: torch.optim.Optimizer | None = None,
    numpy_rng: np.random.Generator | None = None,
) -> Path:
    path = Path(path)
    blobs: list[tuple[str, np.ndarray]] = []
    blobs += _tensor_blobs("student", student.state_dict())
    blobs += _tensor_blobs("teacher", teacher.state_dict())

    opt_groups = None
    opt_scalars: dict[str, float | int] = {}
    if optimizer is not None:
        sd = optimizer.state_dict()
        opt_groups = sd["param_groups"]
        for idx in sorted(sd["state"]):
            for key, value in sorted(sd["state"][idx].items()):
                if isinstance(value, torch.Tensor):
                    blobs.append((f"opt.{idx}.{key}", value.detach().cpu().numpy()))
                else:
                    opt_scalars[f"{idx}.{key}"] = value

    blobs.append(("torch_rng", torch.get_rng_state().numpy()))

    manifest = {
        "format": CKPT_VERSION,
        "config": config.to_dict(),
        "config_hash": config.config_hash(),
        "step": int(step),
        "epoch": int(epoch),
        "optimizer_groups": opt_groups,
        "optimizer_scalars": opt_scalars,
        "numpy_rng": numpy_rng.bit_generator.state if numpy_rng is not None else None,
    }
    manifest_bytes = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()

    body = [
        CKPT_MAGIC,
        struct.pack("<B", CKPT_VERSION),
        struct.pack("<I", len(manifest_bytes)),
        manifest_bytes,
        struct.pack("<I", len(blobs)),
    ]
    body += [_pack_blob(name, arr) for name, arr in blobs]
    payload = b"".join(body)
    path.write_bytes(payload + hashlib.sha256(payload).digest())
    return path


def load_checkpoint(
    path: str | Path,
    expected_config: RunConfig | None = None,
    force: bool = False,
) -> CheckpointData:
    raw = Path(path).read_bytes()
    if len(raw) < 41 or raw[:4] != CKPT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint file")
    payload, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(payload).digest() != digest:
        raise ChecksumError(f"{path}: checksum mismatch (corrupt file)")

    reader = _Reader(payload)
    reader.take(4)
    (version,) = reader.unpack("<B")
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    (manifest_len,) = reader.unpack("<I")
    manifest = json.loads(reader.take(manifest_len).decode())
    (n_blobs,) = reader.unpack("<I")
    blobs = dict(_read_blob(reader) for _ in range(n_blobs))

    config = RunConfig.from_dict(manifest["config"])
    if expected_config is not None and not force:
        if expected_config.config_hash() != manifest["config_hash"]:
            raise ValidationError(
                f"{path}: checkpoint config hash {manifest['config_hash'][:12]} does not "
                "match the requested configuration (pass force to override)"
            )

    def collect(prefix: str) -> dict:
        out = {}
        for name, arr in blobs.items():
            if name.startswith(prefix + "."):
                out[name[len(prefix) + 1 :]] = torch.from_numpy(arr)
        return out

    optimizer_state = None
    if manifest.get("optimizer_groups") is not None:
        state: dict[int, dict] = {}
        for name, arr in blobs.items():
            if not name.startswith("opt."):
                continue
            _, idx, key = name.split(".", 2)
            state.setdefault(int(idx), {})[key] = torch.from_numpy(arr)
        for flat_key, value in manifest.get("optimizer_scalars", {}).items():
            idx, key = flat_key.split(".", 1)
            state.setdefault(int(idx), {})[key] = value
        optimizer_state = {"state": state, "param_groups": manifest["optimizer_groups"]}

    torch_rng = blobs.get("torch_rng")
    return CheckpointData(
        config=config,
        config_hash=manifest["config_hash"],
        step=int(manifest["step"]),
        epoch=int(manifest["epoch"]),
        student_state=collect("student"),
        teacher_state=collect("teacher"),
        optimizer_state=optimizer_state,
        numpy_rng_state=manifest.get("numpy_rng"),
        torch_rng_state=torch.from_numpy(torch_rng) if torch_rng is not None else None,
    )


def load_models(path: str | Path) -> tuple[SlimNet, SlimNet, RunConfig]:
    """Rebuild (student, teacher) networks from a checkpoint's embedded config."""
    data = load_checkpoint(path)
    student = SlimNet(data.config.model)
    student.load_state_dict(data.student_state)
    teacher = make_teacher(student)
    teacher.load_state_dict(data.teacher_state)
    return student, teacher, data.config

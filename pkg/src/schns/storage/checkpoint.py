"""
Binary checkpoints for bit-exact restart.

Layout (little-endian):
    header  '<6sI32sIIQd'  magic b"SCHNS1", version, config hash, nx, ny, step, t
    fields  float64, row-major: u (2, nx, ny), phi (nx, ny), psi (2, nx),
            mu (nx, ny), kpsi (2, nx), phi_rate (nx, ny)
    rng     PCG64 state and increment as 16-byte unsigned ints, then has_uint32 and uinteger as u32
"""

import logging
import struct
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from ..core.config import config_hash
from ..core.exceptions import CheckpointError
from ..core.models import RunConfig
from ..numerics.dynamics import State

log = logging.getLogger(__name__)

MAGIC = b"SCHNS1"
VERSION = 1
HEADER = struct.Struct("<6sI32sIIQd")
RNG_TAIL = struct.Struct("<16s16sII")

PathLike = Union[str, Path]


def _field_shapes(nx: int, ny: int) -> Tuple[Tuple[str, Tuple[int, ...]], ...]:
    return (
        ("u", (2, nx, ny)),
        ("phi", (nx, ny)),
        ("psi", (2, nx)),
        ("mu", (nx, ny)),
        ("kpsi", (2, nx)),
        ("phi_rate", (nx, ny)),
    )


def expected_size(nx: int, ny: int) -> int:
    values = sum(int(np.prod(shape)) for _, shape in _field_shapes(nx, ny))
    return HEADER.size + 8 * values + RNG_TAIL.size


def _pack_rng(rng: np.random.Generator) -> bytes:
    state = rng.bit_generator.state
    if state.get("bit_generator") != "PCG64":
        raise CheckpointError(f"only PCG64 generators can be checkpointed, got {state.get('bit_generator')}")
    inner = state["state"]
    return RNG_TAIL.pack(
        int(inner["state"]).to_bytes(16, "little"),
        int(inner["inc"]).to_bytes(16, "little"),
        int(state["has_uint32"]),
        int(state["uinteger"]),
    )


def _unpack_rng(blob: bytes) -> np.random.Generator:
    raw_state, raw_inc, has_uint32, uinteger = RNG_TAIL.unpack(blob)
    bit_generator = np.random.PCG64()
    bit_generator.state = {
        "bit_generator": "PCG64",
        "state": {"state": int.from_bytes(raw_state, "little"), "inc": int.from_bytes(raw_inc, "little")},
        "has_uint32": has_uint32,
        "uinteger": uinteger,
    }
    return np.random.Generator(bit_generator)


def encode_checkpoint(state: State, rng: np.random.Generator, step: int, config: RunConfig) -> bytes:
    nx, ny = config.grid.nx, config.grid.ny
    fields = state.fields()
    parts = [HEADER.pack(MAGIC, VERSION, config_hash(config), nx, ny, step, float(state.t))]
    for name, shape in _field_shapes(nx, ny):
        array = np.asarray(fields[name], dtype="<f8")
        if array.shape != shape:
            raise CheckpointError(f"field {name} has shape {array.shape}, expected {shape}")
        parts.append(np.ascontiguousarray(array).tobytes())
    parts.append(_pack_rng(rng))
    return b"".join(parts)


def decode_checkpoint(blob: bytes, config: RunConfig) -> Tuple[State, np.random.Generator, int]:
    if len(blob) < HEADER.size:
        raise CheckpointError(f"checkpoint truncated: {len(blob)} bytes, header alone needs {HEADER.size}")
    magic, version, digest, nx, ny, step, t = HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise CheckpointError(f"not a checkpoint file (magic {magic!r})")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}, expected {VERSION}")
    if digest != config_hash(config):
        raise CheckpointError("checkpoint was written with a different configuration; refusing to resume")
    if (nx, ny) != (config.grid.nx, config.grid.ny):
        raise CheckpointError(f"checkpoint grid {nx}x{ny} does not match config grid {config.grid.nx}x{config.grid.ny}")
    if len(blob) != expected_size(nx, ny):
        raise CheckpointError(f"checkpoint has {len(blob)} bytes, expected {expected_size(nx, ny)}")

    offset = HEADER.size
    arrays = {}
    for name, shape in _field_shapes(nx, ny):
        count = int(np.prod(shape))
        arrays[name] = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).reshape(shape).astype(float)
        offset += 8 * count
    rng = _unpack_rng(blob[offset:])
    state = State(
        u=arrays["u"],
        phi=arrays["phi"],
        psi=arrays["psi"],
        mu=arrays["mu"],
        kpsi=arrays["kpsi"],
        t=t,
        phi_rate=arrays["phi_rate"],
    )
    return state, rng, step


def checkpoint_write(path: PathLike, state: State, rng: np.random.Generator, step: int, config: RunConfig) -> Path:
    path = Path(path)
    blob = encode_checkpoint(state, rng, step, config)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_bytes(blob)
        tmp.replace(path)
    except OSError as e:
        log.error(f"Failed to write checkpoint {path}: {e}")
        raise CheckpointError(f"could not write checkpoint {path}: {e}") from e
    log.info(f"Checkpoint written to {path} at step {step}")
    return path


def checkpoint_read(path: PathLike, config: RunConfig) -> Tuple[State, np.random.Generator, int]:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"could not read checkpoint {path}: {e}") from e
    state, rng, step = decode_checkpoint(blob, config)
    log.info(f"Loaded checkpoint {path} at step {step}, t={state.t:.6g}")
    return state, rng, step

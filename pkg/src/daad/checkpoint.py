"""Single-file checkpoint archive.

Layout (all integers little-endian)::

    magic    8 bytes   b"DAADCKPT"
    version  uint32
    hlen     uint64    length of the JSON header
    header   hlen bytes, UTF-8 JSON with sorted keys
    payload  raw array bytes, concatenated in header order

The header holds the run config, epoch, step, Adam step counters, the data
RNG state, a CRC32 of the payload and one entry per array:
``{"name", "dtype", "shape", "offset", "nbytes"}``. Array names follow the
parameter naming of :mod:`daad.networks`; optimizer moments are stored as
``opt.gen.{m,v}.<param>`` and ``opt.disc.{m,v}.<param>``.
"""
from __future__ import annotations

import json
import os
import struct
import zlib
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig

MAGIC = b"DAADCKPT"
FORMAT_VERSION = 1
_DTYPES = {"f4": np.dtype("<f4"), "f8": np.dtype("<f8")}


class CheckpointError(ValueError):
    """Unreadable, corrupt or incompatible checkpoint."""


def _dtype_code(arr: np.ndarray) -> str:
    if arr.dtype == np.float32:
        return "f4"
    if arr.dtype == np.float64:
        return "f8"
    raise CheckpointError(f"unsupported array dtype {arr.dtype}")


def collect_arrays(model) -> dict[str, np.ndarray]:
    arrays = dict(model.generator.state_dict())
    arrays.update(model.opt_gen.state_arrays("opt.gen"))
    if model.discriminator is not None:
        arrays.update(model.discriminator.state_dict())
        arrays.update(model.opt_disc.state_arrays("opt.disc"))
    return arrays


def encode(model) -> bytes:
    arrays = collect_arrays(model)
    entries = []
    chunks = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        code = _dtype_code(arr)
        raw = arr.astype(_DTYPES[code], copy=False).tobytes()
        entries.append({"name": name, "dtype": code, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = {
        "config": model.config.to_dict(),
        "epoch": model.epoch,
        "step": model.step,
        "opt_gen_t": model.opt_gen.t,
        "opt_disc_t": model.opt_disc.t if model.opt_disc is not None else None,
        "rng_state": model.rng.bit_generator.state,
        "payload_crc32": zlib.crc32(payload),
        "entries": entries,
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(hbytes)) + hbytes + payload


def save_checkpoint(model, path: str | os.PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode(model))
    os.replace(tmp, path)


def decode(blob: bytes, where: str = "checkpoint") -> tuple[dict, dict[str, np.ndarray]]:
    """Parse an archive into ``(header, arrays)``."""
    if len(blob) < 20 or blob[:8] != MAGIC:
        raise CheckpointError(f"{where} is not a DAAD checkpoint (bad magic)")
    version, hlen = struct.unpack("<IQ", blob[8:20])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{where} has format version {version}; this build reads version {FORMAT_VERSION}")
    if 20 + hlen > len(blob):
        raise CheckpointError(f"{where} is truncated (header)")
    try:
        header = json.loads(blob[20:20 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{where} has a corrupt header: {exc}") from exc
    payload = blob[20 + hlen:]
    if zlib.crc32(payload) != header.get("payload_crc32"):
        raise CheckpointError(f"{where} is corrupt (payload checksum mismatch)")
    arrays = {}
    for e in header["entries"]:
        dt = _DTYPES.get(e["dtype"])
        if dt is None:
            raise CheckpointError(f"{where}: unknown dtype {e['dtype']!r} for {e['name']}")
        raw = payload[e["offset"]:e["offset"] + e["nbytes"]]
        if len(raw) != e["nbytes"] or e["nbytes"] != dt.itemsize * int(np.prod(e["shape"], dtype=np.int64)):
            raise CheckpointError(f"{where}: entry {e['name']} has inconsistent size")
        arrays[e["name"]] = np.frombuffer(raw, dtype=dt).reshape(e["shape"]).astype(dt.newbyteorder("="))
    return header, arrays


def load_checkpoint(path: str | os.PathLike, require_discriminator: bool = False):
    """Rebuild a :class:`daad.training.Model` from an archive.

    ``require_discriminator=True`` raises a descriptive error when the
    archive carries no ``disc.*`` arrays.
    """
    from .scoring import MissingDiscriminatorError
    from .training import build_model

    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint {path} does not exist")
    header, arrays = decode(path.read_bytes(), str(path))
    has_disc = any(k.startswith("disc.") for k in arrays)
    if require_discriminator and not has_disc:
        raise MissingDiscriminatorError(
            f"checkpoint {path} contains no 'disc.*' arrays; a discriminator is required for this score mode")
    try:
        config = RunConfig.from_dict(header["config"])
    except ConfigError as exc:
        raise CheckpointError(f"checkpoint {path} has an invalid config: {exc}") from exc
    model = build_model(config)
    if model.discriminator is not None and not has_disc:
        raise CheckpointError(f"checkpoint {path} is missing the 'disc.*' arrays its config requires")
    try:
        model.generator.load_state_dict(arrays)
        model.opt_gen.load_state_arrays(arrays, "opt.gen", header["opt_gen_t"])
        if model.discriminator is not None:
            model.discriminator.load_state_dict(arrays)
            model.opt_disc.load_state_arrays(arrays, "opt.disc", header["opt_disc_t"])
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"checkpoint {path} does not match its config: {exc}") from exc
    for m in model.generator.modules():
        m._sync_buffers()
    if model.discriminator is not None:
        for m in model.discriminator.modules():
            m._sync_buffers()
    model.rng.bit_generator.state = header["rng_state"]
    model.epoch = int(header["epoch"])
    model.step = int(header["step"])
    return model

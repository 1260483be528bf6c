"""Binary serialization: dataset files and named-tensor checkpoints.

Dataset file layout (little-endian):
    magic "MPGM" | version u16 | sample count u64 | image_size u16
    per sample: 16*S*S panel bytes | target u8 | triple count u8 |
                3 bytes per triple (object, attribute, relation codes)
    trailing CRC32 (u32) over all sample bytes

Checkpoint layout (little-endian):
    magic "MLRN" | version u16 | tensor count u32
    per tensor: name length u16 | UTF-8 name | rank u8 | one u32 per dim |
                float32 values
    Optimizer moments ride along under "opt/" name prefixes and the model
    configuration under "cfg/", so a checkpoint is self-describing.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .data import Dataset, SampleRecord, StructureTriple
from .encoding import MEConfig, VARIANTS
from .model import ModelConfig
from .optim import OptimizerState

__all__ = [
    "FormatError",
    "write_dataset",
    "read_dataset",
    "save_checkpoint",
    "load_checkpoint",
    "CheckpointBundle",
    "DATASET_MAGIC",
    "CHECKPOINT_MAGIC",
]

DATASET_MAGIC = b"MPGM"
CHECKPOINT_MAGIC = b"MLRN"
DATASET_VERSION = 1
CHECKPOINT_VERSION = 1
_DATASET_HEADER = struct.Struct("<HQH")  # version, count, image_size


class FormatError(ValueError):
    """Malformed file: bad magic, version, truncation, or checksum."""


def write_dataset(samples, path) -> None:
    """Serialize samples (a Dataset or iterable of SampleRecord) to ``path``."""
    ds = samples if isinstance(samples, Dataset) else Dataset.from_records(list(samples))
    n = len(ds)
    with open(path, "wb") as f:
        f.write(DATASET_MAGIC)
        f.write(_DATASET_HEADER.pack(DATASET_VERSION, n, ds.image_size))
        crc = 0
        for i in range(n):
            triples = ds.triples[i]
            chunk = (
                ds.panel_bytes[i].tobytes()
                + bytes([int(ds.targets[i]), len(triples)])
                + b"".join(bytes(t.codes()) for t in triples)
            )
            crc = zlib.crc32(chunk, crc)
            f.write(chunk)
        f.write(struct.pack("<I", crc))


def read_dataset(path) -> Dataset:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 4 + _DATASET_HEADER.size + 4:
        raise FormatError("dataset file truncated before header")
    if blob[:4] != DATASET_MAGIC:
        raise FormatError(f"bad dataset magic {blob[:4]!r}")
    version, count, size = _DATASET_HEADER.unpack_from(blob, 4)
    if version != DATASET_VERSION:
        raise FormatError(f"unsupported dataset version {version}")
    payload = blob[4 + _DATASET_HEADER.size : -4]
    (stored_crc,) = struct.unpack_from("<I", blob, len(blob) - 4)
    if zlib.crc32(payload) != stored_crc:
        raise FormatError("dataset checksum mismatch")
    panel_len = 16 * size * size
    panels = np.zeros((count, 16, size, size), dtype=np.uint8)
    targets = np.zeros(count, dtype=np.int64)
    triples: list[tuple[StructureTriple, ...]] = []
    offset = 0
    for i in range(count):
        end = offset + panel_len + 2
        if end > len(payload):
            raise FormatError(f"dataset truncated inside sample {i}")
        panels[i] = np.frombuffer(payload, dtype=np.uint8, count=panel_len, offset=offset).reshape(
            16, size, size
        )
        target = payload[offset + panel_len]
        n_triples = payload[offset + panel_len + 1]
        offset = end
        if target > 7:
            raise FormatError(f"sample {i} target {target} out of range")
        if offset + 3 * n_triples > len(payload):
            raise FormatError(f"dataset truncated inside sample {i} triples")
        sample_triples = []
        for _ in range(n_triples):
            o, a, r = payload[offset], payload[offset + 1], payload[offset + 2]
            offset += 3
            try:
                sample_triples.append(StructureTriple(o, a, r))
            except ValueError as exc:
                raise FormatError(f"sample {i} carries an illegal triple: {exc}") from exc
        targets[i] = target
        triples.append(tuple(sample_triples))
    if offset != len(payload):
        raise FormatError(f"{len(payload) - offset} trailing bytes after the last sample")
    return Dataset(panels, targets, triples, size)


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class CheckpointBundle:
    params: dict[str, np.ndarray]
    opt_state: OptimizerState | None
    model_config: ModelConfig | None


def _config_entries(cfg: ModelConfig) -> list[tuple[str, np.ndarray]]:
    entries = [
        ("cfg/relation_layers", np.float32(cfg.relation_layers)),
        ("cfg/embed_dim", np.float32(cfg.embed_dim)),
        ("cfg/conv_channels", np.float32(cfg.conv_channels)),
        ("cfg/conv_count", np.float32(cfg.conv_count)),
        ("cfg/image_size", np.float32(cfg.image_size)),
        ("cfg/aggregation", np.float32(0 if cfg.aggregation == "sum" else 1)),
        ("cfg/dropout_rate", np.float32(cfg.dropout_rate)),
        ("cfg/layer1_widths", np.asarray(cfg.layer1_widths, dtype=np.float32)),
        ("cfg/deeper_widths", np.asarray(cfg.deeper_widths, dtype=np.float32)),
        ("cfg/f_phi_widths", np.asarray(cfg.f_phi_widths, dtype=np.float32)),
    ]
    if cfg.me is not None:
        entries.append(
            ("cfg/me", np.asarray([cfg.me.d, cfg.me.sigma, VARIANTS.index(cfg.me.variant)], dtype=np.float32))
        )
    return entries


def _config_from_entries(entries: Mapping[str, np.ndarray]) -> ModelConfig | None:
    if "cfg/relation_layers" not in entries:
        return None
    me = None
    if "cfg/me" in entries:
        d, sigma, variant = entries["cfg/me"]
        me = MEConfig(d=int(d), sigma=float(sigma), variant=VARIANTS[int(variant)])
    return ModelConfig(
        relation_layers=int(entries["cfg/relation_layers"]),
        layer1_widths=tuple(int(w) for w in entries["cfg/layer1_widths"]),
        deeper_widths=tuple(int(w) for w in entries["cfg/deeper_widths"]),
        f_phi_widths=tuple(int(w) for w in entries["cfg/f_phi_widths"]),
        embed_dim=int(entries["cfg/embed_dim"]),
        conv_channels=int(entries["cfg/conv_channels"]),
        conv_count=int(entries["cfg/conv_count"]),
        me=me,
        image_size=int(entries["cfg/image_size"]),
        aggregation="sum" if int(entries["cfg/aggregation"]) == 0 else "mean",
        dropout_rate=float(entries["cfg/dropout_rate"]),
    )


def save_checkpoint(path, params, opt_state: OptimizerState | None = None, model_config: ModelConfig | None = None) -> None:
    """Write named parameter tensors plus optional optimizer state and config."""
    entries: list[tuple[str, np.ndarray]] = []
    for name, p in params.items():
        entries.append((name, p.data if hasattr(p, "data") and not isinstance(p, np.ndarray) else np.asarray(p)))
    if model_config is not None:
        entries.extend(_config_entries(model_config))
    if opt_state is not None:
        entries.append(("opt/step", np.float32(opt_state.t)))
        for name, m in opt_state.m.items():
            entries.append((f"opt/m/{name}", m))
        for name, v in opt_state.v.items():
            entries.append((f"opt/v/{name}", v))
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<HI", CHECKPOINT_VERSION, len(entries)))
        for name, arr in entries:
            arr = np.asarray(arr, dtype="<f4")
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                f.write(struct.pack("<I", dim))
            f.write(np.ascontiguousarray(arr).tobytes())


def load_checkpoint(path) -> CheckpointBundle:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 10 or blob[:4] != CHECKPOINT_MAGIC:
        raise FormatError("bad checkpoint magic")
    version, count = struct.unpack_from("<HI", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    offset = 10
    entries: dict[str, np.ndarray] = {}
    for _ in range(count):
        try:
            (name_len,) = struct.unpack_from("<H", blob, offset)
            offset += 2
            name = blob[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<B", blob, offset)
            offset += 1
            dims = struct.unpack_from(f"<{rank}I", blob, offset) if rank else ()
            offset += 4 * rank
            n_values = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(blob, dtype="<f4", count=n_values, offset=offset).reshape(dims)
            offset += 4 * n_values
        except (struct.error, ValueError) as exc:
            raise FormatError(f"checkpoint truncated: {exc}") from exc
        entries[name] = np.array(arr, dtype=np.float32)
    params = {k: v for k, v in entries.items() if not k.startswith(("opt/", "cfg/"))}
    opt_state = None
    if "opt/step" in entries:
        opt_state = OptimizerState(
            m={k[len("opt/m/") :]: v for k, v in entries.items() if k.startswith("opt/m/")},
            v={k[len("opt/v/") :]: v for k, v in entries.items() if k.startswith("opt/v/")},
            t=int(entries["opt/step"]),
        )
    return CheckpointBundle(params=params, opt_state=opt_state, model_config=_config_from_entries(entries))

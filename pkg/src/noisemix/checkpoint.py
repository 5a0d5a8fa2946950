"""Versioned binary checkpoint container.

Layout (all integers little-endian; full layout in docs/checkpoint_format.md):

    magic "NMCP" | u32 version | u32 section_count | u32 reserved
    section table: per entry 24-byte NUL-padded name, u64 offset,
                   u64 length, u32 crc32(payload), u32 zero
    payloads

Section payloads are either UTF-8 JSON (the ``meta`` section) or arrays
encoded as u64 ndim, u64 per-dimension sizes, then float64 data.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .model import ContinualModel
from .pinoise import NoiseGenerator

MAGIC = b"NMCP"
VERSION = 1
_NAME_LEN = 24
_HEADER = struct.Struct("<4sIII")
_ENTRY = struct.Struct(f"<{_NAME_LEN}sQQII")


class CheckpointError(RuntimeError):
    """Corrupt, mismatched, or unreadable checkpoint."""


def _encode_array(a: np.ndarray) -> bytes:
    a = np.ascontiguousarray(a, dtype=np.float64)
    head = struct.pack("<Q", a.ndim) + b"".join(struct.pack("<Q", s) for s in a.shape)
    return head + a.tobytes()


def _decode_array(raw: bytes) -> np.ndarray:
    (ndim,) = struct.unpack_from("<Q", raw, 0)
    shape = struct.unpack_from(f"<{ndim}Q", raw, 8)
    data = np.frombuffer(raw, dtype="<f8", offset=8 + 8 * ndim).copy()
    return data.reshape(shape)


def write_container(path: str | Path, sections: dict[str, bytes]) -> None:
    names = list(sections)
    table_size = _HEADER.size + _ENTRY.size * len(names)
    offset = table_size
    entries = []
    for name in names:
        encoded = name.encode("ascii")
        if len(encoded) > _NAME_LEN:
            raise CheckpointError(f"section name too long: {name}")
        payload = sections[name]
        entries.append((encoded.ljust(_NAME_LEN, b"\0"), offset, len(payload), zlib.crc32(payload)))
        offset += len(payload)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, len(names), 0))
        for name, off, length, crc in entries:
            fh.write(_ENTRY.pack(name, off, length, crc, 0))
        for name in names:
            fh.write(sections[name])


def read_container(path: str | Path) -> dict[str, bytes]:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise CheckpointError("file too short for a checkpoint header")
    magic, version, count, _ = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise CheckpointError("bad magic; not a checkpoint file")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    sections = {}
    for i in range(count):
        name_raw, off, length, crc, _ = _ENTRY.unpack_from(raw, _HEADER.size + i * _ENTRY.size)
        name = name_raw.rstrip(b"\0").decode("ascii")
        payload = raw[off : off + length]
        if len(payload) != length:
            raise CheckpointError(f"section {name}: truncated payload")
        if zlib.crc32(payload) != crc:
            raise CheckpointError(f"section {name}: checksum mismatch")
        sections[name] = payload
    return sections


def save_checkpoint(
    path: str | Path,
    model: ContinualModel,
    cfg_hash: str,
    train_seed: int,
    total_tasks: int,
    history: list | None = None,
) -> None:
    meta = {
        "format": VERSION,
        "config_hash": cfg_hash,
        "frozen_hash": model.frozen_param_hash(),
        "sessions_completed": model.sessions_completed,
        "total_tasks": total_tasks,
        "classes_seen": list(model.classifier.classes_seen),
        "regularization": model.classifier.regularization,
        "strategy": model.strategy.value,
        "shared_omega": model.shared_mix_weights,
        "stochastic_eval": model.stochastic_eval,
        "has_noise": model.has_noise,
        "num_layers": 0 if model.layers is None else len(model.layers),
        # session rngs derive from (train_seed, session index), so the seed
        # plus the session counter is the complete rng cursor
        "rng": {"train_seed": train_seed, "next_session": model.sessions_completed + 1},
        "eval_seed": model.eval_seed,
    }
    sections: dict[str, bytes] = {
        "meta": json.dumps(meta, sort_keys=True).encode("utf-8"),
        "clf.weights": _encode_array(model.classifier.weights),
        "clf.graminv": _encode_array(model.classifier.gram_inv),
    }
    if history is not None:
        from .report import report_to_dict

        sections["history"] = json.dumps(
            [report_to_dict(r) for r in history], sort_keys=True
        ).encode("utf-8")
    if model.layers is not None:
        for l, layer in enumerate(model.layers):
            prefix = f"L{l:02d}"
            if layer.mix_weights is not None:
                sections[f"{prefix}.omega"] = _encode_array(layer.mix_weights)
            if layer.prototypes:
                sections[f"{prefix}.proto"] = _encode_array(np.stack(layer.prototypes))
            for i, gen in enumerate(layer.generators):
                gp = f"{prefix}.G{i:02d}"
                sections[f"{gp}.mw"] = _encode_array(gen.mean_weight)
                sections[f"{gp}.mb"] = _encode_array(gen.mean_bias)
                sections[f"{gp}.sw"] = _encode_array(gen.scale_weight)
                sections[f"{gp}.sb"] = _encode_array(gen.scale_bias)
    write_container(path, sections)


def load_meta(path: str | Path) -> dict:
    sections = read_container(path)
    if "meta" not in sections:
        raise CheckpointError("checkpoint has no meta section")
    return json.loads(sections["meta"].decode("utf-8"))


def load_history(path: str | Path) -> list:
    """Per-session reports recorded in the checkpoint (may be empty)."""
    from .report import report_from_dict

    sections = read_container(path)
    if "history" not in sections:
        return []
    return [report_from_dict(d) for d in json.loads(sections["history"].decode("utf-8"))]


def load_into(model: ContinualModel, path: str | Path) -> dict:
    """Restore mutable state into a freshly built model; returns the meta.

    The model must have been built from the same configuration: the hash of
    its frozen parameters has to match the stored one.
    """
    sections = read_container(path)
    meta = json.loads(sections["meta"].decode("utf-8"))
    if meta["frozen_hash"] != model.frozen_param_hash():
        raise CheckpointError("frozen parameter hash mismatch; model/config drifted")
    if meta["has_noise"] != model.has_noise:
        raise CheckpointError("noise layer presence mismatch")

    clf = model.classifier
    classes = [int(c) for c in meta["classes_seen"]]
    clf.classes_seen = classes
    clf.weights = _decode_array(sections["clf.weights"])
    clf.gram_inv = _decode_array(sections["clf.graminv"])
    if clf.weights.shape != (clf.feature_dim, len(classes)):
        raise CheckpointError("classifier weight shape mismatch")
    if clf.gram_inv.shape != (clf.feature_dim, clf.feature_dim):
        raise CheckpointError("gram inverse shape mismatch")
    if np.max(np.abs(clf.gram_inv - clf.gram_inv.T)) > 1e-9:
        raise CheckpointError("gram inverse lost symmetry")
    if np.any(np.diag(clf.gram_inv) <= 0):
        raise CheckpointError("gram inverse diagonal not positive")

    sessions = int(meta["sessions_completed"])
    if model.layers is not None:
        if meta["num_layers"] != len(model.layers):
            raise CheckpointError("layer count mismatch")
        shared_first: np.ndarray | None = None
        for l, layer in enumerate(model.layers):
            prefix = f"L{l:02d}"
            layer.generators = []
            layer.prototypes = []
            if f"{prefix}.proto" in sections:
                protos = _decode_array(sections[f"{prefix}.proto"])
                layer.prototypes = [protos[i] for i in range(protos.shape[0])]
            if f"{prefix}.omega" in sections:
                omega = _decode_array(sections[f"{prefix}.omega"])
                if model.shared_mix_weights:
                    if shared_first is None:
                        shared_first = omega
                    layer.mix_weights = shared_first
                else:
                    layer.mix_weights = omega
            for i in range(sessions):
                gp = f"{prefix}.G{i:02d}"
                try:
                    gen = NoiseGenerator(
                        mean_weight=_decode_array(sections[f"{gp}.mw"]),
                        mean_bias=_decode_array(sections[f"{gp}.mb"]),
                        scale_weight=_decode_array(sections[f"{gp}.sw"]),
                        scale_bias=_decode_array(sections[f"{gp}.sb"]),
                        task_index=i + 1,
                        frozen=True,
                    )
                except KeyError as exc:
                    raise CheckpointError(f"missing generator section {gp}") from None
                if gen.mean_weight.shape != (layer.latent_dim, layer.latent_dim):
                    raise CheckpointError(f"generator {gp} shape mismatch")
                layer.generators.append(gen)
            if len(layer.prototypes) != sessions or len(layer.generators) != sessions:
                raise CheckpointError("layer state length mismatch")
            if layer.mix_weights is not None and len(layer.mix_weights) != sessions:
                raise CheckpointError("mix weight length mismatch")
    model.sessions_completed = sessions
    model.eval_seed = int(meta["eval_seed"])
    return meta

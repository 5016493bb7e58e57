"""Persistent on-disk cache of per-instance layer matrices.

Entries are keyed by ``instance_id + ":" + encoder_fingerprint`` and stored
one file per entry under a per-fingerprint directory.  The value format is a
fixed header (magic, version, row count, column count, all little-endian
32-bit unsigned) followed by the row-major float32 matrix.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Dataset
from .encoders import Encoder, EncoderHandle, LayerMatrix
from .errors import CacheMissError, EncodingError, StageError

log = logging.getLogger(__name__)

MAGIC = b"LMAT"
VERSION = 1
_HEADER = struct.Struct("<4sIII")


def _entry_name(instance_id: str) -> str:
    safe = re.sub(r"[^A-Za-z0-9._-]", "_", instance_id)[:80]
    tag = hashlib.blake2b(instance_id.encode("utf-8"), digest_size=6).hexdigest()
    return f"{safe}-{tag}.lm"


class CacheStore:
    """Keyed binary store for layer matrices; one writer, many readers."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _shard(self, fingerprint: str) -> Path:
        return self.root / fingerprint[:16]

    def _path(self, instance_id: str, fingerprint: str) -> Path:
        return self._shard(fingerprint) / _entry_name(instance_id)

    def has(self, instance_id: str, fingerprint: str) -> bool:
        return self._path(instance_id, fingerprint).exists()

    def put(self, matrix: LayerMatrix) -> None:
        path = self._path(matrix.instance_id, matrix.encoder_fingerprint)
        path.parent.mkdir(parents=True, exist_ok=True)
        rows, cols = matrix.values.shape
        payload = _HEADER.pack(MAGIC, VERSION, rows, cols)
        payload += matrix.values.astype("<f4", copy=False).tobytes()
        tmp = path.with_suffix(".tmp")
        tmp.write_bytes(payload)
        os.replace(tmp, path)

    def get(self, instance_id: str, fingerprint: str) -> LayerMatrix:
        path = self._path(instance_id, fingerprint)
        if not path.exists():
            raise CacheMissError(
                f"no cached matrix for {instance_id!r} under fingerprint "
                f"{fingerprint[:12]}..."
            )
        blob = path.read_bytes()
        magic, version, rows, cols = _HEADER.unpack_from(blob)
        if magic != MAGIC:
            raise StageError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise StageError(f"{path}: unsupported cache version {version}")
        expected = _HEADER.size + rows * cols * 4
        if len(blob) != expected:
            raise StageError(f"{path}: truncated entry ({len(blob)} != {expected} bytes)")
        values = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size).reshape(rows, cols)
        return LayerMatrix(
            instance_id=instance_id,
            values=values.copy(),
            encoder_fingerprint=fingerprint,
        )

    def count(self, fingerprint: str) -> int:
        shard = self._shard(fingerprint)
        if not shard.exists():
            return 0
        return sum(1 for p in shard.glob("*.lm"))

    # -- encoder metadata -------------------------------------------------

    def write_meta(self, handle: EncoderHandle) -> None:
        shard = self._shard(handle.fingerprint)
        shard.mkdir(parents=True, exist_ok=True)
        meta = {
            "model_id": handle.model_id,
            "num_layers": handle.num_layers,
            "hidden_dim": handle.hidden_dim,
            "max_tokens": handle.max_tokens,
            "fingerprint": handle.fingerprint,
        }
        (shard / "encoder.json").write_text(json.dumps(meta, indent=2), encoding="utf-8")

    def read_meta(self, fingerprint: str | None = None) -> EncoderHandle:
        if fingerprint is not None:
            candidates = [self._shard(fingerprint) / "encoder.json"]
        else:
            candidates = sorted(self.root.glob("*/encoder.json"))
        metas = [p for p in candidates if p.exists()]
        if not metas:
            raise CacheMissError(f"no encoder metadata under {self.root}")
        if fingerprint is None and len(metas) > 1:
            raise StageError(
                f"{self.root} holds {len(metas)} encoder fingerprints; "
                f"pass the fingerprint explicitly"
            )
        meta = json.loads(metas[0].read_text(encoding="utf-8"))
        return EncoderHandle(**meta)


def stacked_matrices(
    cache: CacheStore, instances, fingerprint: str
) -> np.ndarray:
    """All layer matrices for ``instances`` as one (n, H+1, d) array."""
    if not instances:
        raise CacheMissError("no instances to gather")
    mats = [cache.get(inst.instance_id, fingerprint).values for inst in instances]
    return np.stack(mats)


def layer_vectors(
    cache: CacheStore, instances, fingerprint: str, layer: int
) -> np.ndarray:
    """Row ``layer`` of each instance's cached matrix, as an (n, d) array."""
    return stacked_matrices(cache, instances, fingerprint)[:, layer, :]


@dataclass
class CacheReport:
    """Outcome of populating a cache over a dataset."""

    computed: int = 0
    skipped: int = 0
    failed: list[tuple[str, str]] = field(default_factory=list)
    elapsed_seconds: float = 0.0

    def to_dict(self) -> dict:
        return {
            "computed": self.computed,
            "skipped": self.skipped,
            "failed": [list(pair) for pair in self.failed],
            "elapsed_seconds": self.elapsed_seconds,
        }


def encode_corpus(
    encoder: Encoder,
    dataset: Dataset,
    cache: CacheStore,
    recompute: bool = False,
) -> CacheReport:
    """Cache a layer matrix for every instance; existing entries are skipped.

    Per-instance encoding failures are collected in the report rather than
    aborting the run.
    """
    report = CacheReport()
    fingerprint = encoder.fingerprint()
    started = time.perf_counter()
    cache.write_meta(encoder.handle)
    for inst in dataset.instances:
        if not recompute and cache.has(inst.instance_id, fingerprint):
            report.skipped += 1
            continue
        try:
            cache.put(encoder.encode(inst))
            report.computed += 1
        except EncodingError as exc:
            log.warning("encoding failed for %s: %s", inst.instance_id, exc)
            report.failed.append((inst.instance_id, str(exc)))
    report.elapsed_seconds = time.perf_counter() - started
    return report

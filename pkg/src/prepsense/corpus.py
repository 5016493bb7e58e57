"""Dataset model and ingestion for preposition sense disambiguation.

The native interchange format is JSON lines, one instance per line:

    {"id": "...", "tokens": [...], "head": [start, end], "prep": "with",
     "sense": "4(3)", "split": "train"}

``head`` is an inclusive token-index range so phrasal prepositions can span
several tokens.  A sense inventory file uses one JSON object per preposition:

    {"prep": "with", "senses": [{"id": "4(3)", "gloss": "..."}, ...]}
"""

from __future__ import annotations

import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import IngestError
from .senses import SenseId, parse_sense_id

log = logging.getLogger(__name__)

SPLITS = ("train", "dev", "test")


def _norm_space(text: str) -> str:
    return " ".join(text.split())


@dataclass(frozen=True)
class LabeledInstance:
    """One sentence with a marked preposition occurrence."""

    instance_id: str
    tokens: tuple[str, ...]
    head_span: tuple[int, int]
    preposition: str
    sense: SenseId | None = None
    split: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "head_span", tuple(self.head_span))
        start, end = self.head_span
        if not (0 <= start <= end < len(self.tokens)):
            raise IngestError(
                f"instance {self.instance_id!r}: head span {self.head_span} "
                f"outside {len(self.tokens)} tokens"
            )
        head = _norm_space(" ".join(self.head_tokens).lower())
        if head != _norm_space(self.preposition.lower()):
            raise IngestError(
                f"instance {self.instance_id!r}: head tokens {head!r} do not "
                f"match preposition {self.preposition!r}"
            )
        if self.split is not None:
            if self.split not in SPLITS:
                raise IngestError(
                    f"instance {self.instance_id!r}: unknown split {self.split!r}"
                )
            if self.sense is None:
                raise IngestError(
                    f"instance {self.instance_id!r}: split {self.split!r} requires a sense"
                )

    @property
    def head_tokens(self) -> tuple[str, ...]:
        start, end = self.head_span
        return self.tokens[start : end + 1]

    def to_record(self) -> dict:
        return {
            "id": self.instance_id,
            "tokens": list(self.tokens),
            "head": list(self.head_span),
            "prep": self.preposition,
            "sense": self.sense.raw if self.sense else None,
            "split": self.split,
        }

    @classmethod
    def from_record(cls, record: dict) -> "LabeledInstance":
        try:
            sense = record.get("sense")
            return cls(
                instance_id=record["id"],
                tokens=tuple(record["tokens"]),
                head_span=tuple(record["head"]),
                preposition=record["prep"],
                sense=parse_sense_id(sense) if sense else None,
                split=record.get("split"),
            )
        except KeyError as exc:
            raise IngestError(f"record missing field {exc}: {record!r}") from exc


class SenseInventory:
    """Ordered, duplicate-free sense lists per preposition lemma."""

    def __init__(
        self,
        entries: dict[str, list[tuple[SenseId, str | None]]],
        inferred: bool = False,
    ):
        self._entries: dict[str, list[tuple[SenseId, str | None]]] = {}
        for prep, senses in entries.items():
            seen = set()
            for sense, _ in senses:
                if sense in seen:
                    raise IngestError(f"duplicate sense {sense} for {prep!r} in inventory")
                seen.add(sense)
            self._entries[prep] = list(senses)
        self.inferred = inferred

    @property
    def prepositions(self) -> list[str]:
        return sorted(self._entries)

    def senses(self, prep: str) -> list[SenseId]:
        return [s for s, _ in self._entries.get(prep, [])]

    def gloss(self, prep: str, sense: SenseId) -> str | None:
        for s, g in self._entries.get(prep, []):
            if s == sense:
                return g
        return None

    def contains(self, prep: str, sense: SenseId) -> bool:
        return any(s == sense for s, _ in self._entries.get(prep, []))

    def total_senses(self) -> int:
        return sum(len(v) for v in self._entries.values())

    @classmethod
    def infer(cls, instances) -> "SenseInventory":
        """Build an inventory from the gold labels present in the data."""
        seen: dict[str, dict[SenseId, None]] = defaultdict(dict)
        for inst in instances:
            if inst.sense is not None:
                seen[inst.preposition].setdefault(inst.sense)
        entries = {
            prep: [(s, None) for s in sorted(senses, key=SenseId.sort_key)]
            for prep, senses in seen.items()
        }
        return cls(entries, inferred=True)

    def save(self, path: Path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            for prep in self.prepositions:
                record = {
                    "prep": prep,
                    "senses": [
                        {"id": s.raw, "gloss": g} for s, g in self._entries[prep]
                    ],
                }
                if self.inferred:
                    record["inferred"] = True
                fh.write(json.dumps(record, ensure_ascii=False) + "\n")

    @classmethod
    def load(cls, path: Path) -> "SenseInventory":
        entries: dict[str, list[tuple[SenseId, str | None]]] = {}
        inferred = False
        with Path(path).open("r", encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                record = json.loads(line)
                prep = record["prep"]
                if prep in entries:
                    raise IngestError(f"duplicate inventory entry for {prep!r}")
                entries[prep] = [
                    (parse_sense_id(s["id"]), s.get("gloss"))
                    for s in record["senses"]
                ]
                inferred = inferred or bool(record.get("inferred"))
        return cls(entries, inferred=inferred)


@dataclass(frozen=True)
class Dataset:
    """Validated instances plus the sense inventory covering them."""

    instances: tuple[LabeledInstance, ...]
    inventory: SenseInventory

    def __post_init__(self):
        object.__setattr__(self, "instances", tuple(self.instances))
        seen = set()
        for inst in self.instances:
            if inst.instance_id in seen:
                raise IngestError(f"duplicate instance id {inst.instance_id!r}")
            seen.add(inst.instance_id)
            if inst.sense is not None and not self.inventory.contains(
                inst.preposition, inst.sense
            ):
                raise IngestError(
                    f"instance {inst.instance_id!r}: sense {inst.sense} not in "
                    f"inventory for {inst.preposition!r}"
                )

    def split(self, name: str) -> list[LabeledInstance]:
        return [inst for inst in self.instances if inst.split == name]

    def by_preposition(self, split: str | None = None) -> dict[str, list[LabeledInstance]]:
        out: dict[str, list[LabeledInstance]] = defaultdict(list)
        for inst in self.instances:
            if split is None or inst.split == split:
                out[inst.preposition].append(inst)
        return dict(out)

    @property
    def prepositions(self) -> list[str]:
        return sorted({inst.preposition for inst in self.instances})

    def save(self, path: Path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            for inst in self.instances:
                fh.write(json.dumps(inst.to_record(), ensure_ascii=False) + "\n")


def read_jsonl_instances(path: Path) -> list[LabeledInstance]:
    instances = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
            instances.append(LabeledInstance.from_record(record))
    return instances


def ingest(
    source_path: Path,
    format: str = "native_jsonl",
    inventory_path: Path | None = None,
) -> Dataset:
    """Load and validate a corpus from ``source_path``.

    ``source_path`` may be a single file or a directory whose per-preposition
    files are merged.  The inventory is read from ``inventory_path`` when
    given, otherwise inferred from the gold labels (and flagged as such).
    """
    source_path = Path(source_path)
    if not source_path.exists():
        raise IngestError(f"source path does not exist: {source_path}")

    if format == "native_jsonl":
        if source_path.is_dir():
            files = [
                f for f in sorted(source_path.glob("*.jsonl"))
                if f.name != "inventory.jsonl"
                and not f.name.endswith(".inventory.jsonl")
            ]
            if not files:
                raise IngestError(f"no .jsonl files under {source_path}")
        else:
            files = [source_path]
        instances = []
        for f in files:
            instances.extend(read_jsonl_instances(f))
    elif format == "semeval_xml":
        from .semeval import read_semeval_dir

        instances = read_semeval_dir(source_path)
    else:
        raise IngestError(f"unknown ingest format {format!r}")

    if not instances:
        raise IngestError(f"no instances found under {source_path}")

    if inventory_path is not None:
        inventory = SenseInventory.load(inventory_path)
    else:
        inventory = SenseInventory.infer(instances)
        log.info("inventory inferred from gold labels (%d prepositions)",
                 len(inventory.prepositions))
    return Dataset(instances=tuple(instances), inventory=inventory)


def carve_dev(dataset: Dataset, ratio: float = 0.2, seed: int = 13) -> Dataset:
    """Relabel a per-sense stratified fraction of each preposition's train
    instances as dev.

    Deterministic given ``seed``; senses with a single train instance stay in
    train, and at least one instance per stratum is always kept in train.
    """
    if not (0.0 < ratio < 1.0):
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    rng = np.random.default_rng(seed)

    strata: dict[tuple[str, SenseId], list[LabeledInstance]] = defaultdict(list)
    order: dict[str, int] = {}
    for pos, inst in enumerate(dataset.instances):
        order[inst.instance_id] = pos
        if inst.split == "train":
            strata[(inst.preposition, inst.sense)].append(inst)

    to_dev: set[str] = set()
    for key in sorted(strata, key=lambda k: (k[0], k[1].sort_key())):
        members = strata[key]
        n = len(members)
        if n <= 1:
            continue
        k = int(n * ratio + 0.5)
        k = min(k, n - 1)
        if k == 0:
            continue
        picked = rng.permutation(n)[:k]
        for idx in sorted(picked):
            to_dev.add(members[idx].instance_id)

    new_instances = tuple(
        replace(inst, split="dev") if inst.instance_id in to_dev else inst
        for inst in dataset.instances
    )
    return Dataset(instances=new_instances, inventory=dataset.inventory)


@dataclass
class PrepositionStats:
    preposition: str
    instances: int
    split_counts: dict[str, int]
    attested_senses: int
    inventory_senses: int
    most_frequent_sense: str | None
    most_frequent_share: float


@dataclass
class StatsReport:
    per_preposition: list[PrepositionStats]
    total_instances: int
    n_prepositions: int
    total_inventory_senses: int
    total_attested_senses: int
    zero_data_senses: list[tuple[str, str]] = field(default_factory=list)
    inventory_inferred: bool = False

    def to_dict(self) -> dict:
        return {
            "totals": {
                "instances": self.total_instances,
                "prepositions": self.n_prepositions,
                "inventory_senses": self.total_inventory_senses,
                "attested_senses": self.total_attested_senses,
                "zero_data_senses": len(self.zero_data_senses),
                "inventory_inferred": self.inventory_inferred,
            },
            "zero_data_senses": [list(pair) for pair in self.zero_data_senses],
            "prepositions": [
                {
                    "preposition": p.preposition,
                    "instances": p.instances,
                    "splits": p.split_counts,
                    "attested_senses": p.attested_senses,
                    "inventory_senses": p.inventory_senses,
                    "most_frequent_sense": p.most_frequent_sense,
                    "most_frequent_share": p.most_frequent_share,
                }
                for p in self.per_preposition
            ],
        }


def stats(dataset: Dataset) -> StatsReport:
    """Per-preposition and global dataset statistics."""
    by_prep = dataset.by_preposition()
    per_prep = []
    attested_total = 0
    zero_data: list[tuple[str, str]] = []

    inventory_preps = set(dataset.inventory.prepositions)
    for prep in sorted(set(by_prep) | inventory_preps):
        insts = by_prep.get(prep, [])
        sense_counts = Counter(inst.sense for inst in insts if inst.sense is not None)
        split_counts = Counter(inst.split for inst in insts)
        attested_total += len(sense_counts)
        if sense_counts:
            mfs, mfs_count = min(
                sense_counts.items(), key=lambda kv: (-kv[1], kv[0].sort_key())
            )
            labeled = sum(sense_counts.values())
            mfs_raw, mfs_share = mfs.raw, mfs_count / labeled
        else:
            mfs_raw, mfs_share = None, 0.0
        for sense in dataset.inventory.senses(prep):
            if sense not in sense_counts:
                zero_data.append((prep, sense.raw))
        per_prep.append(
            PrepositionStats(
                preposition=prep,
                instances=len(insts),
                split_counts={s: split_counts.get(s, 0) for s in SPLITS},
                attested_senses=len(sense_counts),
                inventory_senses=len(dataset.inventory.senses(prep)),
                most_frequent_sense=mfs_raw,
                most_frequent_share=mfs_share,
            )
        )

    return StatsReport(
        per_preposition=per_prep,
        total_instances=len(dataset.instances),
        n_prepositions=len(by_prep),
        total_inventory_senses=dataset.inventory.total_senses(),
        total_attested_senses=attested_total,
        zero_data_senses=zero_data,
        inventory_inferred=dataset.inventory.inferred,
    )

"""Test-split scoring, confusion accounting, and error analysis.

Macro accuracy (the unweighted mean of per-preposition accuracies) is the
headline number; micro (instance-weighted) accuracy is reported alongside
for comparability.  Test instances whose gold sense the model cannot emit
count as errors and are tallied separately as "unpredictable".
"""

from __future__ import annotations

import json
import logging
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import classifier
from .cache import CacheStore, stacked_matrices
from .classifier import ClassifierModel
from .corpus import Dataset, SenseInventory
from .errors import FingerprintMismatchError, ValidationError
from .senses import SenseId, parse_sense_id

log = logging.getLogger(__name__)

# thresholds for flagging confusion patterns
ABSORPTION_SUPPORT_RATIO = 10.0  # predicted sense has >= 10x the gold's support
ABSORPTION_MIN_MASS = 0.5        # ...and soaks up >= half the gold's test instances
CONFUSABLE_MIN_MASS = 0.3        # comparable-support pair with heavy confusion
CONFUSABLE_SUPPORT_RATIO = 3.0


@dataclass
class PrepositionReport:
    """Scores for one preposition; ``per_sense_support`` holds train-split counts."""

    preposition: str
    n_test: int
    n_correct: int
    confusion: dict[tuple[SenseId, SenseId], int]
    per_sense_support: dict[SenseId, int]
    n_unpredictable: int = 0
    chosen_layer: int | None = None

    @property
    def accuracy(self) -> float:
        return self.n_correct / self.n_test if self.n_test else 0.0

    def to_record(self) -> dict:
        return {
            "preposition": self.preposition,
            "n_test": self.n_test,
            "n_correct": self.n_correct,
            "accuracy": self.accuracy,
            "n_unpredictable": self.n_unpredictable,
            "chosen_layer": self.chosen_layer,
            "confusion": [
                [g.raw, p.raw, c] for (g, p), c in sorted(
                    self.confusion.items(),
                    key=lambda kv: (kv[0][0].sort_key(), kv[0][1].sort_key()),
                )
            ],
            "per_sense_support": {
                s.raw: c for s, c in sorted(
                    self.per_sense_support.items(), key=lambda kv: kv[0].sort_key()
                )
            },
        }

    @classmethod
    def from_record(cls, record: dict) -> "PrepositionReport":
        return cls(
            preposition=record["preposition"],
            n_test=record["n_test"],
            n_correct=record["n_correct"],
            confusion={
                (parse_sense_id(g), parse_sense_id(p)): c
                for g, p, c in record["confusion"]
            },
            per_sense_support={
                parse_sense_id(s): c for s, c in record["per_sense_support"].items()
            },
            n_unpredictable=record.get("n_unpredictable", 0),
            chosen_layer=record.get("chosen_layer"),
        )


@dataclass
class EvaluationReport:
    reports: list[PrepositionReport]
    metadata: dict = field(default_factory=dict)

    @property
    def macro_accuracy(self) -> float:
        if not self.reports:
            return 0.0
        return float(np.mean([r.accuracy for r in self.reports]))

    @property
    def micro_accuracy(self) -> float:
        total = sum(r.n_test for r in self.reports)
        if total == 0:
            return 0.0
        return sum(r.n_correct for r in self.reports) / total

    def to_dict(self) -> dict:
        return {
            "macro_accuracy": self.macro_accuracy,
            "micro_accuracy": self.micro_accuracy,
            "metadata": self.metadata,
            "prepositions": [r.to_record() for r in self.reports],
        }

    def save(self, path: Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), indent=2, ensure_ascii=False), encoding="utf-8"
        )

    @classmethod
    def load(cls, path: Path) -> "EvaluationReport":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            reports=[PrepositionReport.from_record(r) for r in data["prepositions"]],
            metadata=data.get("metadata", {}),
        )


def _train_support(dataset: Dataset, prep: str) -> dict[SenseId, int]:
    return dict(Counter(
        inst.sense for inst in dataset.instances
        if inst.preposition == prep and inst.split == "train"
    ))


def evaluate(
    models: dict[str, ClassifierModel],
    dataset: Dataset,
    cache: CacheStore,
) -> EvaluationReport:
    """Score every test preposition with its trained model."""
    test_by_prep = dataset.by_preposition("test")
    if not test_by_prep:
        raise ValidationError("dataset has no test split")

    fingerprints = {m.encoder_fingerprint for m in models.values()}
    if len(fingerprints) > 1:
        raise FingerprintMismatchError(
            f"models were trained under {len(fingerprints)} different encoder "
            f"fingerprints; refusing to mix them"
        )
    fingerprint = next(iter(fingerprints))
    try:
        handle = cache.read_meta(fingerprint)
    except Exception as exc:
        raise FingerprintMismatchError(
            f"cache at {cache.root} holds no embeddings for encoder fingerprint "
            f"{fingerprint[:12]}... (stale embeddings?)"
        ) from exc

    reports = []
    for prep in sorted(test_by_prep):
        insts = test_by_prep[prep]
        model = models.get(prep)
        if model is None:
            raise ValidationError(f"no trained model for test preposition {prep!r}")
        x = stacked_matrices(cache, insts, fingerprint)[:, model.chosen_layer, :]
        probs = classifier.forward(model.params, x)
        pred_idx = np.atleast_2d(probs).argmax(axis=1)

        confusion: Counter = Counter()
        n_correct = 0
        n_unpredictable = 0
        label_set = set(model.label_map)
        for i, inst in enumerate(insts):
            predicted = model.label_map[pred_idx[i]]
            confusion[(inst.sense, predicted)] += 1
            if predicted == inst.sense:
                n_correct += 1
            if inst.sense not in label_set:
                n_unpredictable += 1

        reports.append(PrepositionReport(
            preposition=prep,
            n_test=len(insts),
            n_correct=n_correct,
            confusion=dict(confusion),
            per_sense_support=_train_support(dataset, prep),
            n_unpredictable=n_unpredictable,
            chosen_layer=model.chosen_layer,
        ))

    metadata = {
        "encoder_fingerprint": fingerprint,
        "encoder_model_id": handle.model_id,
        "seeds": sorted({m.train_config.seed for m in models.values()}),
        "chosen_layers": {p: m.chosen_layer for p, m in sorted(models.items())},
        "system": "mlp_over_frozen_layers",
    }
    return EvaluationReport(reports=reports, metadata=metadata)


def baseline_most_frequent(dataset: Dataset) -> EvaluationReport:
    """Predict each preposition's most frequent training sense everywhere."""
    test_by_prep = dataset.by_preposition("test")
    reports = []
    for prep in sorted(test_by_prep):
        support = _train_support(dataset, prep)
        if not support:
            log.warning("%s: no training data; baseline skips it", prep)
            continue
        mfs = min(support.items(), key=lambda kv: (-kv[1], kv[0].sort_key()))[0]
        confusion: Counter = Counter()
        n_correct = 0
        for inst in test_by_prep[prep]:
            confusion[(inst.sense, mfs)] += 1
            if inst.sense == mfs:
                n_correct += 1
        insts = test_by_prep[prep]
        reports.append(PrepositionReport(
            preposition=prep,
            n_test=len(insts),
            n_correct=n_correct,
            confusion=dict(confusion),
            per_sense_support=support,
            n_unpredictable=sum(1 for i in insts if i.sense not in support),
        ))
    return EvaluationReport(
        reports=reports, metadata={"system": "most_frequent_sense_baseline"}
    )


def full_report(
    models: dict[str, ClassifierModel],
    dataset: Dataset,
    cache: CacheStore,
) -> EvaluationReport:
    """Evaluate and attach the most-frequent-sense baseline plus per-
    preposition error analyses to the report metadata."""
    report = evaluate(models, dataset, cache)
    baseline = baseline_most_frequent(dataset)
    report.metadata["baseline_macro_accuracy"] = baseline.macro_accuracy
    report.metadata["baseline_micro_accuracy"] = baseline.micro_accuracy
    report.metadata["generated_at"] = time.time()
    report.metadata["analyses"] = [
        error_analysis(r, dataset.inventory).to_dict() for r in report.reports
    ]
    return report


@dataclass
class AnalysisSummary:
    """Digested view of one preposition's mistakes."""

    preposition: str
    ranked_confusions: list[tuple[str, str, int]]
    support_vs_accuracy: list[dict]
    absorption_flags: list[tuple[str, str]]
    confusable_flags: list[tuple[str, str]]

    def to_dict(self) -> dict:
        return {
            "preposition": self.preposition,
            "ranked_confusions": [list(t) for t in self.ranked_confusions],
            "support_vs_accuracy": self.support_vs_accuracy,
            "absorption_flags": [list(t) for t in self.absorption_flags],
            "confusable_flags": [list(t) for t in self.confusable_flags],
        }


def error_analysis(report: PrepositionReport,
                   inventory: SenseInventory) -> AnalysisSummary:
    """Rank confusion pairs and flag absorption / near-synonym patterns.

    Absorption: a sense with little training support whose test instances
    are mostly predicted as a sense with much larger support.  Confusable:
    heavy confusion between senses of comparable support.
    """
    off_diag = [
        (gold, pred, count)
        for (gold, pred), count in report.confusion.items()
        if gold != pred
    ]
    off_diag.sort(key=lambda t: (-t[2], t[0].sort_key(), t[1].sort_key()))

    test_n: Counter = Counter()
    correct: Counter = Counter()
    for (gold, pred), count in report.confusion.items():
        test_n[gold] += count
        if gold == pred:
            correct[gold] += count

    support = report.per_sense_support
    rows = []
    for sense in sorted(set(test_n) | set(support), key=SenseId.sort_key):
        n = test_n.get(sense, 0)
        rows.append({
            "sense": sense.raw,
            "train_support": support.get(sense, 0),
            "n_test": n,
            "n_correct": correct.get(sense, 0),
            "accuracy": correct.get(sense, 0) / n if n else None,
            "in_inventory": inventory.contains(report.preposition, sense),
        })

    absorption = []
    confusable = []
    for gold, pred, count in off_diag:
        gold_support = support.get(gold, 0)
        pred_support = support.get(pred, 0)
        mass = count / test_n[gold]
        if (pred_support >= ABSORPTION_SUPPORT_RATIO * max(gold_support, 1)
                and mass >= ABSORPTION_MIN_MASS):
            absorption.append((gold.raw, pred.raw))
        elif (mass >= CONFUSABLE_MIN_MASS and gold_support > 0 and pred_support > 0
                and max(gold_support, pred_support)
                < CONFUSABLE_SUPPORT_RATIO * min(gold_support, pred_support)):
            confusable.append((gold.raw, pred.raw))

    return AnalysisSummary(
        preposition=report.preposition,
        ranked_confusions=[(g.raw, p.raw, c) for g, p, c in off_diag],
        support_vs_accuracy=rows,
        absorption_flags=absorption,
        confusable_flags=confusable,
    )


def simulate_random_predictor(
    senses: list[SenseId], gold: list[SenseId], seed: int
) -> PrepositionReport:
    """Uniform-random predictor over ``senses``; a sanity yardstick for
    accuracy near 1/k on balanced data."""
    rng = np.random.default_rng(seed)
    confusion: Counter = Counter()
    n_correct = 0
    for sense in gold:
        predicted = senses[rng.integers(len(senses))]
        confusion[(sense, predicted)] += 1
        if predicted == sense:
            n_correct += 1
    return PrepositionReport(
        preposition="random",
        n_test=len(gold),
        n_correct=n_correct,
        confusion=dict(confusion),
        per_sense_support={},
    )

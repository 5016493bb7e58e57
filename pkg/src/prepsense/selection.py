"""Per-preposition hidden-layer selection.

For every layer j in [0, H] a fresh classifier is trained on that layer's
vectors with a fixed seed and scored on the development split; the chosen
layer is the dev-accuracy argmax with ties broken toward the lowest index.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import classifier
from .cache import CacheStore, stacked_matrices
from .classifier import ClassifierModel, TrainConfig
from .corpus import Dataset, LabeledInstance
from .errors import ValidationError
from .senses import SenseId

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LayerChoice:
    """Outcome of one preposition's layer sweep."""

    preposition: str
    chosen_layer: int
    dev_accuracy_per_layer: tuple[float, ...]
    seed: int
    dev_size: int
    fallback: bool = False  # empty dev: last layer used by convention

    def to_record(self) -> dict:
        return {
            "prep": self.preposition,
            "layer": self.chosen_layer,
            "dev_accuracy_per_layer": list(self.dev_accuracy_per_layer),
            "seed": self.seed,
            "dev_size": self.dev_size,
            "fallback": self.fallback,
        }

    @classmethod
    def from_record(cls, record: dict) -> "LayerChoice":
        return cls(
            preposition=record["prep"],
            chosen_layer=record["layer"],
            dev_accuracy_per_layer=tuple(record["dev_accuracy_per_layer"]),
            seed=record["seed"],
            dev_size=record["dev_size"],
            fallback=record.get("fallback", False),
        )


def dev_accuracy(model: ClassifierModel, dev_x: np.ndarray,
                 dev_senses: list[SenseId]) -> float:
    """Fraction of dev instances predicted exactly; senses outside the
    model's label map count as wrong."""
    probs = classifier.forward(model.params, dev_x)
    pred = np.atleast_2d(probs).argmax(axis=1)
    correct = sum(
        1 for i, sense in enumerate(dev_senses) if model.label_map[pred[i]] == sense
    )
    return correct / len(dev_senses)


def select_layer(
    preposition: str,
    train_instances: list[LabeledInstance],
    dev_instances: list[LabeledInstance],
    cache: CacheStore,
    fingerprint: str,
    num_layers: int,
    config: TrainConfig,
) -> LayerChoice:
    """Sweep all layers for one preposition and return the argmax choice."""
    if not train_instances:
        raise ValidationError(f"{preposition!r}: no train instances to sweep")
    if not dev_instances:
        log.warning("%s: empty dev split; defaulting to last layer %d",
                    preposition, num_layers)
        return LayerChoice(
            preposition=preposition,
            chosen_layer=num_layers,
            dev_accuracy_per_layer=(),
            seed=config.seed,
            dev_size=0,
            fallback=True,
        )

    train_mats = stacked_matrices(cache, train_instances, fingerprint)
    dev_mats = stacked_matrices(cache, dev_instances, fingerprint)
    if train_mats.shape[1] != num_layers + 1:
        raise ValidationError(
            f"{preposition!r}: cache holds {train_mats.shape[1]} layers, "
            f"expected {num_layers + 1}"
        )
    train_senses = [inst.sense for inst in train_instances]
    dev_senses = [inst.sense for inst in dev_instances]

    accuracies = []
    for j in range(num_layers + 1):
        model = classifier.train(
            preposition,
            train_mats[:, j, :],
            train_senses,
            dev_mats[:, j, :],
            dev_senses,
            config,
            chosen_layer=j,
            encoder_fingerprint=fingerprint,
        )
        accuracies.append(dev_accuracy(model, dev_mats[:, j, :], dev_senses))

    best = int(np.argmax(accuracies))  # first max: lowest tying index
    return LayerChoice(
        preposition=preposition,
        chosen_layer=best,
        dev_accuracy_per_layer=tuple(accuracies),
        seed=config.seed,
        dev_size=len(dev_instances),
    )


def select_all(
    dataset: Dataset,
    cache: CacheStore,
    fingerprint: str,
    num_layers: int,
    config: TrainConfig,
) -> list[LayerChoice]:
    """Run the layer sweep for every preposition with training data."""
    train_by_prep = dataset.by_preposition("train")
    dev_by_prep = dataset.by_preposition("dev")
    choices = []
    for prep in sorted(train_by_prep):
        choice = select_layer(
            prep,
            train_by_prep[prep],
            dev_by_prep.get(prep, []),
            cache,
            fingerprint,
            num_layers,
            config,
        )
        log.info("%s: layer %d (dev acc %s)", prep, choice.chosen_layer,
                 f"{max(choice.dev_accuracy_per_layer):.3f}"
                 if choice.dev_accuracy_per_layer else "n/a")
        choices.append(choice)
    return choices


def save_choices(choices: list[LayerChoice], path: Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for choice in choices:
            fh.write(json.dumps(choice.to_record()) + "\n")


def load_choices(path: Path) -> dict[str, LayerChoice]:
    choices = {}
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                choice = LayerChoice.from_record(json.loads(line))
                choices[choice.preposition] = choice
    return choices

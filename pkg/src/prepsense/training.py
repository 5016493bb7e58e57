"""Final model training for every preposition at its chosen layer.

By default the shipped model is retrained on train + dev once the layer is
fixed (early stopping then monitors training loss); pass
``retrain_with_dev=False`` to keep the dev split held out.
"""

from __future__ import annotations

import logging

from . import classifier
from .cache import CacheStore, stacked_matrices
from .classifier import ClassifierModel, TrainConfig
from .corpus import Dataset
from .errors import ValidationError
from .selection import LayerChoice

log = logging.getLogger(__name__)


def train_models(
    dataset: Dataset,
    cache: CacheStore,
    choices: dict[str, LayerChoice],
    config: TrainConfig,
    fingerprint: str,
    retrain_with_dev: bool = True,
) -> dict[str, ClassifierModel]:
    """Train one classifier per preposition with training data."""
    train_by_prep = dataset.by_preposition("train")
    dev_by_prep = dataset.by_preposition("dev")

    models: dict[str, ClassifierModel] = {}
    for prep in sorted(train_by_prep):
        choice = choices.get(prep)
        if choice is None:
            raise ValidationError(f"no layer choice recorded for {prep!r}")
        layer = choice.chosen_layer
        train_insts = train_by_prep[prep]
        dev_insts = dev_by_prep.get(prep, [])

        if retrain_with_dev and dev_insts:
            fit_insts = train_insts + dev_insts
            dev_x, dev_senses = None, None
        else:
            fit_insts = train_insts
            if dev_insts:
                dev_x = stacked_matrices(cache, dev_insts, fingerprint)[:, layer, :]
                dev_senses = [inst.sense for inst in dev_insts]
            else:
                dev_x, dev_senses = None, None

        fit_x = stacked_matrices(cache, fit_insts, fingerprint)[:, layer, :]
        fit_senses = [inst.sense for inst in fit_insts]
        models[prep] = classifier.train(
            prep,
            fit_x,
            fit_senses,
            dev_x,
            dev_senses,
            config,
            chosen_layer=layer,
            encoder_fingerprint=fingerprint,
        )
        log.info("%s: trained on %d instances at layer %d", prep, len(fit_insts), layer)
    return models

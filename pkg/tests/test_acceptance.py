"""Acceptance gate: one test per release criterion, each printed as a
pass/fail/skip line in the terminal summary.

Criteria needing the licensed SemEval-2007 Task 6 distribution and a
pretrained encoder are gated on environment variables and skip with a
reason when the resources are absent:

    PSD_SEMEVAL_DIR  directory holding the task's XML (+ key) files
    PSD_ENCODER      encoder spec (default bert-base-uncased)
    PSD_WORKDIR      optional persistent workdir so embeddings are reused
"""

import json
import os
from pathlib import Path

import numpy as np
import pytest

from prepsense.cache import CacheStore, encode_corpus
from prepsense.classifier import TrainConfig, forward, init_params, nll_loss
from prepsense.corpus import carve_dev, ingest, stats
from prepsense.encoders import HashEncoder
from prepsense.evaluation import baseline_most_frequent, evaluate
from prepsense.pipeline import PipelineConfig, run_all
from prepsense.augment import SubstitutionRule, substitute
from prepsense.selection import select_layer
from prepsense.training import train_models

from .test_classifier import finite_difference_grads
from .test_selection import DIM, FP, NUM_LAYERS, SIGNAL_LAYER, synthetic_corpus
from .test_augment import brute_force_variants, capital_instance

SEMEVAL_DIR = os.environ.get("PSD_SEMEVAL_DIR")
ENCODER_SPEC = os.environ.get("PSD_ENCODER", "bert-base-uncased")

MACRO_ACCURACY_FLOOR = 0.829  # headline 0.854 minus 2.5 points absolute
EXPECTED_INSTANCES = 24_633
EXPECTED_PREPOSITIONS = 34

needs_corpus = pytest.mark.skipif(
    SEMEVAL_DIR is None,
    reason="set PSD_SEMEVAL_DIR to the SemEval-2007 Task 6 distribution",
)


@pytest.fixture(scope="session")
def real_corpus_run(tmp_path_factory):
    """Full pipeline over the real corpus with a pretrained encoder."""
    if SEMEVAL_DIR is None:
        pytest.skip("set PSD_SEMEVAL_DIR to the SemEval-2007 Task 6 distribution")
    workdir = os.environ.get("PSD_WORKDIR") or str(tmp_path_factory.mktemp("real-run"))
    config = PipelineConfig(
        raw_in=SEMEVAL_DIR,
        raw_format="semeval_xml",
        workdir=workdir,
        encoder=ENCODER_SPEC,
        dev_ratio=0.2,
        seed=13,
    )
    manifest = run_all(config)
    report = json.loads(config.report_path.read_text(encoding="utf-8"))
    return config, manifest, report


@needs_corpus
def test_c1_real_corpus_macro_accuracy(real_corpus_run):
    """Frozen pretrained encoder + per-preposition layer selection + default
    training reaches macro test accuracy >= 0.829; stage runtimes recorded."""
    _, manifest, report = real_corpus_run
    assert report["macro_accuracy"] >= MACRO_ACCURACY_FLOOR, (
        f"macro accuracy {report['macro_accuracy']:.4f} below the "
        f"{MACRO_ACCURACY_FLOOR} floor"
    )
    for stage in ("embed", "select-layers", "train"):
        entry = manifest.data["stages"][stage]
        assert entry["elapsed_seconds"] >= 0.0
    print(f"\nmacro accuracy: {report['macro_accuracy']:.4f} "
          f"(micro {report['micro_accuracy']:.4f})")


def test_c2_headline_policy():
    """The 86.9 headline from the largest encoder variant is out of scope at
    desk scale (encoder choice, dev construction, and training settings are
    not fully specified); the substitute coverage is the macro-accuracy
    reproduction criterion plus the property suite.  This asserts both
    substitutes exist and that the property suite is not env-gated."""
    source = Path(__file__).read_text(encoding="utf-8")
    assert "def test_c1_real_corpus_macro_accuracy" in source
    assert "def test_c6_invariant_suite" in source
    gated = [m for m in ("test_c5_gradient_check", "test_c6_invariant_suite",
                         "test_c4_synthetic_layer_recovery")
             if f"@needs_corpus\ndef {m}" in source]
    assert gated == []


@needs_corpus
def test_c3_real_corpus_ingestion_totals():
    dataset = ingest(Path(SEMEVAL_DIR), format="semeval_xml")
    report = stats(dataset)
    assert report.total_instances == EXPECTED_INSTANCES
    assert report.n_prepositions == EXPECTED_PREPOSITIONS


def test_c4_synthetic_layer_recovery(tmp_path):
    """On a cache separable only in layer-3 rows, the sweep returns j*=3 with
    dev accuracy 1.0 and the end-to-end test accuracy is 1.0."""
    dataset, matrices = synthetic_corpus()
    cache = CacheStore(tmp_path / "cache")
    from prepsense.encoders import EncoderHandle, LayerMatrix

    for iid, values in matrices.items():
        cache.put(LayerMatrix(instance_id=iid, values=values,
                              encoder_fingerprint=FP))
    cache.write_meta(EncoderHandle(model_id="synthetic", num_layers=NUM_LAYERS,
                                   hidden_dim=DIM, max_tokens=8,
                                   fingerprint=FP))
    config = TrainConfig(hidden_size=16, max_epochs=60, patience=8, seed=7)

    choice = select_layer("with", dataset.split("train"), dataset.split("dev"),
                          cache, FP, NUM_LAYERS, config)
    assert choice.chosen_layer == SIGNAL_LAYER
    assert choice.dev_accuracy_per_layer[SIGNAL_LAYER] == 1.0

    models = train_models(dataset, cache, {"with": choice}, config, FP)
    report = evaluate(models, dataset, cache)
    assert report.macro_accuracy == 1.0
    assert report.micro_accuracy == 1.0


def test_c5_gradient_check():
    """Analytic MLP gradients match central finite differences to rel error
    < 1e-4 on a 5-dim input / 3-sense toy in float64."""
    rng = np.random.default_rng(42)
    params = init_params(5, 7, 3, rng, dtype=np.float64)
    x = rng.standard_normal((8, 5))
    gold = rng.integers(0, 3, 8)
    from prepsense.classifier import loss_and_grads

    _, analytic = loss_and_grads(params, x, gold)
    numeric = finite_difference_grads(params, x, gold)
    worst = 0.0
    for (_, a), n in zip(analytic.items(), numeric):
        rel = np.abs(a - n) / np.maximum(np.abs(a) + np.abs(n), 1e-8)
        worst = max(worst, float(rel.max()))
    assert worst < 1e-4


def test_c6_invariant_suite(tmp_path, fixture_dataset):
    """Softmax normalization and shift invariance; analytic loss values;
    encoder frozenness across a training run; encode bit-determinism;
    carve_dev determinism and partition identities; evaluation count
    identities; predict closure."""
    rng = np.random.default_rng(7)

    # softmax: valid distribution within 1e-6, shift invariant
    params = init_params(6, 9, 4, rng)
    batch = (rng.standard_normal((12, 6)) * 8).astype(np.float32)
    probs = forward(params, batch)
    assert np.all(probs > 0)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)
    shifted = params.copy()
    shifted.b2 += 11.0
    np.testing.assert_allclose(forward(shifted, batch), probs, atol=1e-5)

    # loss: >= 0, ln 4 for uniform over four senses, 0 at certainty
    assert nll_loss(np.full((5, 4), 0.25), [0, 1, 2, 3, 0]) == \
        pytest.approx(np.log(4.0), rel=1e-9)
    assert nll_loss(np.array([[1.0, 0.0]]), [0]) == pytest.approx(0.0, abs=1e-9)

    # frozen encoder: fingerprint and encodings identical across a full
    # select + train run
    encoder = HashEncoder(num_layers=4, hidden_dim=32, seed=0)
    cache = CacheStore(tmp_path / "cache")
    before = encoder.fingerprint()
    probe = fixture_dataset.instances[0]
    probe_matrix = encoder.encode(probe)
    encode_corpus(encoder, fixture_dataset, cache)
    config = TrainConfig(hidden_size=24, max_epochs=30, patience=5, seed=11)
    from prepsense.selection import select_all

    choices = select_all(fixture_dataset, cache, before,
                         encoder.handle.num_layers, config)
    models = train_models(fixture_dataset, cache,
                          {c.preposition: c for c in choices}, config, before)
    assert encoder.fingerprint() == before
    again = encoder.encode(probe)
    assert np.array_equal(again.values, probe_matrix.values)  # bit-determinism

    # carve_dev: seeded determinism and partition identities
    from dataclasses import replace

    from prepsense.corpus import Dataset

    base = Dataset(
        instances=tuple(
            replace(x, split="train") if x.split == "dev" else x
            for x in fixture_dataset.instances
        ),
        inventory=fixture_dataset.inventory,
    )
    a = carve_dev(base, ratio=0.25, seed=5)
    b = carve_dev(base, ratio=0.25, seed=5)
    assert [(x.instance_id, x.split) for x in a.instances] == \
           [(x.instance_id, x.split) for x in b.instances]
    assert sorted(x.instance_id for x in a.instances) == \
           sorted(x.instance_id for x in base.instances)
    train_ids = {x.instance_id for x in a.instances if x.split == "train"}
    dev_ids = {x.instance_id for x in a.instances if x.split == "dev"}
    assert not (train_ids & dev_ids)
    original_train = {x.instance_id for x in base.instances if x.split == "train"}
    assert train_ids | dev_ids == original_train

    # evaluation count identities + predict closure
    report = evaluate(models, fixture_dataset, cache)
    for prep_report in report.reports:
        assert sum(prep_report.confusion.values()) == prep_report.n_test
        assert prep_report.accuracy == prep_report.n_correct / prep_report.n_test
        model = models[prep_report.preposition]
        labels = set(model.label_map)
        assert {p for _, p in prep_report.confusion} <= labels  # closure


@needs_corpus
def test_c7_baseline_dominance_real_corpus(real_corpus_run):
    """Trained system strictly beats the most-frequent-sense baseline on
    macro accuracy over the real corpus."""
    config, _, report = real_corpus_run
    from prepsense.pipeline import load_dataset

    dataset = load_dataset(config.dataset_path, config.inventory_path)
    baseline = baseline_most_frequent(dataset)
    assert report["macro_accuracy"] > baseline.macro_accuracy
    print(f"\nsystem {report['macro_accuracy']:.4f} vs baseline "
          f"{baseline.macro_accuracy:.4f}")


def test_c8_augmentation_contract():
    """The location-swap example produces the expected variant with its sense
    intact, and combination counts match brute-force enumeration."""
    source = capital_instance()
    rule = SubstitutionRule(target_token_index=0, replacements=("Chicago",),
                            property_class="LOCATION")
    (variant,) = substitute(source, [rule])
    assert variant.tokens == ("Chicago", "is", "the", "capital", "of", "India")
    assert variant.sense.raw == "6(3)"

    rules = [
        SubstitutionRule(0, ("Chicago", "Delhi"), "LOCATION"),
        SubstitutionRule(5, ("France", "Peru", "Chile"), "LOCATION"),
    ]
    variants = substitute(source, rules, cap=None)
    expected = brute_force_variants(source.tokens, rules)
    assert len(variants) == len(expected) == 11
    assert {v.tokens for v in variants} == expected

"""Shared fixtures: a small synthetic corpus whose sense signal lives in the
tokens adjacent to the preposition, plus cache/encoder plumbing."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from prepsense.cache import CacheStore, encode_corpus
from prepsense.corpus import Dataset, LabeledInstance, SenseInventory
from prepsense.encoders import HashEncoder
from prepsense.senses import parse_sense_id

# frame templates: (tokens-before-head, tokens-after-head); the word right
# after "with"/"of" is class-constant so every layer >= 1 separates senses
WITH_INSTRUMENT = [
    ("he cut the bread", "a knife yesterday"),
    ("she sliced onions", "a blade quickly"),
    ("they opened boxes", "a crowbar there"),
    ("he stirred soup", "a spoon today"),
    ("she carved wood", "a chisel slowly"),
    ("workers dug holes", "a shovel outside"),
    ("he fixed the shelf", "a hammer loudly"),
    ("she trimmed hedges", "a shears neatly"),
    ("the chef whisked eggs", "a fork briskly"),
    ("he scraped paint", "a scraper patiently"),
    ("she measured flour", "a cup precisely"),
    ("they lifted crates", "a hoist safely"),
    ("he signed papers", "a pen formally"),
]
WITH_COMPANION = [
    ("john walked home", "his friend tonight"),
    ("mary traveled north", "his brother early"),
    ("he watched movies", "his cousin often"),
    ("she studied math", "his sister daily"),
    ("they dined out", "his uncle sometimes"),
    ("he jogged around", "his dog regularly"),
    ("she sang duets", "his mentor happily"),
    ("the kids played", "his neighbor nearby"),
    ("he debated politics", "his colleague calmly"),
    ("she hiked trails", "his guide upward"),
    ("they camped overnight", "his family quietly"),
    ("he painted murals", "his teacher together"),
    ("she rowed boats", "his coach strongly"),
]
OF_PART = [
    ("mumbai is the capital", "india"),
    ("paris is the capital", "france"),
    ("tokyo is the capital", "japan"),
    ("cairo is the capital", "egypt"),
    ("lima is the capital", "peru"),
    ("oslo is the capital", "norway"),
    ("rome is the capital", "italy"),
    ("bern is the capital", "switzerland"),
    ("madrid is the capital", "spain"),
    ("vienna is the capital", "austria"),
    ("athens is the capital", "greece"),
    ("dublin is the capital", "ireland"),
    ("ottawa is the capital", "canada"),
]
OF_TOPIC = [
    ("she dreamed vividly", "rain falling"),
    ("he spoke softly", "victory ahead"),
    ("they thought fondly", "summer days"),
    ("she warned them", "danger nearby"),
    ("he boasted loudly", "riches untold"),
    ("the poem tells", "loss keenly"),
    ("she approved warmly", "change coming"),
    ("he despaired quietly", "failure looming"),
    ("they spoke gravely", "war brewing"),
    ("she sang sweetly", "home far"),
    ("he wrote daily", "hope enduring"),
    ("the song speaks", "love lost"),
    ("they complained bitterly", "delays mounting"),
]
AS_ROLE = [
    ("he worked there", "a clerk"),
    ("she served briefly", "a judge"),
    ("he acted once", "a villain"),
    ("she trained hard", "a pilot"),
    ("he posed proudly", "a model"),
    ("she ruled wisely", "a queen"),
    ("he began humbly", "a porter"),
    ("she retired early", "a teacher"),
]
ACCORDING_TO = [
    ("", "the report sales fell sharply"),
    ("", "the survey costs rose again"),
    ("", "the forecast rain comes tomorrow"),
    ("", "the witness events unfolded fast"),
    ("", "the manual parts ship separately"),
]


def _make_instances(prep, frames, sense_raw, prefix, split_plan):
    """split_plan: list of (split, count) consumed in order over frames."""
    sense = parse_sense_id(sense_raw)
    instances = []
    i = 0
    for split, count in split_plan:
        for _ in range(count):
            before, after = frames[i % len(frames)]
            tokens = (before.split() if before else []) + prep.split() + after.split()
            start = len(before.split()) if before else 0
            end = start + len(prep.split()) - 1
            instances.append(LabeledInstance(
                instance_id=f"{prefix}.{i:03d}",
                tokens=tuple(tokens),
                head_span=(start, end),
                preposition=prep,
                sense=sense,
                split=split,
            ))
            i += 1
    return instances


def build_fixture_instances() -> list[LabeledInstance]:
    plan = [("train", 8), ("dev", 2), ("test", 3)]
    instances = []
    instances += _make_instances("with", WITH_INSTRUMENT, "4(3)", "with.inst", plan)
    instances += _make_instances("with", WITH_COMPANION, "1(1)", "with.comp", plan)
    instances += _make_instances("of", OF_PART, "6(3)", "of.part", plan)
    instances += _make_instances("of", OF_TOPIC, "9(5)", "of.topic", plan)
    instances += _make_instances("as", AS_ROLE, "1(1)", "as.role",
                                 [("train", 5), ("dev", 1), ("test", 2)])
    instances += _make_instances("according to", ACCORDING_TO, "1(1)", "accto",
                                 [("train", 3), ("dev", 1), ("test", 1)])
    return instances


@pytest.fixture(scope="session")
def fixture_dataset() -> Dataset:
    instances = build_fixture_instances()
    return Dataset(instances=tuple(instances),
                   inventory=SenseInventory.infer(instances))


@pytest.fixture(scope="session")
def hash_encoder() -> HashEncoder:
    return HashEncoder(num_layers=4, hidden_dim=32, max_tokens=64, seed=0)


@pytest.fixture(scope="session")
def encoded_cache(tmp_path_factory, fixture_dataset, hash_encoder) -> CacheStore:
    """Session cache with the fixture corpus fully embedded."""
    cache = CacheStore(tmp_path_factory.mktemp("cache"))
    report = encode_corpus(hash_encoder, fixture_dataset, cache)
    assert not report.failed
    return cache


@pytest.fixture()
def dataset_files(tmp_path, fixture_dataset):
    """Fixture corpus written out in the native format for CLI tests."""
    data_dir = tmp_path / "data"
    data_dir.mkdir()
    dataset_path = data_dir / "corpus.jsonl"
    inventory_path = data_dir / "inventory.jsonl"
    fixture_dataset.save(dataset_path)
    fixture_dataset.inventory.save(inventory_path)
    return {"dataset": dataset_path, "inventory": inventory_path, "dir": data_dir}


def write_config(tmp_path: Path, raw_dir: Path, **overrides) -> Path:
    """Pipeline config JSON pointing at a workdir under tmp_path."""
    config = {
        "raw_in": str(raw_dir),
        "raw_format": "native_jsonl",
        "workdir": str(tmp_path / "run"),
        "encoder": "hash:layers=4,dim=32",
        "dev_ratio": 0.2,
        "seed": 13,
        "hidden_size": 32,
        "max_epochs": 40,
        "patience": 5,
    }
    config.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config), encoding="utf-8")
    return path


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail/skip line per acceptance criterion."""
    rows = []
    for status in ("passed", "failed", "skipped"):
        for report in terminalreporter.stats.get(status, []):
            if getattr(report, "when", "call") != "call" and status != "skipped":
                continue
            if "test_acceptance" in report.nodeid:
                name = report.nodeid.split("::")[-1]
                rows.append((name, status.upper()))
    if rows:
        seen = set()
        terminalreporter.write_sep("=", "acceptance criteria")
        for name, status in sorted(rows):
            if name not in seen:
                seen.add(name)
                terminalreporter.write_line(f"{status:>8}  {name}")

"""End-to-end orchestration: ingest, embed, select-layers, train, evaluate,
report, with content-hash based stage skipping and a run manifest.

Every stage records a signature (hash of its config slice plus input-file
hashes) and output hashes in the manifest; a stage reruns only when its
signature or outputs changed.  Any artifact can be traced through the
manifest to the config, seeds, and encoder fingerprint that produced it.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass
from pathlib import Path

from . import evaluation, selection, training
from .cache import CacheStore, encode_corpus
from .classifier import TrainConfig, load_model_dir, save_model_dir
from .corpus import Dataset, SenseInventory, carve_dev, ingest, read_jsonl_instances, stats
from .encoders import load_encoder
from .errors import PrepSenseError, StageError, ValidationError

log = logging.getLogger(__name__)

STAGES = ("ingest", "embed", "select-layers", "train", "evaluate", "report")


@dataclass
class PipelineConfig:
    """Flat run configuration; the on-disk form is a flat JSON object."""

    raw_in: str = ""
    raw_format: str = "native_jsonl"
    inventory_in: str | None = None
    workdir: str = "runs/default"
    encoder: str = "hash"
    max_tokens: int | None = None
    dev_ratio: float = 0.2
    seed: int = 13
    hidden_size: int = 256
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 5
    retrain_with_dev: bool = True

    # -- derived paths -----------------------------------------------------

    @property
    def dataset_path(self) -> Path:
        return Path(self.workdir) / "dataset.jsonl"

    @property
    def inventory_path(self) -> Path:
        return Path(self.workdir) / "inventory.jsonl"

    @property
    def cache_dir(self) -> Path:
        return Path(self.workdir) / "cache"

    @property
    def models_dir(self) -> Path:
        return Path(self.workdir) / "models"

    @property
    def reports_dir(self) -> Path:
        return Path(self.workdir) / "reports"

    @property
    def choices_path(self) -> Path:
        return self.reports_dir / "layer_choices.jsonl"

    @property
    def report_path(self) -> Path:
        return self.reports_dir / "report.json"

    @property
    def plots_dir(self) -> Path:
        return self.reports_dir / "plots"

    @property
    def manifest_path(self) -> Path:
        return self.reports_dir / "manifest.json"

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            hidden_size=self.hidden_size,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            patience=self.patience,
            seed=self.seed,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_file(cls, path: Path) -> "PipelineConfig":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


def file_sha256(path: Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def tree_sha256(path: Path) -> str:
    """Content hash of a file, or of a directory's full file tree."""
    path = Path(path)
    if path.is_file():
        return file_sha256(path)
    h = hashlib.sha256()
    for sub in sorted(p for p in path.rglob("*") if p.is_file()):
        h.update(str(sub.relative_to(path)).encode("utf-8"))
        h.update(file_sha256(sub).encode("ascii"))
    return h.hexdigest()


class Manifest:
    """Per-stage signatures and artifact hashes, persisted after each stage."""

    def __init__(self, path: Path):
        self.path = Path(path)
        if self.path.exists():
            self.data = json.loads(self.path.read_text(encoding="utf-8"))
        else:
            self.data = {"stages": {}, "config": None, "encoder_fingerprint": None}

    def save(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps(self.data, indent=2), encoding="utf-8")

    def stage_fresh(self, name: str, signature: str, outputs: list[Path]) -> bool:
        entry = self.data["stages"].get(name)
        if entry is None or entry.get("signature") != signature:
            return False
        recorded = entry.get("outputs", {})
        for out in outputs:
            if not Path(out).exists():
                return False
            if recorded.get(str(out)) != tree_sha256(out):
                return False
        return True

    def record(self, name: str, signature: str, outputs: list[Path],
               elapsed: float, executed: bool) -> None:
        self.data["stages"][name] = {
            "signature": signature,
            "outputs": {str(p): tree_sha256(p) for p in outputs if Path(p).exists()},
            "elapsed_seconds": round(elapsed, 3),
            "executed": executed,
            "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
        }
        self.save()


def _signature(config_slice: dict, input_paths: list[Path]) -> str:
    payload = {
        "config": config_slice,
        "inputs": {
            str(p): (tree_sha256(p) if Path(p).exists() else "missing")
            for p in input_paths
        },
    }
    return hashlib.sha256(
        json.dumps(payload, sort_keys=True).encode("utf-8")
    ).hexdigest()


def run_all(config: PipelineConfig, force: bool = False) -> Manifest:
    """Execute the pipeline stages in order, skipping up-to-date ones.

    Raises :class:`StageError` naming the failed stage; the manifest keeps
    every completed stage's record so partial artifacts stay traceable.
    """
    workdir = Path(config.workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    config.reports_dir.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(config.manifest_path)
    manifest.data["config"] = config.to_dict()
    manifest.save()

    embed_stamp = config.cache_dir / "embed_report.json"
    train_stamp = config.models_dir / "train_report.json"
    train_cfg_dict = config.train_config().to_dict()

    def run_stage(name, config_slice, inputs, outputs, action):
        signature = _signature(config_slice, inputs)
        if not force and manifest.stage_fresh(name, signature, outputs):
            log.info("stage %-13s up to date; skipped", name)
            manifest.data["stages"][name]["executed"] = False
            manifest.save()
            return
        log.info("stage %-13s running", name)
        started = time.perf_counter()
        try:
            action()
        except PrepSenseError as exc:
            log.error("stage %s failed: %s", name, exc)
            raise
        except Exception as exc:
            raise StageError(f"stage {name!r} failed: {exc}") from exc
        manifest.record(name, signature, outputs,
                        time.perf_counter() - started, executed=True)

    # ingest -----------------------------------------------------------------
    def do_ingest():
        dataset = ingest(
            Path(config.raw_in),
            format=config.raw_format,
            inventory_path=Path(config.inventory_in) if config.inventory_in else None,
        )
        if not dataset.split("dev") and config.dev_ratio > 0:
            dataset = carve_dev(dataset, ratio=config.dev_ratio, seed=config.seed)
        dataset.save(config.dataset_path)
        dataset.inventory.save(config.inventory_path)
        summary = stats(dataset).to_dict()
        (config.reports_dir / "ingest_stats.json").write_text(
            json.dumps(summary, indent=2), encoding="utf-8"
        )

    run_stage(
        "ingest",
        {"format": config.raw_format, "dev_ratio": config.dev_ratio,
         "seed": config.seed},
        [Path(config.raw_in)] + ([Path(config.inventory_in)] if config.inventory_in else []),
        [config.dataset_path, config.inventory_path],
        do_ingest,
    )

    # embed --------------------------------------------------------------
    def do_embed():
        dataset = load_dataset(config.dataset_path, config.inventory_path)
        encoder = load_encoder(config.encoder, max_tokens=config.max_tokens)
        cache = CacheStore(config.cache_dir)
        report = encode_corpus(encoder, dataset, cache)
        stamp = report.to_dict()
        stamp["encoder_fingerprint"] = encoder.fingerprint()
        stamp["model_id"] = encoder.handle.model_id
        stamp["completed_at"] = time.time()
        embed_stamp.write_text(json.dumps(stamp, indent=2), encoding="utf-8")
        manifest.data["encoder_fingerprint"] = encoder.fingerprint()
        manifest.save()

    run_stage(
        "embed",
        {"encoder": config.encoder, "max_tokens": config.max_tokens},
        [config.dataset_path],
        [embed_stamp],
        do_embed,
    )

    # select-layers --------------------------------------------------------
    def do_select():
        dataset = load_dataset(config.dataset_path, config.inventory_path)
        cache = CacheStore(config.cache_dir)
        handle = cache.read_meta(_stamp_fingerprint(embed_stamp))
        choices = selection.select_all(
            dataset, cache, handle.fingerprint, handle.num_layers,
            config.train_config(),
        )
        selection.save_choices(choices, config.choices_path)

    run_stage(
        "select-layers",
        {"train": train_cfg_dict},
        [config.dataset_path, embed_stamp],
        [config.choices_path],
        do_select,
    )

    # train --------------------------------------------------------------
    def do_train():
        dataset = load_dataset(config.dataset_path, config.inventory_path)
        cache = CacheStore(config.cache_dir)
        fingerprint = _stamp_fingerprint(embed_stamp)
        choices = selection.load_choices(config.choices_path)
        models = training.train_models(
            dataset, cache, choices, config.train_config(), fingerprint,
            retrain_with_dev=config.retrain_with_dev,
        )
        written = save_model_dir(models, config.models_dir)
        train_stamp.write_text(json.dumps({
            "models": {p.name: file_sha256(p) for p in written},
            "encoder_fingerprint": fingerprint,
            "completed_at": time.time(),
        }, indent=2), encoding="utf-8")

    run_stage(
        "train",
        {"train": train_cfg_dict, "retrain_with_dev": config.retrain_with_dev},
        [config.dataset_path, embed_stamp, config.choices_path],
        [train_stamp],
        do_train,
    )

    # evaluate -----------------------------------------------------------
    def do_evaluate():
        dataset = load_dataset(config.dataset_path, config.inventory_path)
        cache = CacheStore(config.cache_dir)
        models = load_model_dir(config.models_dir)
        report = evaluation.full_report(models, dataset, cache)
        report.save(config.report_path)

    run_stage(
        "evaluate",
        {},
        [config.dataset_path, embed_stamp, train_stamp],
        [config.report_path],
        do_evaluate,
    )

    # report -------------------------------------------------------------
    def do_report():
        from . import plots  # defers the matplotlib import to this stage

        report = evaluation.EvaluationReport.load(config.report_path)
        choices = (selection.load_choices(config.choices_path)
                   if config.choices_path.exists() else None)
        plots.write_plots(report, choices, config.plots_dir)

    run_stage(
        "report",
        {},
        [config.report_path, config.choices_path],
        [config.plots_dir / "index.json"],
        do_report,
    )

    return manifest


def _stamp_fingerprint(stamp_path: Path) -> str:
    if not stamp_path.exists():
        raise StageError(f"embed stamp missing: {stamp_path} (run the embed stage)")
    return json.loads(stamp_path.read_text(encoding="utf-8"))["encoder_fingerprint"]


def load_dataset(dataset_path: Path, inventory_path: Path | None = None) -> Dataset:
    """Native-format loader used by every stage past ingest."""
    instances = read_jsonl_instances(Path(dataset_path))
    if inventory_path and Path(inventory_path).exists():
        inventory = SenseInventory.load(inventory_path)
    else:
        inventory = SenseInventory.infer(instances)
    return Dataset(instances=tuple(instances), inventory=inventory)

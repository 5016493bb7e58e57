"""Static report figures: per-preposition layer-accuracy curves and
confusion-matrix heatmaps."""

from __future__ import annotations

import json
import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .classifier import model_filename
from .evaluation import EvaluationReport, PrepositionReport
from .selection import LayerChoice
from .senses import SenseId

log = logging.getLogger(__name__)


def _slug(preposition: str) -> str:
    return model_filename(preposition).removesuffix(".ckpt")


def layer_accuracy_plot(choice: LayerChoice, out_path: Path) -> None:
    accs = list(choice.dev_accuracy_per_layer)
    if not accs:
        return
    fig, ax = plt.subplots(figsize=(6, 3.5))
    layers = np.arange(len(accs))
    ax.plot(layers, accs, marker="o", linewidth=1.5)
    ax.scatter([choice.chosen_layer], [accs[choice.chosen_layer]],
               color="crimson", zorder=5, label=f"chosen: {choice.chosen_layer}")
    ax.set_xlabel("hidden layer")
    ax.set_ylabel("dev accuracy")
    ax.set_title(f"'{choice.preposition}' accuracy by layer")
    ax.set_xticks(layers)
    ax.set_ylim(0.0, 1.05)
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def confusion_plot(report: PrepositionReport, out_path: Path) -> None:
    senses = sorted(
        {g for g, _ in report.confusion} | {p for _, p in report.confusion},
        key=SenseId.sort_key,
    )
    if not senses:
        return
    index = {s: i for i, s in enumerate(senses)}
    grid = np.zeros((len(senses), len(senses)), dtype=int)
    for (gold, pred), count in report.confusion.items():
        grid[index[gold], index[pred]] = count

    size = max(3.5, 0.45 * len(senses) + 1.5)
    fig, ax = plt.subplots(figsize=(size, size))
    im = ax.imshow(grid, cmap="Blues")
    labels = [s.raw for s in senses]
    ax.set_xticks(range(len(senses)), labels, rotation=90, fontsize=7)
    ax.set_yticks(range(len(senses)), labels, fontsize=7)
    ax.set_xlabel("predicted")
    ax.set_ylabel("gold")
    ax.set_title(f"'{report.preposition}' confusion (n={report.n_test})")
    for i in range(len(senses)):
        for j in range(len(senses)):
            if grid[i, j]:
                ax.text(j, i, str(grid[i, j]), ha="center", va="center",
                        fontsize=6,
                        color="white" if grid[i, j] > grid.max() / 2 else "black")
    fig.colorbar(im, fraction=0.046)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def write_plots(
    report: EvaluationReport,
    choices: dict[str, LayerChoice] | None,
    out_dir: Path,
) -> list[Path]:
    """Emit all figures under ``out_dir`` and an index.json listing them."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for prep_report in report.reports:
        slug = _slug(prep_report.preposition)
        path = out_dir / f"confusion_{slug}.png"
        confusion_plot(prep_report, path)
        if path.exists():
            written.append(path)
    for choice in (choices or {}).values():
        if not choice.dev_accuracy_per_layer:
            continue
        path = out_dir / f"layers_{_slug(choice.preposition)}.png"
        layer_accuracy_plot(choice, path)
        if path.exists():
            written.append(path)
    index = out_dir / "index.json"
    index.write_text(
        json.dumps({"figures": [p.name for p in written]}, indent=2),
        encoding="utf-8",
    )
    log.info("wrote %d figures to %s", len(written), out_dir)
    return written

"""Per-preposition sense classifier: a two-layer MLP over one hidden-layer
representation of the head token.

Forward pass: ``h = relu(W1 v + b1)``, ``p = softmax(W2 h + b2)``.  Training
minimizes mean cross-entropy with mini-batch Adam (beta1=0.9, beta2=0.999)
and early stopping on development loss.  Everything is plain numpy so runs
are deterministic given a seed and gradients stay checkable against finite
differences.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import StageError, TrainingDivergedError, ValidationError
from .senses import SenseId, parse_sense_id

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and schedule settings; betas default to Adam's standard values."""

    hidden_size: int = 256
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 5
    seed: int = 13

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in data.items() if k in known})


@dataclass
class MlpParams:
    """Weights of the two feed-forward layers, in float32 once trained."""

    w1: np.ndarray  # (hidden, d)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (num_senses, hidden)
    b2: np.ndarray  # (num_senses,)

    def __post_init__(self):
        hidden, d = self.w1.shape
        num_senses = self.w2.shape[0]
        if self.b1.shape != (hidden,) or self.w2.shape != (num_senses, hidden) \
                or self.b2.shape != (num_senses,):
            raise ValidationError(
                f"inconsistent MLP shapes: w1{self.w1.shape} b1{self.b1.shape} "
                f"w2{self.w2.shape} b2{self.b2.shape}"
            )
        for name, arr in self.items():
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"non-finite values in {name}")

    @property
    def input_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden_size(self) -> int:
        return self.w1.shape[0]

    @property
    def num_senses(self) -> int:
        return self.w2.shape[0]

    def items(self):
        return (("w1", self.w1), ("b1", self.b1), ("w2", self.w2), ("b2", self.b2))

    def copy(self) -> "MlpParams":
        return MlpParams(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy())

    def astype(self, dtype) -> "MlpParams":
        return MlpParams(*(arr.astype(dtype) for _, arr in self.items()))


def init_params(d: int, hidden_size: int, num_senses: int,
                rng: np.random.Generator, dtype=np.float32) -> MlpParams:
    """Seeded uniform fan-in initialization: U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    bound1 = 1.0 / np.sqrt(d)
    bound2 = 1.0 / np.sqrt(hidden_size)
    return MlpParams(
        w1=rng.uniform(-bound1, bound1, size=(hidden_size, d)).astype(dtype),
        b1=rng.uniform(-bound1, bound1, size=hidden_size).astype(dtype),
        w2=rng.uniform(-bound2, bound2, size=(num_senses, hidden_size)).astype(dtype),
        b2=rng.uniform(-bound2, bound2, size=num_senses).astype(dtype),
    )


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def forward(params: MlpParams, v: np.ndarray) -> np.ndarray:
    """Probability distribution over senses for one vector or a batch."""
    v = np.asarray(v)
    if v.shape[-1] != params.input_dim:
        raise ValidationError(
            f"input dim {v.shape[-1]} does not match model dim {params.input_dim}"
        )
    h = np.maximum(v @ params.w1.T + params.b1, 0.0)
    logits = h @ params.w2.T + params.b2
    return softmax(logits)


def nll_loss(probs: np.ndarray, gold: np.ndarray) -> float:
    """Mean negative log-likelihood of the gold senses."""
    probs = np.atleast_2d(probs)
    gold = np.asarray(gold)
    if gold.size == 0:
        raise ValidationError("loss needs a non-empty batch")
    if gold.min() < 0 or gold.max() >= probs.shape[1]:
        raise ValidationError(
            f"gold index out of range [0, {probs.shape[1]}): {gold}"
        )
    picked = probs[np.arange(len(gold)), gold]
    return float(-np.mean(np.log(np.clip(picked, PROB_FLOOR, None))))


def loss_and_grads(params: MlpParams, x: np.ndarray,
                   gold: np.ndarray) -> tuple[float, MlpParams]:
    """Mean cross-entropy over the batch plus analytic gradients."""
    x = np.atleast_2d(x)
    gold = np.asarray(gold)
    n = x.shape[0]

    z1 = x @ params.w1.T + params.b1
    h = np.maximum(z1, 0.0)
    probs = softmax(h @ params.w2.T + params.b2)
    loss = nll_loss(probs, gold)

    dlogits = probs.copy()
    dlogits[np.arange(n), gold] -= 1.0
    dlogits /= n
    dw2 = dlogits.T @ h
    db2 = dlogits.sum(axis=0)
    dh = dlogits @ params.w2
    dz1 = dh * (z1 > 0)
    dw1 = dz1.T @ x
    db1 = dz1.sum(axis=0)
    return loss, MlpParams(w1=dw1, b1=db1, w2=dw2, b2=db2)


class _Adam:
    def __init__(self, params: MlpParams, config: TrainConfig):
        self.lr = config.learning_rate
        self.beta1 = config.beta1
        self.beta2 = config.beta2
        self.eps = 1e-8
        self.t = 0
        self.m = [np.zeros_like(arr) for _, arr in params.items()]
        self.v = [np.zeros_like(arr) for _, arr in params.items()]

    def step(self, params: MlpParams, grads: MlpParams) -> None:
        self.t += 1
        scale = self.lr * np.sqrt(1.0 - self.beta2 ** self.t) / (1.0 - self.beta1 ** self.t)
        for i, ((_, p), (_, g)) in enumerate(zip(params.items(), grads.items())):
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            p -= scale * self.m[i] / (np.sqrt(self.v[i]) + self.eps)


@dataclass
class ClassifierModel:
    """Trained MLP plus everything needed to use and audit it."""

    preposition: str
    params: MlpParams
    label_map: tuple[SenseId, ...]
    chosen_layer: int
    encoder_fingerprint: str
    train_config: TrainConfig
    history: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if len(set(self.label_map)) != len(self.label_map):
            raise ValidationError(
                f"duplicate senses in label map for {self.preposition!r}"
            )
        if len(self.label_map) != self.params.num_senses:
            raise ValidationError(
                f"label map size {len(self.label_map)} does not match output "
                f"dim {self.params.num_senses}"
            )

    def predict_proba(self, v: np.ndarray) -> np.ndarray:
        return forward(self.params, np.asarray(v, dtype=np.float32))

    def predict(self, v: np.ndarray) -> SenseId:
        return self.label_map[int(np.argmax(self.predict_proba(v)))]


def predict(model: ClassifierModel, v: np.ndarray) -> SenseId:
    """Highest-probability sense; argmax ties go to the lowest label index."""
    return model.predict(v)


def label_map_for(senses: list[SenseId]) -> tuple[SenseId, ...]:
    """Deterministic output ordering: attested senses, numerically sorted."""
    return tuple(sorted(set(senses), key=SenseId.sort_key))


def train(
    preposition: str,
    train_vectors: np.ndarray,
    train_senses: list[SenseId],
    dev_vectors: np.ndarray | None,
    dev_senses: list[SenseId] | None,
    config: TrainConfig,
    chosen_layer: int = -1,
    encoder_fingerprint: str = "",
) -> ClassifierModel:
    """Train one preposition's classifier on fixed-layer vectors.

    Early stopping monitors dev loss when a dev set is given (training loss
    otherwise) and the returned parameters come from the best epoch.  A
    preposition with a single attested sense short-circuits to a constant
    predictor.
    """
    train_vectors = np.atleast_2d(np.asarray(train_vectors, dtype=np.float32))
    if len(train_senses) != train_vectors.shape[0]:
        raise ValidationError(
            f"{preposition!r}: {train_vectors.shape[0]} vectors vs "
            f"{len(train_senses)} labels"
        )
    if train_vectors.shape[0] == 0:
        raise ValidationError(f"{preposition!r}: no training instances")

    d = train_vectors.shape[1]
    label_map = label_map_for(train_senses)
    index_of = {s: i for i, s in enumerate(label_map)}

    if len(label_map) == 1:
        # softmax over one output is identically 1.0; no optimization needed
        params = MlpParams(
            w1=np.zeros((config.hidden_size, d), dtype=np.float32),
            b1=np.zeros(config.hidden_size, dtype=np.float32),
            w2=np.zeros((1, config.hidden_size), dtype=np.float32),
            b2=np.zeros(1, dtype=np.float32),
        )
        return ClassifierModel(
            preposition=preposition,
            params=params,
            label_map=label_map,
            chosen_layer=chosen_layer,
            encoder_fingerprint=encoder_fingerprint,
            train_config=config,
            history={"constant": True, "epochs": 0},
        )

    gold = np.array([index_of[s] for s in train_senses], dtype=np.int64)

    monitor_x, monitor_gold, monitor_name = train_vectors, gold, "train"
    if dev_vectors is not None and dev_senses is not None and len(dev_senses) > 0:
        dev_vectors = np.atleast_2d(np.asarray(dev_vectors, dtype=np.float32))
        keep = [i for i, s in enumerate(dev_senses) if s in index_of]
        if len(keep) < len(dev_senses):
            log.debug(
                "%s: %d dev instances carry senses unseen in training; "
                "excluded from the monitored loss",
                preposition, len(dev_senses) - len(keep),
            )
        if keep:
            monitor_x = dev_vectors[keep]
            monitor_gold = np.array([index_of[dev_senses[i]] for i in keep], dtype=np.int64)
            monitor_name = "dev"

    rng = np.random.default_rng(config.seed)
    params = init_params(d, config.hidden_size, len(label_map), rng)
    optimizer = _Adam(params, config)

    n = train_vectors.shape[0]
    batch_size = min(config.batch_size, n)
    best_loss = np.inf
    best_params = params.copy()
    best_epoch = 0
    bad_epochs = 0
    losses = []

    for epoch in range(1, config.max_epochs + 1):
        perm = rng.permutation(n)
        for lo in range(0, n, batch_size):
            batch = perm[lo : lo + batch_size]
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    loss, grads = loss_and_grads(params, train_vectors[batch], gold[batch])
            except ValidationError as exc:
                raise TrainingDivergedError(
                    f"{preposition!r}: divergence at epoch {epoch} "
                    f"(lr={config.learning_rate}, batch={batch_size}): {exc}"
                ) from exc
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"{preposition!r}: non-finite loss at epoch {epoch} "
                    f"(lr={config.learning_rate}, batch={batch_size})"
                )
            optimizer.step(params, grads)

        with np.errstate(over="ignore", invalid="ignore"):
            monitor_loss = nll_loss(forward(params, monitor_x), monitor_gold)
        if not np.isfinite(monitor_loss):
            raise TrainingDivergedError(
                f"{preposition!r}: non-finite {monitor_name} loss at epoch {epoch}"
            )
        losses.append(monitor_loss)
        if monitor_loss < best_loss:
            best_loss = monitor_loss
            best_params = params.copy()
            best_epoch = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= config.patience:
                break

    return ClassifierModel(
        preposition=preposition,
        params=best_params,
        label_map=label_map,
        chosen_layer=chosen_layer,
        encoder_fingerprint=encoder_fingerprint,
        train_config=config,
        history={
            "monitor": monitor_name,
            "best_epoch": best_epoch,
            "best_loss": best_loss,
            "epochs": len(losses),
            "losses": losses,
        },
    )


# -- checkpoint files ------------------------------------------------------


def model_filename(preposition: str) -> str:
    safe = re.sub(r"[^a-z0-9_-]", "_", preposition.lower().replace(" ", "_"))
    return f"{safe}.ckpt"


def save_model(model: ClassifierModel, path: Path) -> None:
    """One file per model: a JSON header line, then raw float32 LE blocks
    in declared order (w1, b1, w2, b2)."""
    header = {
        "format_version": CHECKPOINT_VERSION,
        "preposition": model.preposition,
        "label_map": [s.raw for s in model.label_map],
        "chosen_layer": model.chosen_layer,
        "encoder_fingerprint": model.encoder_fingerprint,
        "input_dim": model.params.input_dim,
        "hidden_size": model.params.hidden_size,
        "num_senses": model.params.num_senses,
        "train_config": model.train_config.to_dict(),
    }
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        for _, arr in model.params.items():
            fh.write(arr.astype("<f4", copy=False).tobytes())


def load_model(path: Path) -> ClassifierModel:
    path = Path(path)
    with path.open("rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        if header.get("format_version") != CHECKPOINT_VERSION:
            raise StageError(f"{path}: unsupported checkpoint version")
        d = header["input_dim"]
        hidden = header["hidden_size"]
        k = header["num_senses"]
        blocks = []
        for shape in ((hidden, d), (hidden,), (k, hidden), (k,)):
            count = int(np.prod(shape))
            blob = fh.read(count * 4)
            if len(blob) != count * 4:
                raise StageError(f"{path}: truncated parameter block")
            blocks.append(np.frombuffer(blob, dtype="<f4").reshape(shape).copy())
    return ClassifierModel(
        preposition=header["preposition"],
        params=MlpParams(*blocks),
        label_map=tuple(parse_sense_id(s) for s in header["label_map"]),
        chosen_layer=header["chosen_layer"],
        encoder_fingerprint=header["encoder_fingerprint"],
        train_config=TrainConfig.from_dict(header["train_config"]),
    )


def save_model_dir(models: dict[str, ClassifierModel], out_dir: Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for prep in sorted(models):
        path = out_dir / model_filename(prep)
        save_model(models[prep], path)
        written.append(path)
    return written


def load_model_dir(model_dir: Path) -> dict[str, ClassifierModel]:
    model_dir = Path(model_dir)
    models = {}
    for path in sorted(model_dir.glob("*.ckpt")):
        model = load_model(path)
        models[model.preposition] = model
    if not models:
        raise StageError(f"no .ckpt models under {model_dir}")
    return models

"""Frozen sentence encoders behind a common adapter interface.

Each adapter turns one instance into a ``LayerMatrix``: the head token's
representation at every hidden layer (row 0 is the embedding output, rows
1..H the transformer block outputs).  Multi-piece heads are mean-pooled;
over-long inputs are truncated to a window centered on the head, which is
always retained.

Two adapters ship here: ``TransformersEncoder`` wraps any HuggingFace
checkpoint (requires the ``hf`` extra), and ``HashEncoder`` is a tiny
deterministic stand-in used for fixtures and pipeline tests.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass

import numpy as np

from .corpus import LabeledInstance
from .errors import EncodingError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EncoderHandle:
    """Identity and geometry of a loaded encoder."""

    model_id: str
    num_layers: int
    hidden_dim: int
    max_tokens: int
    fingerprint: str


@dataclass(frozen=True)
class LayerMatrix:
    """(H+1) x d matrix: one row per layer for the pooled head token."""

    instance_id: str
    values: np.ndarray
    encoder_fingerprint: str

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32)
        if values.ndim != 2:
            raise EncodingError(
                f"instance {self.instance_id!r}: layer matrix must be 2-D, "
                f"got shape {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise EncodingError(
                f"instance {self.instance_id!r}: non-finite activation in layer matrix"
            )
        object.__setattr__(self, "values", values)

    @property
    def num_layers(self) -> int:
        return self.values.shape[0] - 1

    def layer(self, j: int) -> np.ndarray:
        return self.values[j]


def center_window(n_pieces: int, head_lo: int, head_hi: int, budget: int) -> tuple[int, int]:
    """Half-open piece window of at most ``budget`` centered on the head.

    The head pieces are always inside the returned window (clipped only in
    the degenerate case of a head longer than the whole budget).
    """
    if budget <= 0:
        raise ValueError("window budget must be positive")
    if n_pieces <= budget:
        return 0, n_pieces
    center = (head_lo + head_hi + 1) / 2.0
    lo = int(round(center - budget / 2.0))
    lo = max(0, min(lo, n_pieces - budget))
    # pull the window back over the head if rounding pushed it off
    lo = min(lo, head_lo)
    lo = max(lo, head_hi + 1 - budget)
    lo = max(0, min(lo, n_pieces - budget))
    return lo, lo + budget


class Encoder:
    """Adapter interface: hand in an instance, get back a LayerMatrix."""

    handle: EncoderHandle

    def encode(self, instance: LabeledInstance) -> LayerMatrix:
        raise NotImplementedError

    def fingerprint(self) -> str:
        return self.handle.fingerprint


class HashEncoder(Encoder):
    """Deterministic toy encoder built from seeded hash vectors.

    Tokens split into fixed-width character pieces; layer 0 depends on the
    piece alone, higher layers mix in neighboring pieces so context carries
    signal.  Useful wherever a real transformer would be too heavy.
    """

    PIECE_WIDTH = 4
    CONTEXT_RADIUS = 2

    def __init__(self, num_layers: int = 4, hidden_dim: int = 32,
                 max_tokens: int = 64, seed: int = 0):
        self.num_layers = num_layers
        self.hidden_dim = hidden_dim
        self.max_tokens = max_tokens
        self.seed = seed
        self._piece_cache: dict[str, np.ndarray] = {}
        spec = f"hash-encoder|v1|layers={num_layers}|dim={hidden_dim}|" \
               f"max_tokens={max_tokens}|seed={seed}"
        digest = hashlib.sha256(spec.encode("utf-8")).hexdigest()
        self.handle = EncoderHandle(
            model_id=f"hash-{num_layers}x{hidden_dim}",
            num_layers=num_layers,
            hidden_dim=hidden_dim,
            max_tokens=max_tokens,
            fingerprint=digest,
        )

    def _piece_vector(self, piece: str) -> np.ndarray:
        vec = self._piece_cache.get(piece)
        if vec is None:
            material = f"{self.seed}|{piece}".encode("utf-8")
            stream = int.from_bytes(hashlib.blake2b(material, digest_size=8).digest(), "big")
            vec = np.random.default_rng(stream).standard_normal(
                self.hidden_dim).astype(np.float32)
            self._piece_cache[piece] = vec
        return vec

    def _pieces(self, token: str) -> list[str]:
        token = token.lower()
        w = self.PIECE_WIDTH
        return [token[i : i + w] for i in range(0, len(token), w)] or [token]

    def encode(self, instance: LabeledInstance) -> LayerMatrix:
        pieces: list[str] = []
        piece_word: list[int] = []
        for t_idx, token in enumerate(instance.tokens):
            for piece in self._pieces(token):
                pieces.append(piece)
                piece_word.append(t_idx)

        start, end = instance.head_span
        head_positions = [i for i, w in enumerate(piece_word) if start <= w <= end]
        if not head_positions:
            raise EncodingError(
                f"instance {instance.instance_id!r}: head produced no pieces"
            )

        lo, hi = center_window(len(pieces), head_positions[0], head_positions[-1],
                               self.max_tokens)
        window = pieces[lo:hi]
        head_in_window = [p - lo for p in head_positions if lo <= p < hi]
        if not head_in_window:
            raise EncodingError(
                f"instance {self.handle.model_id}/{instance.instance_id!r}: "
                f"head fell outside the truncation window"
            )

        base = np.stack([self._piece_vector(p) for p in window])
        n = len(window)
        radius = self.CONTEXT_RADIUS
        ctx = np.empty_like(base)
        for i in range(n):
            neigh = [k for k in range(max(0, i - radius), min(n, i + radius + 1)) if k != i]
            ctx[i] = base[neigh].mean(axis=0) if neigh else 0.0

        rows = np.empty((self.num_layers + 1, self.hidden_dim), dtype=np.float32)
        for j in range(self.num_layers + 1):
            mix = np.float32(j / max(self.num_layers, 1))
            layer_states = base + mix * ctx
            rows[j] = layer_states[head_in_window].mean(axis=0)
        return LayerMatrix(
            instance_id=instance.instance_id,
            values=rows,
            encoder_fingerprint=self.handle.fingerprint,
        )


class TransformersEncoder(Encoder):
    """Adapter over a HuggingFace checkpoint run in inference mode."""

    def __init__(self, model_name_or_path: str, max_tokens: int | None = None,
                 device: str = "cpu"):
        try:
            import torch
            from transformers import AutoModel, AutoTokenizer
        except ImportError as exc:
            raise EncodingError(
                "transformers/torch are required for pretrained encoders; "
                "install the 'hf' extra"
            ) from exc

        self._torch = torch
        self.tokenizer = AutoTokenizer.from_pretrained(model_name_or_path, use_fast=True)
        if not self.tokenizer.is_fast:
            raise EncodingError(
                f"{model_name_or_path}: a fast tokenizer is required for "
                f"subword-to-token alignment"
            )
        self.model = AutoModel.from_pretrained(model_name_or_path)
        self.model.eval()
        self.device = device
        self.model.to(device)

        config = self.model.config
        model_max = getattr(config, "max_position_embeddings", 512)
        if max_tokens is None:
            max_tokens = min(model_max, 512)
        n_specials = self.tokenizer.num_special_tokens_to_add(False)
        if max_tokens - n_specials <= 0:
            raise EncodingError(f"max_tokens {max_tokens} leaves no room for content")

        self.handle = EncoderHandle(
            model_id=str(model_name_or_path),
            num_layers=config.num_hidden_layers,
            hidden_dim=config.hidden_size,
            max_tokens=max_tokens,
            fingerprint=self._weights_digest(),
        )

    def _weights_digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.model.config.to_json_string().encode("utf-8"))
        for name, param in sorted(self.model.named_parameters()):
            h.update(name.encode("utf-8"))
            h.update(param.detach().cpu().numpy().astype(np.float32, copy=False).tobytes())
        return h.hexdigest()

    def encode(self, instance: LabeledInstance) -> LayerMatrix:
        enc = self.tokenizer(
            list(instance.tokens),
            is_split_into_words=True,
            add_special_tokens=True,
            return_attention_mask=False,
        )
        ids = enc["input_ids"]
        word_ids = enc.word_ids()
        start, end = instance.head_span
        head_positions = [
            i for i, w in enumerate(word_ids) if w is not None and start <= w <= end
        ]
        if not head_positions:
            raise EncodingError(
                f"instance {instance.instance_id!r}: head tokens map to zero "
                f"subword pieces under {self.handle.model_id}"
            )

        if len(ids) > self.handle.max_tokens:
            # window the content pieces around the head, keep specials in place
            special_positions = [i for i, w in enumerate(word_ids) if w is None]
            body_positions = [i for i, w in enumerate(word_ids) if w is not None]
            budget = self.handle.max_tokens - len(special_positions)
            body_index = {pos: k for k, pos in enumerate(body_positions)}
            lo, hi = center_window(
                len(body_positions),
                body_index[head_positions[0]],
                body_index[head_positions[-1]],
                budget,
            )
            keep = sorted(special_positions + body_positions[lo:hi])
            remap = {old: new for new, old in enumerate(keep)}
            ids = [ids[i] for i in keep]
            head_positions = [remap[p] for p in head_positions if p in remap]
            if not head_positions:
                raise EncodingError(
                    f"instance {instance.instance_id!r}: head fell outside the "
                    f"truncation window"
                )

        torch = self._torch
        with torch.no_grad():
            batch = torch.tensor([ids], dtype=torch.long, device=self.device)
            out = self.model(input_ids=batch, output_hidden_states=True)
        hidden_states = out.hidden_states  # (H+1) tensors of (1, L, d)

        rows = np.empty(
            (self.handle.num_layers + 1, self.handle.hidden_dim), dtype=np.float32
        )
        for j, state in enumerate(hidden_states):
            pooled = state[0, head_positions, :].mean(dim=0)
            rows[j] = pooled.cpu().numpy().astype(np.float32)
        return LayerMatrix(
            instance_id=instance.instance_id,
            values=rows,
            encoder_fingerprint=self.handle.fingerprint,
        )


def load_encoder(spec: str, max_tokens: int | None = None) -> Encoder:
    """Build an encoder from a spec string.

    ``hash`` or ``hash:layers=4,dim=32,seed=0`` selects the deterministic
    toy encoder; anything else is treated as a HuggingFace model id or a
    local checkpoint path.
    """
    if spec == "hash" or spec.startswith("hash:"):
        params = {"layers": 4, "dim": 32, "seed": 0, "max_tokens": 64}
        if ":" in spec:
            for pair in spec.split(":", 1)[1].split(","):
                if not pair:
                    continue
                key, _, value = pair.partition("=")
                if key not in params:
                    raise ValueError(f"unknown hash encoder option {key!r}")
                params[key] = int(value)
        if max_tokens is not None:
            params["max_tokens"] = max_tokens
        return HashEncoder(
            num_layers=params["layers"],
            hidden_dim=params["dim"],
            max_tokens=params["max_tokens"],
            seed=params["seed"],
        )
    return TransformersEncoder(spec, max_tokens=max_tokens)

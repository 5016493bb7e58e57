"""Tag prepositions in raw text with predicted senses.

Detection is inventory matching, not POS tagging: any token span whose
lowercase form is a known preposition lemma gets annotated (longest match
first), so non-prepositional homographs may receive a tag too.  Spans
without a trained model are emitted with an ``unmodeled`` flag.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

from .classifier import ClassifierModel
from .corpus import LabeledInstance, SenseInventory
from .encoders import Encoder
from .errors import ValidationError

log = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r"\w+(?:'\w+)?|[^\w\s]")


def tokenize(text: str) -> list[str]:
    """Split on whitespace and punctuation; punctuation marks stay as tokens."""
    return _TOKEN_RE.findall(text)


@dataclass
class TagAnnotation:
    start: int  # inclusive token index
    end: int    # inclusive token index
    preposition: str
    sense: str | None = None
    probabilities: dict[str, float] | None = None
    unmodeled: bool = False

    def to_dict(self) -> dict:
        return {
            "start": self.start,
            "end": self.end,
            "preposition": self.preposition,
            "sense": self.sense,
            "probabilities": self.probabilities,
            "unmodeled": self.unmodeled,
        }


@dataclass
class TaggingResult:
    text: str
    tokens: list[str]
    annotations: list[TagAnnotation] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "tokens": self.tokens,
            "annotations": [a.to_dict() for a in self.annotations],
        }

    def render_inline(self) -> str:
        """Human-readable line with ``token[sense]`` markers after each
        annotated span."""
        by_end = {a.end: a for a in self.annotations}
        parts = []
        for i, token in enumerate(self.tokens):
            annotation = by_end.get(i)
            if annotation is not None:
                label = "unmodeled" if annotation.unmodeled else annotation.sense
                parts.append(f"{token}[{label}]")
            else:
                parts.append(token)
        return " ".join(parts)


def _match_spans(tokens: list[str], lemmas: set[str],
                 max_span: int) -> list[tuple[int, int, str]]:
    lowered = [t.lower() for t in tokens]
    spans = []
    i = 0
    while i < len(tokens):
        matched = None
        for width in range(min(max_span, len(tokens) - i), 0, -1):
            candidate = " ".join(lowered[i : i + width])
            if candidate in lemmas:
                matched = (i, i + width - 1, candidate)
                break
        if matched:
            spans.append(matched)
            i = matched[1] + 1
        else:
            i += 1
    return spans


def tag(
    text: str,
    models: dict[str, ClassifierModel],
    inventory: SenseInventory | None,
    encoder: Encoder,
) -> TaggingResult:
    """Annotate every inventory-matched preposition span in ``text``."""
    if not text or not text.strip():
        raise ValidationError("empty text")
    tokens = tokenize(text)
    result = TaggingResult(text=text, tokens=tokens)

    lemmas = set(models)
    if inventory is not None:
        lemmas.update(inventory.prepositions)
    if not lemmas:
        raise ValidationError("no models and no inventory: nothing to match")
    max_span = max(len(lemma.split()) for lemma in lemmas)

    for start, end, lemma in _match_spans(tokens, lemmas, max_span):
        model = models.get(lemma)
        if model is None:
            result.annotations.append(TagAnnotation(
                start=start, end=end, preposition=lemma, unmodeled=True,
            ))
            continue
        instance = LabeledInstance(
            instance_id=f"tag:{start}-{end}",
            tokens=tuple(tokens),
            head_span=(start, end),
            preposition=lemma,
        )
        matrix = encoder.encode(instance)
        vector = matrix.layer(model.chosen_layer)
        probs = model.predict_proba(vector)
        sense = model.label_map[int(probs.argmax())]
        result.annotations.append(TagAnnotation(
            start=start,
            end=end,
            preposition=lemma,
            sense=sense.raw,
            probabilities={
                s.raw: float(p) for s, p in zip(model.label_map, probs)
            },
        ))
    return result

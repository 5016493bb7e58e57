"""Sense-preserving data augmentation by lexical substitution.

Variants are generated from a human-supplied lexicon of property classes
(e.g. LOCATION): a rule binds one token position to a class, and every
non-empty combination of rules, with one replacement word chosen per rule,
yields a new instance.  Replacing a word with one sharing the same property
keeps the preposition's sense; the lexicon is trusted, not verified.
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path

from .corpus import Dataset, LabeledInstance
from .errors import ValidationError

log = logging.getLogger(__name__)

DEFAULT_CAP = 16


@dataclass(frozen=True)
class SubstitutionRule:
    """One token position and the same-property words that may replace it."""

    target_token_index: int
    replacements: tuple[str, ...]
    property_class: str = ""

    def __post_init__(self):
        object.__setattr__(self, "replacements", tuple(self.replacements))
        if not self.replacements:
            raise ValidationError(
                f"rule at token {self.target_token_index} has no replacements"
            )


def _check_rules(instance: LabeledInstance, rules: list[SubstitutionRule]) -> None:
    start, end = instance.head_span
    seen = set()
    for rule in rules:
        idx = rule.target_token_index
        if not (0 <= idx < len(instance.tokens)):
            raise ValidationError(
                f"instance {instance.instance_id!r}: rule index {idx} out of range"
            )
        if start <= idx <= end:
            raise ValidationError(
                f"instance {instance.instance_id!r}: rule index {idx} touches "
                f"the head span {instance.head_span}"
            )
        if idx in seen:
            raise ValidationError(
                f"instance {instance.instance_id!r}: two rules target token {idx}"
            )
        seen.add(idx)
        original = instance.tokens[idx]
        if any(rep == original for rep in rule.replacements):
            raise ValidationError(
                f"instance {instance.instance_id!r}: replacement equals the "
                f"original token {original!r} at index {idx}"
            )


def substitute(
    instance: LabeledInstance,
    rules: list[SubstitutionRule],
    cap: int | None = DEFAULT_CAP,
) -> list[LabeledInstance]:
    """Generate one variant per combination: every non-empty subset of rules,
    one replacement chosen per rule.

    The head span and sense label are copied verbatim; variant ids derive
    from the source id with an ``::augN`` suffix.  ``cap`` bounds the output
    (None for unlimited); enumeration order is deterministic, so the cap
    keeps a stable prefix.
    """
    _check_rules(instance, rules)
    variants = []
    counter = 0
    for size in range(1, len(rules) + 1):
        for subset in itertools.combinations(range(len(rules)), size):
            pools = [rules[i].replacements for i in subset]
            for picks in itertools.product(*pools):
                if cap is not None and counter >= cap:
                    return variants
                tokens = list(instance.tokens)
                for rule_pos, word in zip(subset, picks):
                    tokens[rules[rule_pos].target_token_index] = word
                counter += 1
                variants.append(replace(
                    instance,
                    instance_id=f"{instance.instance_id}::aug{counter}",
                    tokens=tuple(tokens),
                ))
    return variants


# -- lexicon and rule binding files -----------------------------------------


def load_lexicon(path: Path) -> dict[str, list[str]]:
    """Per-line ``{"class": "LOCATION", "words": [...]}``."""
    lexicon: dict[str, list[str]] = {}
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            record = json.loads(line)
            cls = record["class"]
            if cls in lexicon:
                raise ValidationError(f"duplicate lexicon class {cls!r}")
            words = list(record["words"])
            if not words:
                raise ValidationError(f"lexicon class {cls!r} has no words")
            lexicon[cls] = words
    return lexicon


def load_rule_bindings(path: Path) -> list[dict]:
    """Per-line ``{"id": instance_id, "index": token_index, "class": name}``."""
    bindings = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                record = json.loads(line)
                bindings.append({
                    "id": record["id"],
                    "index": int(record["index"]),
                    "class": record["class"],
                })
    return bindings


def rules_for_instance(
    instance: LabeledInstance,
    bindings: list[dict],
    lexicon: dict[str, list[str]],
) -> list[SubstitutionRule]:
    rules = []
    for binding in bindings:
        if binding["id"] != instance.instance_id:
            continue
        cls = binding["class"]
        if cls not in lexicon:
            raise ValidationError(f"unknown property class {cls!r} in rules file")
        idx = binding["index"]
        if not (0 <= idx < len(instance.tokens)):
            raise ValidationError(
                f"instance {instance.instance_id!r}: rule index {idx} out of range"
            )
        original = instance.tokens[idx]
        replacements = tuple(w for w in lexicon[cls] if w != original)
        if not replacements:
            log.warning("%s: class %s offers no replacement besides %r; skipped",
                        instance.instance_id, cls, original)
            continue
        rules.append(SubstitutionRule(
            target_token_index=idx,
            replacements=replacements,
            property_class=cls,
        ))
    return rules


def augment_dataset(
    dataset: Dataset,
    bindings: list[dict],
    lexicon: dict[str, list[str]],
    cap: int | None = DEFAULT_CAP,
) -> Dataset:
    """Append generated variants to the dataset (originals kept)."""
    bound_ids = {b["id"] for b in bindings}
    out = list(dataset.instances)
    generated = 0
    for inst in dataset.instances:
        if inst.instance_id not in bound_ids:
            continue
        rules = rules_for_instance(inst, bindings, lexicon)
        if not rules:
            continue
        variants = substitute(inst, rules, cap=cap)
        out.extend(variants)
        generated += len(variants)
    log.info("augmentation generated %d variants", generated)
    return Dataset(instances=tuple(out), inventory=dataset.inventory)

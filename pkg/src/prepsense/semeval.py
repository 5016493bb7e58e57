"""Reader for SensEval/SemEval lexical-sample XML distributions.

Expected layout: a directory of per-preposition XML files, each holding
``<instance>`` elements whose ``<context>`` marks the target with a
``<head>`` element.  Gold senses come from inline ``<answer senseid=...>``
elements or from accompanying ``.key`` answer files.  Train/test membership
is inferred from file or directory names containing ``train`` or ``test``.
"""

from __future__ import annotations

import logging
import re
import xml.etree.ElementTree as ET
from pathlib import Path

from .corpus import LabeledInstance
from .errors import IngestError, SenseParseError
from .senses import SenseId, parse_sense_id

log = logging.getLogger(__name__)

_BARE_AMP = re.compile(r"&(?![A-Za-z]+;|#\d+;|#x[0-9A-Fa-f]+;)")


def _parse_xml(path: Path) -> ET.Element:
    text = path.read_text(encoding="utf-8", errors="replace")
    text = _BARE_AMP.sub("&amp;", text)
    try:
        return ET.fromstring(text)
    except ET.ParseError as exc:
        raise IngestError(f"{path}: XML parse failure ({exc})") from exc


def _split_from_path(path: Path) -> str | None:
    for part in reversed(path.parts):
        lowered = part.lower()
        if "train" in lowered:
            return "train"
        if "test" in lowered:
            return "test"
        if "dev" in lowered or "valid" in lowered:
            return "dev"
    return None


def _lemma_from_lexelt(item: str) -> str:
    # "above.p" / "according_to.p" -> preposition lemma
    lemma = item.rsplit(".", 1)[0] if "." in item else item
    return lemma.replace("_", " ").strip().lower()


def _sense_from_text(text: str) -> SenseId | None:
    """Pull the first parsable ``super(sub)`` out of an answer string.

    Answer strings may carry the lexelt or lemma as a prefix, e.g.
    ``"above 9(3)"``.
    """
    for token in text.replace(";", " ").split():
        try:
            return parse_sense_id(token)
        except SenseParseError:
            continue
    return None


def _context_tokens(context: ET.Element, instance_id: str) -> tuple[list[str], tuple[int, int]]:
    tokens: list[str] = []
    head_span: tuple[int, int] | None = None

    def extend(text: str | None):
        if text:
            tokens.extend(text.split())

    def walk(el: ET.Element):
        nonlocal head_span
        extend(el.text)
        for child in el:
            if child.tag.lower() == "head":
                start = len(tokens)
                extend("".join(child.itertext()))
                if len(tokens) == start:
                    raise IngestError(f"instance {instance_id!r}: empty <head> element")
                if head_span is not None:
                    raise IngestError(f"instance {instance_id!r}: multiple <head> elements")
                head_span = (start, len(tokens) - 1)
            else:
                walk(child)
            extend(child.tail)

    walk(context)
    if head_span is None:
        raise IngestError(f"instance {instance_id!r}: no <head> marker in context")
    return tokens, head_span


def _read_key_file(path: Path) -> list[list[str]]:
    lines = []
    for raw in path.read_text(encoding="utf-8", errors="replace").splitlines():
        fields = raw.split()
        if fields:
            lines.append(fields)
    return lines


def _key_lookup(key_lines: list[list[str]], instance_id: str) -> SenseId | None:
    for fields in key_lines:
        if instance_id in fields:
            pos = fields.index(instance_id)
            rest = " ".join(fields[pos + 1 :])
            sense = _sense_from_text(rest)
            if sense is not None:
                return sense
    return None


def read_semeval_dir(source_dir: Path) -> list[LabeledInstance]:
    """Read every XML file under ``source_dir`` into labeled instances."""
    source_dir = Path(source_dir)
    xml_files = sorted(source_dir.rglob("*.xml"))
    if not xml_files:
        raise IngestError(f"no .xml files under {source_dir}")
    key_lines: list[list[str]] = []
    for key_file in sorted(source_dir.rglob("*.key")):
        key_lines.extend(_read_key_file(key_file))

    instances: list[LabeledInstance] = []
    for path in xml_files:
        root = _parse_xml(path)
        split = _split_from_path(path.relative_to(source_dir)) or "train"
        for lexelt in root.iter("lexelt"):
            lemma_default = _lemma_from_lexelt(lexelt.get("item", ""))
            for inst_el in lexelt.iter("instance"):
                instances.append(
                    _build_instance(inst_el, lemma_default, split, key_lines, path)
                )
        # some distributions omit <lexelt> and put instances at top level
        if root.tag == "instance":
            instances.append(_build_instance(root, "", split, key_lines, path))
        elif not list(root.iter("lexelt")):
            for inst_el in root.iter("instance"):
                instances.append(_build_instance(inst_el, "", split, key_lines, path))
    return instances


def _build_instance(
    inst_el: ET.Element,
    lemma_default: str,
    split: str,
    key_lines: list[list[str]],
    path: Path,
) -> LabeledInstance:
    instance_id = inst_el.get("id")
    if not instance_id:
        raise IngestError(f"{path}: <instance> without id attribute")

    context = inst_el.find("context")
    if context is None:
        raise IngestError(f"instance {instance_id!r}: missing <context>")
    tokens, head_span = _context_tokens(context, instance_id)

    sense = None
    for answer in inst_el.iter("answer"):
        senseid = answer.get("senseid", "")
        sense = _sense_from_text(senseid)
        if sense is not None:
            break
    if sense is None:
        sense = _key_lookup(key_lines, instance_id)
    if sense is None:
        raise IngestError(
            f"instance {instance_id!r} ({path.name}): no gold sense in answers or key files"
        )

    start, end = head_span
    preposition = " ".join(tokens[start : end + 1]).lower()
    if lemma_default and preposition != lemma_default:
        log.debug(
            "instance %s: head %r differs from lexelt lemma %r; using head",
            instance_id, preposition, lemma_default,
        )
    return LabeledInstance(
        instance_id=instance_id,
        tokens=tuple(tokens),
        head_span=head_span,
        preposition=preposition,
        sense=sense,
        split=split,
    )

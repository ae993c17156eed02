"""Goal decomposition: JSON ingestion, synonym grouping and a small caption grammar."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from . import lexicon

RELATIONS = ("left", "right", "front", "behind", "near", "above", "below")
OPPOSITE = {"left": "right", "right": "left", "front": "behind", "behind": "front",
            "above": "below", "below": "above"}
ATTRIBUTE_TYPES = ("color", "shape")
MAX_RELATIONS = 6

# relation phrase -> rho; matched longest first
RELATION_PHRASES: dict[str, str] = {
    "above": "above",
    "over": "above",
    "on top of": "above",
    "on": "above",
    "sitting on": "above",
    "resting on": "above",
    "mounted above": "above",
    "hanging above": "above",
    "below": "below",
    "under": "below",
    "underneath": "below",
    "beneath": "below",
    "near": "near",
    "next to": "near",
    "beside": "near",
    "by": "near",
    "close to": "near",
    "to the left of": "left",
    "on the left of": "left",
    "left of": "left",
    "to the right of": "right",
    "on the right of": "right",
    "right of": "right",
    "in front of": "front",
    "behind": "behind",
    "in back of": "behind",
}

# canonical phrase used when rendering captions
RENDER_PHRASES = {
    "above": "above", "below": "below", "near": "near", "left": "to the left of",
    "right": "to the right of", "front": "in front of", "behind": "behind",
}

_CONNECTIVES = ("and is", "which is", "that is", "located", "and", "is", "placed", "standing", "positioned")


class GoalError(ValueError):
    """Goal document or caption could not be turned into a GoalSpec."""


class VocabularyError(GoalError):
    pass


class RelationReferenceError(GoalError):
    pass


class CardinalityError(GoalError):
    pass


class ContradictionError(GoalError):
    pass


class CaptionParseError(GoalError):
    def __init__(self, message: str, suffix: str):
        super().__init__(f"{message}: unconsumed {suffix!r}")
        self.suffix = suffix


@dataclass(frozen=True)
class AttributeQuestion:
    atype: str
    text: str
    value: str = ""  # the attribute value being asked about

    def __post_init__(self):
        if self.atype not in ATTRIBUTE_TYPES:
            raise VocabularyError(f"attribute type {self.atype!r} not in {ATTRIBUTE_TYPES}")
        if not self.text.strip():
            raise GoalError("question text is empty")


@dataclass(frozen=True)
class RelationTriple:
    ref: str
    tgt: str
    rho: str

    def __post_init__(self):
        if self.rho not in RELATIONS:
            raise VocabularyError(f"relation {self.rho!r} not in {RELATIONS}")


@dataclass(frozen=True)
class GoalSpec:
    target_category: str
    intrinsic: dict[str, str] = field(default_factory=dict)
    questions: tuple[AttributeQuestion, ...] = ()
    context_categories: frozenset[str] = frozenset()
    synonym_map: dict[str, str] = field(default_factory=dict)
    relations: tuple[RelationTriple, ...] = ()
    raw_caption: str = ""

    @property
    def prompt_categories(self) -> frozenset[str]:
        """Target plus context categories: what the detector is asked for."""
        return self.context_categories | {self.target_category}

    def relations_for(self, category: str) -> list[RelationTriple]:
        return [t for t in self.relations if category in (t.ref, t.tgt)]


def default_question(target: str, atype: str, value: str) -> AttributeQuestion:
    if atype == "color":
        text = f"Is the {target} {value} in color?"
    else:
        text = f"Is the {target} {value} in shape?"
    return AttributeQuestion(atype, text, value)


def check_relations(relations: Iterable[RelationTriple]) -> None:
    """Raise when the relation list is too long or self-contradictory."""
    rels = list(relations)
    if len(rels) > MAX_RELATIONS:
        raise CardinalityError(f"{len(rels)} relations exceed the limit of {MAX_RELATIONS}")
    conflict = _first_conflict(rels)
    if conflict is not None:
        a, b = conflict
        raise ContradictionError(f"relations {a} and {b} cannot hold together")


def _conflicts(a: RelationTriple, b: RelationTriple) -> bool:
    if a.rho == "near" or b.rho == "near":
        return False
    same_pair = (a.ref, a.tgt) == (b.ref, b.tgt)
    swapped = (a.ref, a.tgt) == (b.tgt, b.ref) and a.ref != a.tgt
    if same_pair and OPPOSITE[a.rho] == b.rho:
        return True
    return swapped and a.rho == b.rho


def _first_conflict(rels: list[RelationTriple]):
    for i, a in enumerate(rels):
        for b in rels[i + 1:]:
            if _conflicts(a, b):
                return a, b
    return None


def canonicalize_terms(phrases: Iterable[str], synonym_table: dict[str, str] | None, target: str) -> dict[str, str]:
    """Map raw phrases to canonical labels; the target's group maps to ``target`` verbatim."""
    target_norm = lexicon.normalize(target)
    target_canon = lexicon.canonical_category(target_norm, synonym_table)
    out = {}
    for phrase in phrases:
        canon = lexicon.canonical_category(phrase, synonym_table)
        if canon == target_canon or lexicon.normalize(phrase) == target_norm:
            canon = target_norm
        out[phrase] = canon
    return out


# ---------------------------------------------------------------------------
# JSON ingestion


def _string(value: Any, where: str) -> str:
    if not isinstance(value, str) or not value.strip():
        raise GoalError(f"{where}: expected a non-empty string")
    return value


def ingest_goal_json(document: dict | str | Path) -> GoalSpec:
    """Validate a pre-decomposed goal document and build a GoalSpec."""
    if isinstance(document, (str, Path)):
        document = json.loads(Path(document).read_text())
    if not isinstance(document, dict):
        raise GoalError("goal: expected an object")
    target = lexicon.normalize(_string(document.get("target"), "goal.target"))

    attrs_doc = document.get("attributes") or {}
    if not isinstance(attrs_doc, dict):
        raise GoalError("goal.attributes: expected an object")
    intrinsic = {}
    for k, v in attrs_doc.items():
        if k not in ATTRIBUTE_TYPES:
            raise VocabularyError(f"goal.attributes.{k}: only color and shape are supported")
        intrinsic[k] = _string(v, f"goal.attributes.{k}").strip()

    q_doc = document.get("questions")
    if q_doc is None:
        questions = tuple(default_question(target, k, v) for k, v in intrinsic.items())
    else:
        if not isinstance(q_doc, list):
            raise GoalError("goal.questions: expected a list")
        qs = []
        for i, q in enumerate(q_doc):
            if not isinstance(q, dict):
                raise GoalError(f"goal.questions[{i}]: expected an object")
            atype = q.get("atype")
            if atype not in intrinsic:
                raise GoalError(f"goal.questions[{i}].atype: {atype!r} has no intrinsic attribute")
            text = _string(q.get("q"), f"goal.questions[{i}].q")
            if target not in lexicon.normalize(text):
                raise GoalError(f"goal.questions[{i}].q: must mention the target {target!r}")
            qs.append(AttributeQuestion(atype, text, intrinsic[atype]))
        questions = tuple(qs)

    groups = document.get("groups") or {}
    if not isinstance(groups, dict):
        raise GoalError("goal.groups: expected an object")
    synonym_map: dict[str, str] = {target: target}
    canon_set: set[str] = set()
    target_canon = lexicon.canonical_category(target)
    for canon, terms in groups.items():
        canon_n = lexicon.normalize(_string(canon, "goal.groups key"))
        if not isinstance(terms, list):
            raise GoalError(f"goal.groups.{canon}: expected a list of terms")
        names = [lexicon.normalize(_string(t, f"goal.groups.{canon}[]")) for t in terms]
        if canon_n == target or target in names or lexicon.canonical_category(canon_n) == target_canon:
            canon_n = target
        canon_set.add(canon_n)
        synonym_map[canon_n] = canon_n
        for t in names:
            synonym_map[t] = canon_n

    r_doc = document.get("relations") or []
    if not isinstance(r_doc, list):
        raise GoalError("goal.relations: expected a list")
    if len(r_doc) > MAX_RELATIONS:
        raise CardinalityError(f"{len(r_doc)} relations exceed the limit of {MAX_RELATIONS}")
    relations = []
    for i, r in enumerate(r_doc):
        if not isinstance(r, dict):
            raise GoalError(f"goal.relations[{i}]: expected an object")
        rho = r.get("rtype")
        if rho not in RELATIONS:
            raise VocabularyError(f"goal.relations[{i}].rtype: {rho!r} not in {RELATIONS}")
        ends = []
        for key in ("ref", "tgt"):
            name = lexicon.normalize(_string(r.get(key), f"goal.relations[{i}].{key}"))
            if name not in synonym_map:
                raise RelationReferenceError(f"goal.relations[{i}].{key}: {name!r} is not a known term")
            ends.append(synonym_map[name])
        relations.append(RelationTriple(ends[0], ends[1], rho))
    check_relations(relations)

    context = frozenset(canon_set | {e for t in relations for e in (t.ref, t.tgt)}) - {target}
    caption = document.get("caption", "")
    if not isinstance(caption, str):
        raise GoalError("goal.caption: expected a string")
    return GoalSpec(target, intrinsic, questions, context, synonym_map, tuple(relations), caption)


def emit_goal_json(spec: GoalSpec) -> dict:
    groups: dict[str, list[str]] = {c: [] for c in sorted(spec.context_categories)}
    for term, canon in sorted(spec.synonym_map.items()):
        if canon == spec.target_category:
            continue
        groups.setdefault(canon, [])
        if term != canon:
            groups[canon].append(term)
    target_terms = sorted(t for t, c in spec.synonym_map.items() if c == spec.target_category and t != c)
    if target_terms:
        groups[spec.target_category] = target_terms
    doc = {
        "target": spec.target_category,
        "attributes": dict(spec.intrinsic),
        "questions": [{"atype": q.atype, "q": q.text} for q in spec.questions],
        "groups": groups,
        "relations": [{"ref": t.ref, "tgt": t.tgt, "rtype": t.rho} for t in spec.relations],
    }
    if spec.raw_caption:
        doc["caption"] = spec.raw_caption
    return doc


def save_goal(spec: GoalSpec, path: str | Path) -> None:
    Path(path).write_text(json.dumps(emit_goal_json(spec), indent=1, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# caption grammar


def _known_nouns(table: dict[str, str]) -> set[str]:
    return set(table) | set(table.values()) | set(lexicon.CATEGORIES) | set(lexicon.STOP_PHRASES)


def _match_phrase(words: list[str], i: int, phrases: Iterable[str]) -> str | None:
    best = None
    for p in phrases:
        pw = p.split()
        if words[i:i + len(pw)] == pw and (best is None or len(pw) > len(best.split())):
            best = p
    return best


def _attribute_span(words: list[str], i: int, vocab: frozenset[str]) -> tuple[list[str], int]:
    """Consume 'w', 'w and w', 'w-w' style runs of vocabulary words (materials skipped)."""
    taken: list[str] = []
    while i < len(words):
        w = words[i]
        if w in vocab or all(p in vocab for p in w.split("-") if p):
            taken.append(w)
            i += 1
        elif w == "and" and taken and i + 1 < len(words) and words[i + 1] in vocab:
            taken.append(w)
            i += 1
        elif w in lexicon.MATERIALS:
            i += 1
        else:
            break
    while taken and taken[-1] == "and":
        taken.pop()
    return taken, i


def _noun_phrase(words: list[str], i: int, nouns: set[str]) -> tuple[str | None, int]:
    """Skip modifiers, then match the longest known noun starting at the next word."""
    j = i
    while j < len(words) and words[j] in lexicon.ARTICLES:
        j += 1
    while j < len(words) and (
        words[j] in lexicon.COLORS or words[j] in lexicon.SHAPES or words[j] in lexicon.MATERIALS
    ) and _match_phrase(words, j, nouns) is None:
        j += 1
    noun = _match_phrase(words, j, nouns)
    if noun is None:
        return None, i
    return noun, j + len(noun.split())


def parse_caption(caption: str, table: dict[str, str] | None = None) -> GoalSpec:
    """Decompose a caption from the supported grammar into a GoalSpec."""
    table = lexicon.SYNONYMS if table is None else table
    nouns = _known_nouns(table)
    words = lexicon.normalize(caption.replace(",", " , ")).split()
    words = [w for w in words if w != ","]
    i = 0
    while i < len(words) and words[i] in lexicon.ARTICLES:
        i += 1
    color_words, i = _attribute_span(words, i, lexicon.COLORS)
    shape_words, i = _attribute_span(words, i, lexicon.SHAPES)
    if not color_words:
        color_words, i = _attribute_span(words, i, lexicon.COLORS)
    target_phrase = _match_phrase(words, i, nouns - lexicon.STOP_PHRASES)
    if target_phrase is None:
        raise CaptionParseError("expected a target noun", " ".join(words[i:]))
    i += len(target_phrase.split())
    target = lexicon.canonical_category(target_phrase, table)

    raw_terms = [target_phrase]
    pending: list[tuple[str, str, str]] = []  # (context phrase, rho, role)
    while i < len(words):
        conn = _match_phrase(words, i, _CONNECTIVES)
        if conn is not None:
            i += len(conn.split())
            continue
        if words[i] == "with":
            noun, j = _noun_phrase(words, i + 1, nouns)
            if noun is None:
                raise CaptionParseError("expected a noun after 'with'", " ".join(words[i:]))
            tail = _match_phrase(words, j, ("on top", "on top of it", "on it", "above it"))
            if tail is None:
                raise CaptionParseError("unsupported 'with' construct", " ".join(words[i:]))
            i = j + len(tail.split())
            # the context object sits above the target, so the target is below it
            pending.append((noun, "below", "with"))
            continue
        phrase = _match_phrase(words, i, RELATION_PHRASES)
        if phrase is None:
            raise CaptionParseError("expected a relation phrase", " ".join(words[i:]))
        noun, j = _noun_phrase(words, i + len(phrase.split()), nouns)
        if noun is None:
            raise CaptionParseError("expected a context noun", " ".join(words[i + len(phrase.split()):]))
        i = j
        pending.append((noun, RELATION_PHRASES[phrase], "rel"))

    relations: list[RelationTriple] = []
    contexts: set[str] = set()
    for noun, rho, _ in pending:
        if noun in lexicon.STOP_PHRASES:
            continue
        raw_terms.append(noun)
    synonym_map = canonicalize_terms(raw_terms, table, target)
    for noun, rho, _ in pending:
        if noun in lexicon.STOP_PHRASES:
            continue
        ref = synonym_map[noun]
        if ref != target:
            contexts.add(ref)
        triple = RelationTriple(ref, target, rho)
        if triple in relations or len(relations) >= MAX_RELATIONS:
            continue
        if any(_conflicts(t, triple) for t in relations):
            continue  # contradictory relations are skipped, first one wins
        relations.append(triple)

    intrinsic = {}
    if color_words:
        intrinsic["color"] = " ".join(color_words)
    if shape_words:
        intrinsic["shape"] = " ".join(shape_words)
    questions = tuple(default_question(target, k, v) for k, v in intrinsic.items())
    syn = {lexicon.normalize(k): v for k, v in synonym_map.items()}
    syn[target] = target
    for c in contexts:
        syn.setdefault(c, c)
    return GoalSpec(target, intrinsic, questions, frozenset(contexts), syn, tuple(relations), caption)


def render_caption(spec: GoalSpec) -> str:
    """Inverse templater: a caption inside the grammar that parses back to ``spec``'s relations."""
    mods = [spec.intrinsic[k] for k in ATTRIBUTE_TYPES if k in spec.intrinsic]
    parts = ["a", *mods, spec.target_category]
    for t in spec.relations:
        if t.tgt != spec.target_category:
            raise GoalError(f"relation {t} does not end at the target; not expressible as a caption")
        parts += [RENDER_PHRASES[t.rho], "the", t.ref]
    return " ".join(parts)


def decompose_instancenav(target: str, intrinsic_text: str, context_text: str,
                          table: dict[str, str] | None = None) -> GoalSpec:
    """Separate intrinsic/context description mode.

    Attribute words are pulled from ``intrinsic_text``; ``context_text`` is
    scanned for relation phrases followed by known nouns, and any other known
    noun becomes a context category without a relation.
    """
    table = lexicon.SYNONYMS if table is None else table
    nouns = _known_nouns(table) - lexicon.STOP_PHRASES
    target_n = lexicon.canonical_category(target, table)
    intrinsic = {}
    iw = re.findall(r"[a-z\-]+", intrinsic_text.lower())
    colors = [w for w in iw if w in lexicon.COLORS]
    shapes = [w for w in iw if w in lexicon.SHAPES]
    if colors:
        intrinsic["color"] = " and ".join(dict.fromkeys(colors))
    if shapes:
        intrinsic["shape"] = " and ".join(dict.fromkeys(shapes))

    words = lexicon.normalize(re.sub(r"[.,;]", " ", context_text)).split()
    found: list[tuple[str, str | None]] = []
    i = 0
    while i < len(words):
        phrase = _match_phrase(words, i, RELATION_PHRASES)
        if phrase is not None:
            noun, j = _noun_phrase(words, i + len(phrase.split()), nouns)
            if noun is not None:
                found.append((noun, RELATION_PHRASES[phrase]))
                i = j
                continue
        noun = _match_phrase(words, i, nouns)
        if noun is not None:
            found.append((noun, None))
            i += len(noun.split())
            continue
        i += 1
    synonym_map = canonicalize_terms([n for n, _ in found], table, target_n)
    contexts = {synonym_map[n] for n, _ in found} - {target_n}
    relations: list[RelationTriple] = []
    for noun, rho in found:
        ref = synonym_map[noun]
        if rho is None or ref == target_n:
            continue
        t = RelationTriple(ref, target_n, rho)
        if t in relations or len(relations) >= MAX_RELATIONS or any(_conflicts(r, t) for r in relations):
            continue
        relations.append(t)
    syn = {lexicon.normalize(k): v for k, v in synonym_map.items()}
    syn[target_n] = target_n
    for c in contexts:
        syn.setdefault(c, c)
    questions = tuple(default_question(target_n, k, v) for k, v in intrinsic.items())
    caption = f"{intrinsic_text} | {context_text}"
    return GoalSpec(target_n, intrinsic, questions, frozenset(contexts), syn, tuple(relations), caption)

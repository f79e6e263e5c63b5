"""Shared-part label grammar.

Objects and SCPs (shared compositional parts) each reserve index 0 for
background. An SCP carries one semantic meaning (head, leg, ...). The set of
(object, SCP) connections decides which combinations are admissible, and an
admissible pair maps back to a full part label such as ``horse-leg``.

Grammar documents are YAML (JSON is accepted too)::

    objects: [horse, cow]
    meanings: [head, body, leg, tail]
    scps:
      - {name: head(h), meaning: head}
      - {name: leg1, meaning: leg}
    connections:
      - [horse, head(h)]
      - [horse, leg1]
      - [cow, leg1]

Background is implicit: the loader prepends it to ``objects`` and ``scps``
and adds the (background, background) connection.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import NamedTuple

import yaml

BACKGROUND = "background"
_DOC_KEYS = {"objects", "meanings", "scps", "connections"}
_SCP_KEYS = {"name", "meaning"}


class GrammarError(ValueError):
    pass


class JointLabel(NamedTuple):
    object: int
    scp: int


@dataclass(frozen=True)
class LabelGrammar:
    object_labels: tuple[str, ...]
    scp_labels: tuple[str, ...]
    semantic_meanings: tuple[str, ...]
    # meaning_of[0] is None: the background SCP has no meaning.
    meaning_of: tuple[int | None, ...]
    connections: frozenset[JointLabel]
    _by_object: dict[int, tuple[int, ...]] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        _validate(self)
        by_object: dict[int, list[int]] = {o: [] for o in range(len(self.object_labels))}
        for o, s in sorted(self.connections):
            by_object[o].append(s)
        object.__setattr__(self, "_by_object", {o: tuple(v) for o, v in by_object.items()})

    @property
    def num_objects(self) -> int:
        """Object classes, background excluded."""
        return len(self.object_labels) - 1

    @property
    def num_scps(self) -> int:
        return len(self.scp_labels) - 1

    @property
    def num_meanings(self) -> int:
        return len(self.semantic_meanings)

    @property
    def foreground_connections(self) -> frozenset[JointLabel]:
        return frozenset(c for c in self.connections if c != (0, 0))

    def scps_of(self, obj: int) -> tuple[int, ...]:
        return self._by_object[obj]

    def consistent_pairs(self, include_background: bool = False) -> list[JointLabel]:
        """All admissible pairs in (object, scp) lexicographic order."""
        pairs = sorted(self.connections)
        if not include_background:
            pairs = [p for p in pairs if p != (0, 0)]
        return [JointLabel(*p) for p in pairs]

    # full part-label space: background plus every object x meaning
    @property
    def num_part_labels(self) -> int:
        return 1 + self.num_objects * self.num_meanings

    @property
    def part_labels(self) -> tuple[str, ...]:
        names = [BACKGROUND]
        for obj in self.object_labels[1:]:
            names.extend(f"{obj}-{m}" for m in self.semantic_meanings)
        return tuple(names)

    def object_index(self, name: str) -> int:
        try:
            return self.object_labels.index(name)
        except ValueError:
            raise GrammarError(f"unknown object label {name!r}") from None

    def scp_index(self, name: str) -> int:
        try:
            return self.scp_labels.index(name)
        except ValueError:
            raise GrammarError(f"unknown SCP label {name!r}") from None

    def part_index(self, obj: int, scp: int) -> int:
        """Index of the recovered part label in :attr:`part_labels`."""
        if not is_consistent(self, obj, scp):
            raise GrammarError(
                f"inconsistent pair ({self.object_labels[obj]}, {self.scp_labels[scp]})")
        if obj == 0:
            return 0
        meaning = self.meaning_of[scp]
        assert meaning is not None
        return 1 + (obj - 1) * self.num_meanings + meaning

    def part_table(self) -> "list[list[int]]":
        """``table[o][s]`` = part index, or -1 for inconsistent pairs."""
        table = [[-1] * len(self.scp_labels) for _ in self.object_labels]
        for o, s in self.connections:
            table[o][s] = self.part_index(o, s)
        return table


def _validate(g: LabelGrammar) -> None:
    for kind, names in (("object", g.object_labels), ("SCP", g.scp_labels),
                        ("meaning", g.semantic_meanings)):
        seen: set[str] = set()
        for name in names:
            if name in seen:
                raise GrammarError(f"duplicate {kind} label {name!r}")
            seen.add(name)
    if g.object_labels[:1] != (BACKGROUND,) or g.scp_labels[:1] != (BACKGROUND,):
        raise GrammarError("index 0 of objects and scps must be background")
    if BACKGROUND in g.semantic_meanings:
        raise GrammarError("'background' is not a semantic meaning")
    if len(g.meaning_of) != len(g.scp_labels):
        raise GrammarError("meaning_of must have one entry per SCP")
    if g.meaning_of[0] is not None:
        raise GrammarError("background SCP must not carry a meaning")
    for s, m in enumerate(g.meaning_of[1:], start=1):
        if m is None or not 0 <= m < len(g.semantic_meanings):
            raise GrammarError(f"SCP {g.scp_labels[s]!r} has invalid meaning index {m!r}")

    n_obj, n_scp = len(g.object_labels), len(g.scp_labels)
    for o, s in g.connections:
        if not (0 <= o < n_obj and 0 <= s < n_scp):
            raise GrammarError(f"connection ({o}, {s}) out of range")
        if (o == 0) != (s == 0):
            raise GrammarError(
                f"connection ({g.object_labels[o]}, {g.scp_labels[s]}) mixes background "
                "with a foreground label")
    if (0, 0) not in g.connections:
        raise GrammarError("missing (background, background) connection")

    for o in range(1, n_obj):
        scps = [s for oo, s in g.connections if oo == o]
        if not scps:
            raise GrammarError(f"object {g.object_labels[o]!r} has no connected SCP")
        seen_meaning: dict[int, int] = {}
        for s in sorted(scps):
            m = g.meaning_of[s]
            assert m is not None
            if m in seen_meaning:
                raise GrammarError(
                    f"object {g.object_labels[o]!r} connects two {g.semantic_meanings[m]!r} SCPs: "
                    f"{g.scp_labels[seen_meaning[m]]!r} and {g.scp_labels[s]!r}")
            seen_meaning[m] = s
    for s in range(1, n_scp):
        if not any(ss == s for _, ss in g.connections):
            raise GrammarError(f"SCP {g.scp_labels[s]!r} is not connected to any object")


def grammar_from_dict(doc: dict) -> LabelGrammar:
    if not isinstance(doc, dict):
        raise GrammarError("grammar document must be a mapping")
    unknown = set(doc) - _DOC_KEYS
    if unknown:
        raise GrammarError(f"unknown keys in grammar document: {sorted(unknown)}")
    missing = _DOC_KEYS - set(doc)
    if missing:
        raise GrammarError(f"grammar document is missing {sorted(missing)}")

    objects = [str(o) for o in doc["objects"]]
    meanings = [str(m) for m in doc["meanings"]]
    if BACKGROUND in objects:
        raise GrammarError("'background' is implicit and must not be listed in objects")

    scp_names: list[str] = []
    meaning_of: list[int | None] = [None]
    for entry in doc["scps"]:
        if not isinstance(entry, dict):
            raise GrammarError(f"SCP entry must be a mapping: {entry!r}")
        bad = set(entry) - _SCP_KEYS
        if bad or set(entry) != _SCP_KEYS:
            raise GrammarError(f"SCP entry {entry!r} must have exactly the keys name, meaning")
        name, meaning = str(entry["name"]), str(entry["meaning"])
        if name == BACKGROUND:
            raise GrammarError("'background' is implicit and must not be listed in scps")
        if meaning not in meanings:
            raise GrammarError(f"SCP {name!r} refers to unknown meaning {meaning!r}")
        scp_names.append(name)
        meaning_of.append(meanings.index(meaning))

    for kind, names in (("object", objects), ("meaning", meanings), ("SCP", scp_names)):
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise GrammarError(f"duplicate {kind} label {dupes[0]!r}")

    object_labels = (BACKGROUND, *objects)
    scp_labels = (BACKGROUND, *scp_names)
    connections = {JointLabel(0, 0)}
    for entry in doc["connections"]:
        if not isinstance(entry, (list, tuple)) or len(entry) != 2:
            raise GrammarError(f"connection must be an [object, scp] pair: {entry!r}")
        o_name, s_name = map(str, entry)
        if o_name not in object_labels:
            raise GrammarError(f"connection {entry!r} references unknown object {o_name!r}")
        if s_name not in scp_labels:
            raise GrammarError(f"connection {entry!r} references unknown SCP {s_name!r}")
        pair = JointLabel(object_labels.index(o_name), scp_labels.index(s_name))
        if pair in connections:
            raise GrammarError(f"duplicate connection {entry!r}")
        connections.add(pair)

    return LabelGrammar(
        object_labels=object_labels,
        scp_labels=scp_labels,
        semantic_meanings=tuple(meanings),
        meaning_of=tuple(meaning_of),
        connections=frozenset(connections),
    )


def load_grammar(text: str) -> LabelGrammar:
    """Parse a grammar document (YAML or JSON text)."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise GrammarError(f"malformed grammar document: {exc}") from exc
    return grammar_from_dict(doc)


def load_grammar_file(path: str | Path) -> LabelGrammar:
    return load_grammar(Path(path).read_text())


def builtin_grammar(name: str) -> LabelGrammar:
    """``horse_cow`` or ``quadrupeds``."""
    text = resources.files("scpseg.grammars").joinpath(f"{name}.yaml").read_text()
    return load_grammar(text)


def grammar_to_dict(g: LabelGrammar) -> dict:
    return {
        "objects": list(g.object_labels[1:]),
        "meanings": list(g.semantic_meanings),
        "scps": [{"name": g.scp_labels[s], "meaning": g.semantic_meanings[g.meaning_of[s]]}
                 for s in range(1, len(g.scp_labels))],
        "connections": [[g.object_labels[o], g.scp_labels[s]]
                        for o, s in g.consistent_pairs()],
    }


def is_consistent(g: LabelGrammar, obj: int, scp: int) -> bool:
    if not 0 <= obj < len(g.object_labels):
        raise IndexError(f"object index {obj} out of range")
    if not 0 <= scp < len(g.scp_labels):
        raise IndexError(f"SCP index {scp} out of range")
    return (obj, scp) in g.connections


def recover_part_label(g: LabelGrammar, obj: int, scp: int) -> str:
    return g.part_labels[g.part_index(obj, scp)]

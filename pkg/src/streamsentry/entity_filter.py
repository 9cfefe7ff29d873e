"""Main-entity screening and redundant-caption filtering.

Entity occurrences are counted lexically (case-insensitive whole-word
match over an alias table) across a rolling horizon of recent captions.
High-frequency entities ahead of the first frequency cliff form the main
set S; every other mentioned entity is redundant (D), and captions that
mention only redundant entities are dropped.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .core import Caption, StreamSentryError

DEFAULT_TAU = 3

PREFIX_CUT = "prefix_cut"
LITERAL = "literal"
SCREEN_RULES = (PREFIX_CUT, LITERAL)


class VocabularyError(StreamSentryError):
    """Raised for malformed entity vocabularies."""


@dataclass(frozen=True)
class EntityVocabulary:
    """Ordered entity list; each entity may carry pipe-separated aliases.

    The first alias is the canonical entity id. Matching is
    case-insensitive on whole words, so "man" never matches "manual".
    """

    entities: tuple[tuple[str, ...], ...]
    _patterns: tuple[re.Pattern, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        seen: set[str] = set()
        patterns = []
        for aliases in self.entities:
            if not aliases:
                raise VocabularyError("entity with no aliases")
            for alias in aliases:
                a = alias.strip().lower()
                if not a:
                    raise VocabularyError("empty entity string")
                if a in seen:
                    raise VocabularyError(f"duplicate entity/alias {a!r}")
                seen.add(a)
            alternation = "|".join(re.escape(a.strip()) for a in aliases)
            patterns.append(re.compile(rf"\b(?:{alternation})\b", re.IGNORECASE))
        object.__setattr__(self, "_patterns", tuple(patterns))

    @classmethod
    def from_lines(cls, lines: Iterable[str]) -> "EntityVocabulary":
        entities = []
        for line in lines:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            entities.append(tuple(part.strip() for part in line.split("|")))
        return cls(entities=tuple(entities))

    @classmethod
    def load(cls, path) -> "EntityVocabulary":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_lines(fh)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(aliases[0] for aliases in self.entities)

    def order_index(self, name: str) -> int:
        return self.names.index(name)

    def count_text(self, text: str) -> dict[str, int]:
        """Occurrences of each entity (alias-folded) in one text."""
        return {
            aliases[0]: len(pattern.findall(text))
            for aliases, pattern in zip(self.entities, self._patterns)
        }

    def mentions(self, text: str) -> tuple[str, ...]:
        """Entity ids present at least once, in vocabulary order."""
        return tuple(
            aliases[0]
            for aliases, pattern in zip(self.entities, self._patterns)
            if pattern.search(text)
        )


@dataclass(frozen=True)
class FrequencyTable:
    """Entity counts over the last ``horizon`` captions."""

    counts: dict[str, int]
    horizon: int

    def nonzero(self) -> dict[str, int]:
        return {e: n for e, n in self.counts.items() if n > 0}


@dataclass(frozen=True)
class ScreenResult:
    main_entities: frozenset[str]
    redundant_entities: frozenset[str]
    sorted_counts: tuple[tuple[str, int], ...]


def count_entities(captions: Sequence[Caption], vocab: EntityVocabulary) -> FrequencyTable:
    """Total occurrences per entity across the captions (all repeats count)."""
    totals = {name: 0 for name in vocab.names}
    for caption in captions:
        for name, n in vocab.count_text(caption.text).items():
            totals[name] += n
    return FrequencyTable(counts=totals, horizon=len(captions))


def screen_main_entities(
    freq: FrequencyTable,
    vocab: EntityVocabulary,
    tau: int = DEFAULT_TAU,
    rule: str = PREFIX_CUT,
) -> ScreenResult:
    """Split mentioned entities into the main set S and redundant set D.

    Nonzero counts are sorted descending (ties by vocabulary order) as
    N_1 >= ... >= N_k. Under ``prefix_cut`` the main set is the prefix
    ending before the first cliff j >= 2 with N_{j-1} > 2*N_j, restricted
    to entries with N_i > tau. Under ``literal`` an entity is main iff
    N_i > tau and its sorted predecessor has N_{i-1} > 2*N_i. D is always
    the mentioned entities outside S.
    """
    if rule not in SCREEN_RULES:
        raise ValueError(f"unknown screen rule {rule!r}, expected one of {SCREEN_RULES}")
    ordered = sorted(
        freq.nonzero().items(), key=lambda kv: (-kv[1], vocab.order_index(kv[0]))
    )
    counts = [n for _, n in ordered]
    k = len(ordered)

    main: set[str] = set()
    if rule == PREFIX_CUT:
        cut = k
        for j in range(1, k):  # j is the 0-based index of the post-cliff entry
            if counts[j - 1] > 2 * counts[j]:
                cut = j
                break
        main = {e for e, n in ordered[:cut] if n > tau}
    else:
        for j in range(1, k):
            if counts[j] > tau and counts[j - 1] > 2 * counts[j]:
                main.add(ordered[j][0])

    redundant = {e for e, _ in ordered} - main
    return ScreenResult(
        main_entities=frozenset(main),
        redundant_entities=frozenset(redundant),
        sorted_counts=tuple(ordered),
    )


def filter_captions(captions: Sequence[Caption], screen: ScreenResult) -> list[Caption]:
    """Drop captions whose vocabulary mentions are all redundant.

    A caption survives if it mentions any main entity or mentions no
    vocabulary entity at all; relative order is preserved. Uses the
    ``entities`` field stamped on each caption.
    """
    kept = []
    for caption in captions:
        mentioned = set(caption.entities)
        if mentioned and mentioned <= screen.redundant_entities:
            continue
        kept.append(caption)
    return kept

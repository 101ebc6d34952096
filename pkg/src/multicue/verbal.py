"""Transcript-level analysis: insult keywords, formality rules, complexity.

Works on German STT output. The formality and complexity transformers of a
full deployment are represented by a provider interface; this module ships
the rule-based baselines only.
"""

from __future__ import annotations

import logging
import re
import unicodedata
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Protocol

import numpy as np

log = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r"[\w]+(?:['’-][\w]+)*", re.UNICODE)

INFORMAL_PRONOUNS = {"du", "dich", "dir"}
INFORMAL_PREFIXES = ("dein",)
FORMAL_PRONOUNS = {"Sie", "Ihnen", "Ihrer", "Ihre", "Ihr", "Ihrem", "Ihren"}

# Subordinating conjunctions and relative markers counted as clause markers.
CLAUSE_MARKERS = {
    "dass", "weil", "obwohl", "wenn", "als", "während", "damit", "ob",
    "sodass", "falls", "bevor", "nachdem", "seitdem", "indem", "sofern",
    "solange", "sobald", "wohingegen", "welcher", "welche", "welches",
}

RARE_RANK_THRESHOLD = 256


@dataclass(frozen=True)
class Utterance:
    text: str
    speaker: str
    t0: float = 0.0
    t1: float = 0.0

    def __post_init__(self):
        if self.t1 < self.t0:
            raise ValueError("utterance must have t1 >= t0")


@dataclass
class InsultHit:
    token: str
    token_index: int
    char_offset: int


@dataclass
class FormalityVerdict:
    label: str  # formal | informal | neutral
    evidence: list[str]


@dataclass
class ComplexityScore:
    score: float
    features: dict[str, float]


@dataclass
class ComplexityWeights:
    """Per-feature weights applied to standardized feature values.

    Default 0.75 per feature: +/-2 sigma on all four features then spans
    the full 1..7 scale (4 * 0.75 * 2 = 6).
    """

    sentence_length_words: float = 0.75
    mean_word_length_chars: float = 0.75
    clause_marker_count: float = 0.75
    rare_word_ratio: float = 0.75


class TextLabelProvider(Protocol):
    """External model slot: maps utterance text to (label, score)."""

    def __call__(self, text: str) -> tuple[str, float]: ...


def tokenize(text: str) -> list[tuple[str, int]]:
    """(token, char_offset) pairs."""
    return [(m.group(0), m.start()) for m in _TOKEN_RE.finditer(text)]


def fold(token: str) -> str:
    """Case-fold and strip diacritics for lexicon matching."""
    decomposed = unicodedata.normalize("NFKD", token.casefold())
    return "".join(ch for ch in decomposed if not unicodedata.combining(ch))


def load_lexicon(path=None) -> frozenset[str]:
    """UTF-8 lexicon, one term per line, '#' comments. Defaults to the
    bundled demo list."""
    if path is None:
        text = resources.files("multicue.data").joinpath(
            "insult_lexicon_de.txt").read_text(encoding="utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    terms = set()
    for line in text.splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            terms.add(fold(line))
    return frozenset(terms)


def load_frequency_list(path=None) -> dict[str, int]:
    """TSV `token<TAB>rank`. Defaults to the bundled German list."""
    if path is None:
        text = resources.files("multicue.data").joinpath(
            "word_frequency_de.tsv").read_text(encoding="utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    ranks = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        token, rank = line.split("\t")
        ranks[fold(token)] = int(rank)
    return ranks


def detect_insults(utterance: Utterance, lexicon: frozenset[str]) -> list[InsultHit]:
    """Whole-word lexicon matches after case folding and diacritic removal."""
    hits = []
    for idx, (token, offset) in enumerate(tokenize(utterance.text)):
        if fold(token) in lexicon:
            hits.append(InsultHit(token=token, token_index=idx + 1,
                                  char_offset=offset))
    return hits


def classify_formality(utterance: Utterance) -> FormalityVerdict:
    """Rule baseline for German address formality.

    Informal: any of du/dich/dir/dein* as standalone tokens, any casing.
    Formal: capitalized Sie-family pronouns that are not sentence-initial
    (sentence-initial capitalization is ambiguous with 3rd person).
    Informal wins when both occur.
    """
    tokens = tokenize(utterance.text)
    informal, formal = [], []
    sentence_start = {0}
    for i, (token, offset) in enumerate(tokens):
        if i + 1 < len(tokens):
            between = utterance.text[offset + len(token): tokens[i + 1][1]]
            if any(ch in ".!?" for ch in between):
                sentence_start.add(i + 1)
    for i, (token, _offset) in enumerate(tokens):
        low = token.casefold()
        if low in INFORMAL_PRONOUNS or any(low.startswith(p) and len(low) <= len(p) + 4
                                           for p in INFORMAL_PREFIXES):
            informal.append(token)
        elif token in FORMAL_PRONOUNS and i not in sentence_start:
            formal.append(token)
    if informal:
        return FormalityVerdict("informal", informal)
    if formal:
        return FormalityVerdict("formal", formal)
    return FormalityVerdict("neutral", [])


def complexity_features(utterance: Utterance,
                        frequency_list: dict[str, int]) -> dict[str, float]:
    tokens = [t for t, _ in tokenize(utterance.text)]
    if not tokens:
        raise ValueError("empty utterance")
    lengths = [len(t) for t in tokens]
    rare = 0
    for t in tokens:
        rank = frequency_list.get(fold(t))
        if rank is None or rank > RARE_RANK_THRESHOLD:
            rare += 1
    clause = sum(1 for t in tokens if t.casefold() in CLAUSE_MARKERS)
    return {
        "sentence_length_words": float(len(tokens)),
        "mean_word_length_chars": float(np.mean(lengths)),
        "clause_marker_count": float(clause),
        "rare_word_ratio": rare / len(tokens),
    }


# Fixture corpus used to standardize complexity features. Plain everyday
# German spanning short commands to long nested sentences.
_CALIBRATION_CORPUS = [
    "Halt.",
    "Bleiben Sie stehen.",
    "Kommen Sie bitte her.",
    "Was ist hier los?",
    "Zeigen Sie mir bitte Ihren Ausweis.",
    "Wir müssen kurz mit Ihnen sprechen.",
    "Bitte bleiben Sie ruhig und atmen Sie langsam.",
    "Können Sie mir erklären, was hier passiert ist?",
    "Ich verstehe, dass Sie aufgebracht sind, aber wir klären das gemeinsam.",
    "Wenn Sie mir sagen, was passiert ist, können wir Ihnen besser helfen.",
    "Der Zeuge, der den Vorfall beobachtet hat, wartet dort drüben auf uns.",
    "Obwohl die Situation angespannt war, konnten die Beteiligten das "
    "Missverständnis klären, bevor es eskalierte.",
    "Die Auswertung der widersprüchlichen Zeugenaussagen erfordert eine "
    "systematische Dokumentation sämtlicher Beobachtungen.",
    "Falls die betreffende Person die Anordnung weiterhin ignoriert, müssen "
    "wir prüfen, ob zusätzliche deeskalierende Maßnahmen erforderlich sind, "
    "damit niemand zu Schaden kommt.",
]


def _calibration_stats(frequency_list: dict[str, int]) -> dict[str, tuple[float, float]]:
    rows = [complexity_features(Utterance(s, "calibration"), frequency_list)
            for s in _CALIBRATION_CORPUS]
    stats = {}
    for key in rows[0]:
        vals = np.array([r[key] for r in rows])
        stats[key] = (float(vals.mean()), float(max(vals.std(), 1e-9)))
    return stats


_stats_cache: dict[int, dict[str, tuple[float, float]]] = {}


def complexity_score(utterance: Utterance, frequency_list: dict[str, int],
                     weights: ComplexityWeights | None = None) -> ComplexityScore:
    """Linguistic complexity on a 1 (least) .. 7 (most) scale.

    score = clamp(1 + sum_k w_k * z_k, 1, 7) where z_k are the features
    standardized against the bundled calibration corpus.
    """
    weights = weights or ComplexityWeights()
    feats = complexity_features(utterance, frequency_list)
    key = id(frequency_list)
    if key not in _stats_cache:
        _stats_cache[key] = _calibration_stats(frequency_list)
    stats = _stats_cache[key]
    w = {
        "sentence_length_words": weights.sentence_length_words,
        "mean_word_length_chars": weights.mean_word_length_chars,
        "clause_marker_count": weights.clause_marker_count,
        "rare_word_ratio": weights.rare_word_ratio,
    }
    raw = 1.0
    for k, value in feats.items():
        mean, std = stats[k]
        raw += w[k] * (value - mean) / std
    return ComplexityScore(score=float(np.clip(raw, 1.0, 7.0)), features=feats)

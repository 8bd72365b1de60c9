"""Text features: lexicon scores appended to word vectors and a small
VADER-style rule scorer for whole segments."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ParseError

# A handful of entries so the scorer is usable without a lexicon file; real
# runs load a valence lexicon with load_valence().
DEFAULT_VALENCE = {
    "good": 1.9, "great": 3.1, "love": 3.2, "like": 2.0, "nice": 1.8, "happy": 2.7,
    "best": 3.2, "awesome": 3.1, "fun": 2.3, "enjoy": 2.2, "excellent": 2.7,
    "bad": -2.5, "terrible": -2.1, "hate": -2.7, "awful": -2.0, "sad": -2.1,
    "worst": -3.1, "boring": -1.3, "angry": -2.3, "poor": -2.1, "horrible": -2.5,
}
DEFAULT_BOOSTERS = frozenset({
    "very", "really", "extremely", "so", "incredibly", "totally", "absolutely",
    "completely", "highly", "especially", "super", "quite",
})
DEFAULT_NEGATORS = frozenset({
    "not", "no", "never", "none", "nobody", "nothing", "neither", "nor",
    "cannot", "without", "isnt", "dont", "doesnt", "didnt", "wasnt", "wont",
})


@dataclass
class Lexicon:
    entries: dict  # word -> np.ndarray of length K
    name: str = "lexicon"

    def __post_init__(self):
        lengths = {len(v) for v in self.entries.values()}
        if len(lengths) > 1:
            raise DataError(f"lexicon {self.name!r} has vectors of lengths {sorted(lengths)}")
        self.entries = {w: np.asarray(v, dtype=np.float64) for w, v in self.entries.items()}
        for w, v in self.entries.items():
            if not np.all(np.isfinite(v)):
                raise DataError(f"lexicon {self.name!r}: non-finite score for {w!r}")
        self._k = lengths.pop() if lengths else 0

    @property
    def k(self):
        return self._k

    def lookup(self, word):
        return self.entries.get(word, self.entries.get(word.lower()))


@dataclass
class RuleScorerConfig:
    valence: dict = field(default_factory=lambda: dict(DEFAULT_VALENCE))
    booster_increment: float = 0.293
    negation_factor: float = -0.74
    exclamation_boost: float = 0.292
    exclamation_cap: int = 3
    caps_boost: float = 0.733
    norm_alpha: float = 15.0
    boosters: frozenset = DEFAULT_BOOSTERS
    negators: frozenset = DEFAULT_NEGATORS

    def __post_init__(self):
        if not self.norm_alpha > 0:
            raise ValueError("norm_alpha must be positive")
        if self.exclamation_cap < 0:
            raise ValueError("exclamation_cap must be non-negative")


# -- file formats ------------------------------------------------------------

def _read_lines(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read().splitlines()
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e


def _parse_vector_file(path):
    out = {}
    for lineno, line in enumerate(_read_lines(path), 1):
        if not line.strip():
            continue
        word, sep, rest = line.partition("\t")
        if not sep or not word:
            raise ParseError("expected word<TAB>s1,s2,...", lineno)
        try:
            out[word] = np.array([float(x) for x in rest.split(",")], dtype=np.float64)
        except ValueError:
            raise ParseError(f"non-numeric score for {word!r}", lineno) from None
    return out


def minmax_normalize(entries):
    """Rescale each category (column) to [-1, 1]; constant columns map to 0."""
    if not entries:
        return {}
    words = list(entries)
    mat = np.array([entries[w] for w in words], dtype=np.float64)
    lo, hi = mat.min(axis=0), mat.max(axis=0)
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    scaled = np.where(span > 0, 2.0 * (mat - lo) / safe - 1.0, 0.0)
    return {w: scaled[i] for i, w in enumerate(words)}


def load_lexicon(path, name=None, normalize=True) -> Lexicon:
    entries = _parse_vector_file(path)
    if normalize:
        entries = minmax_normalize(entries)
    return Lexicon(entries, name or str(path))


def load_word_vectors(path):
    return _parse_vector_file(path)


def load_valence(path):
    out = {}
    for lineno, line in enumerate(_read_lines(path), 1):
        if not line.strip():
            continue
        word, sep, score = line.partition("\t")
        if not sep or not word:
            raise ParseError("expected word<TAB>score", lineno)
        try:
            out[word.lower()] = float(score)
        except ValueError:
            raise ParseError(f"non-numeric valence for {word!r}", lineno) from None
    return out


def load_word_list(path):
    return frozenset(w.strip().lower() for w in _read_lines(path) if w.strip())


# -- features ----------------------------------------------------------------

def lexicon_embed(word, base, lex: Lexicon):
    """``base`` followed by the word's lexicon scores (zeros when absent)."""
    base = np.asarray(base, dtype=np.float64).reshape(-1)
    scores = lex.lookup(word)
    if scores is None:
        scores = np.zeros(lex.k)
    return np.concatenate([base, scores])


def _is_negator(tok, negators):
    t = tok.lower()
    return t in negators or t.endswith("n't")


def _has_letters(tok):
    return any(ch.isalpha() for ch in tok)


def raw_rule_score(tokens, cfg: RuleScorerConfig) -> float:
    """Unnormalized sum of rule-adjusted valences, including the '!' emphasis."""
    words = [t for t in tokens if _has_letters(t)]
    mixed_case = any(w.isupper() for w in words) and any(not w.isupper() for w in words)
    total = 0.0
    for i, tok in enumerate(tokens):
        v = cfg.valence.get(tok.lower())
        if v is None:
            continue
        if any(t.lower() in cfg.boosters for t in tokens[max(0, i - 2):i]):
            v += math.copysign(cfg.booster_increment, v)
        if any(_is_negator(t, cfg.negators) for t in tokens[max(0, i - 3):i]):
            v *= cfg.negation_factor
        if mixed_case and tok.isupper():
            v *= 1.0 + cfg.caps_boost
        total += v
    bangs = sum(t.count("!") for t in tokens)
    if total != 0.0:
        total += math.copysign(cfg.exclamation_boost * min(bangs, cfg.exclamation_cap), total)
    return total


def normalize_score(x: float, alpha: float) -> float:
    return x / math.sqrt(x * x + alpha)


def rule_score(tokens, cfg: RuleScorerConfig | None = None) -> float:
    """Compound sentiment of a token list in (-1, 1).

    >>> round(rule_score(["not", "good"]), 4)
    -0.3412
    """
    cfg = cfg or RuleScorerConfig()
    return normalize_score(raw_rule_score(list(tokens), cfg), cfg.norm_alpha)


def segment_text_vector(tokens, word_vectors, lex: Lexicon | None = None,
                        contextual=None, cfg: RuleScorerConfig | None = None):
    """Mean over resolvable tokens of word vector [+ lexicon scores] [+ contextual
    vector], with the segment rule score appended last when ``cfg`` is given.

    ``contextual`` is a per-token sequence aligned with ``tokens``.  Tokens
    without a word vector are skipped.
    """
    rows = []
    for i, tok in enumerate(tokens):
        base = word_vectors.get(tok)
        if base is None:
            base = word_vectors.get(tok.lower())
        if base is None:
            continue
        parts = [np.asarray(base, dtype=np.float64).reshape(-1)]
        if lex is not None:
            parts = [lexicon_embed(tok, parts[0], lex)]
        if contextual is not None:
            parts.append(np.asarray(contextual[i], dtype=np.float64).reshape(-1))
        rows.append(np.concatenate(parts))
    if not rows:
        raise DataError("segment has no token with a word vector")
    vec = np.mean(np.stack(rows), axis=0)
    if cfg is not None:
        vec = np.append(vec, rule_score(tokens, cfg))
    return vec

"""Referring-expression decomposition into static / relational / temporal
phrase masks, and the hashed embedding stand-in for a pretrained text encoder.

Expressions arrive pre-tagged with coarse parts of speech; a fixed rule table
turns tags into the three binary masks, so decomposition is deterministic and
directly testable.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .nn import Param, ParamFactory
from .tensor import Tensor

TAGS = ("NOUN", "ADJ", "VERB_TRANS", "VERB_INTRANS", "PREP", "DET", "ADV", "OTHER")
_SPAN_TAGS = {"DET", "ADJ", "NOUN", "PREP"}


@dataclass(frozen=True)
class TokenizedExpression:
    tokens: tuple
    tags: tuple

    def __post_init__(self):
        if len(self.tokens) != len(self.tags) or len(self.tokens) < 1:
            raise ValueError("tokens and tags must be equal-length and nonempty")
        bad = [t for t in self.tags if t not in TAGS]
        if bad:
            raise ValueError(f"unknown tags: {bad}")

    def __len__(self):
        return len(self.tokens)

    @classmethod
    def make(cls, tokens, tags):
        return cls(tuple(tokens), tuple(tags))


@dataclass(frozen=True)
class PhraseMasks:
    static: tuple
    relational: tuple
    temporal: tuple

    def __post_init__(self):
        n = len(self.static)
        if len(self.relational) != n or len(self.temporal) != n:
            raise ValueError("masks must share one length")


def decompose(expr: TokenizedExpression) -> PhraseMasks:
    """Rule table over coarse tags.

    static: every ADJ, every NOUN directly preceded by a DET, and the first
    NOUN of the sentence (head noun). relational: each transitive verb plus
    the NOUN/PREP tokens of its following noun phrase. temporal: intransitive
    verbs and adverbs. A token may land in several masks or in none.
    """
    w = len(expr)
    static = [0] * w
    relational = [0] * w
    temporal = [0] * w
    head_seen = False
    for i, tag in enumerate(expr.tags):
        if tag == "ADJ":
            static[i] = 1
        elif tag == "NOUN":
            if not head_seen:
                static[i] = 1
                head_seen = True
            elif i > 0 and expr.tags[i - 1] == "DET":
                static[i] = 1
        elif tag == "VERB_TRANS":
            relational[i] = 1
            j = i + 1
            while j < w and expr.tags[j] in _SPAN_TAGS:
                if expr.tags[j] in ("NOUN", "PREP"):
                    relational[j] = 1
                j += 1
        elif tag == "VERB_INTRANS":
            temporal[i] = 1
        elif tag == "ADV":
            temporal[i] = 1
    return PhraseMasks(tuple(static), tuple(relational), tuple(temporal))


@dataclass
class TextFeatures:
    """Word embeddings plus the mask-gathered subsets.

    Subset rows are literally rows of ``f_l`` (index-equal gathers); an empty
    mask is replaced by one learned fallback row so downstream attention never
    sees an empty key set.
    """

    f_l: Tensor
    f_s: Tensor
    f_r: Tensor
    f_e: Tensor
    idx_s: tuple
    idx_r: tuple
    idx_e: tuple


def token_slot(token: str, vocab_size: int) -> int:
    h = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(h, "little") % vocab_size


class TextEmbedder:
    """Hashed embedding table + learned positional offsets (text encoder stand-in)."""

    def __init__(self, factory: ParamFactory, name: str, vocab_size: int, d: int, max_words: int):
        self.vocab_size = vocab_size
        self.d = d
        self.max_words = max_words
        self.table = factory.uniform(f"{name}.table", (vocab_size, d), fan_in=d)
        self.positions = factory.uniform(f"{name}.positions", (max_words, d), fan_in=d)
        self.fallback_s = factory.uniform(f"{name}.fallback_static", (1, d), fan_in=d)
        self.fallback_r = factory.uniform(f"{name}.fallback_relational", (1, d), fan_in=d)
        self.fallback_e = factory.uniform(f"{name}.fallback_temporal", (1, d), fan_in=d)

    def __call__(self, expr: TokenizedExpression, masks: PhraseMasks, use_positions=True) -> TextFeatures:
        w = len(expr)
        if w > self.max_words:
            raise ValueError(f"expression has {w} words, max is {self.max_words}")
        slots = np.array([token_slot(t, self.vocab_size) for t in expr.tokens])
        f_l = self.table.tensor[slots]
        if use_positions:
            f_l = f_l + self.positions.tensor[np.arange(w)]

        def subset(mask, fallback: Param):
            idx = tuple(i for i, m in enumerate(mask) if m)
            if not idx:
                return fallback.tensor, idx
            return f_l[np.array(idx)], idx

        f_s, idx_s = subset(masks.static, self.fallback_s)
        f_r, idx_r = subset(masks.relational, self.fallback_r)
        f_e, idx_e = subset(masks.temporal, self.fallback_e)
        return TextFeatures(f_l, f_s, f_r, f_e, idx_s, idx_r, idx_e)

"""Instruction segmentation, entropy-gated phrase selection and text encoding."""
from __future__ import annotations

import enum
import hashlib
import math
import re
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .similarity import SimilarityProvider, tokenize

DEFAULT_PHI_LAMBDA = 0.65
DEFAULT_LOGIT_SCALE = 100.0

_SENTENCE_END = re.compile(r"\.(?=\s|$)")
_CONJ = re.compile(r"\b(and|then)\b")


class SegmentationStyle(str, enum.Enum):
    TYPE_I = "none"
    TYPE_II = "commas"
    TYPE_III = "conjunctions"
    TYPE_IV = "periods"

    @classmethod
    def parse(cls, v) -> "SegmentationStyle":
        if isinstance(v, cls):
            return v
        aliases = {"i": cls.TYPE_I, "ii": cls.TYPE_II, "iii": cls.TYPE_III, "iv": cls.TYPE_IV,
                   "type_i": cls.TYPE_I, "type_ii": cls.TYPE_II, "type_iii": cls.TYPE_III, "type_iv": cls.TYPE_IV}
        s = str(v).strip().lower()
        if s in aliases:
            return aliases[s]
        return cls(s)


@dataclass(frozen=True)
class Instruction:
    raw: str
    phrases: tuple
    style: SegmentationStyle
    sentence_of: tuple  # sentence index of each phrase

    def __post_init__(self):
        if not self.phrases:
            raise ValueError("instruction has no phrases")
        if len(self.sentence_of) != len(self.phrases):
            raise ValueError("sentence_of must align with phrases")


def _clean(fragment: str) -> str:
    return " ".join(fragment.split()).strip(" ,;")


def _split_conjunctions(sentence: str) -> list:
    parts = []
    last = 0
    for m in _CONJ.finditer(sentence):
        if m.group(1) == "and":
            before = sentence[:m.start()].rstrip()
            if before.endswith(","):  # serial-list "and"
                continue
        parts.append(sentence[last:m.start()])
        last = m.end()
    parts.append(sentence[last:])
    return parts


def sentences(raw: str) -> list:
    return [s for s in (_clean(x) for x in _SENTENCE_END.split(raw)) if s]


def segment(raw: str, style=SegmentationStyle.TYPE_IV) -> Instruction:
    style = SegmentationStyle.parse(style)
    if not raw or not raw.strip():
        raise ValueError("empty instruction")
    if style == SegmentationStyle.TYPE_I:
        return Instruction(raw, (raw.strip(),), style, (0,))
    phrases, sent_idx = [], []
    for si, sent in enumerate(sentences(raw)):
        if style == SegmentationStyle.TYPE_II:
            frags = sent.split(",")
        elif style == SegmentationStyle.TYPE_III:
            frags = _split_conjunctions(sent)
        else:
            frags = [sent]
        for f in frags:
            f = _clean(f)
            if f:
                phrases.append(f)
                sent_idx.append(si)
    if not phrases:  # punctuation only
        return Instruction(raw, (raw.strip(),), style, (0,))
    return Instruction(raw, tuple(phrases), style, tuple(sent_idx))


@dataclass(frozen=True)
class PhraseSelection:
    probabilities: tuple
    entropy: float  # normalized to [0, 1]
    alpha: int
    k_star: Optional[int]  # None when alpha == 0
    raw_similarities: tuple
    argmax: int  # best phrase regardless of the gate

    @property
    def order(self) -> list:
        """Phrase indices by decreasing probability, ties to the lower index."""
        p = self.probabilities
        return sorted(range(len(p)), key=lambda k: (-p[k], k))


def softmax(theta: Sequence[float], scale: float = 1.0) -> np.ndarray:
    z = scale * np.asarray(theta, dtype=np.float64)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def normalized_entropy(p: Sequence[float]) -> float:
    p = np.asarray(p, dtype=np.float64)
    nz = p[p > 0]
    h = float(-(nz * np.log2(nz)).sum())
    return min(1.0, max(0.0, h / math.log2(max(len(p), 2))))


def selection_from_similarities(theta: Sequence[float], phi_lambda=DEFAULT_PHI_LAMBDA,
                                logit_scale=DEFAULT_LOGIT_SCALE) -> PhraseSelection:
    if not 0.0 < phi_lambda < 1.0:
        raise ValueError("phi_lambda must lie in (0, 1)")
    if logit_scale <= 0:
        raise ValueError("logit_scale must be positive")
    theta = [float(t) for t in theta]
    if not theta:
        raise ValueError("no phrases")
    p = softmax(theta, logit_scale)
    phi = 0.0 if len(theta) == 1 else normalized_entropy(p)
    best = int(np.argmax(p))  # first maximum on ties
    alpha = 1 if phi < phi_lambda else 0
    return PhraseSelection(tuple(p.tolist()), phi, alpha, best if alpha else None, tuple(theta), best)


def select_phrase(instr: Instruction, obs, provider: SimilarityProvider, phi_lambda: float = DEFAULT_PHI_LAMBDA,
                  logit_scale: float = DEFAULT_LOGIT_SCALE) -> PhraseSelection:
    theta = provider.score_many(list(instr.phrases), obs)
    return selection_from_similarities(theta, phi_lambda, logit_scale)


class InstructionEncoder:
    dim: int

    def encode(self, text: str) -> np.ndarray:
        raise NotImplementedError


class HashedBagEncoder(InstructionEncoder):
    """Signed feature hashing of unigrams and bigrams, L2-normalized."""

    def __init__(self, dim: int = 128, seed: int = 0):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.seed = seed
        self._cache = {}

    def _slot(self, feat: str):
        h = hashlib.sha256(f"{self.seed}:{feat}".encode()).digest()
        return int.from_bytes(h[:4], "little") % self.dim, (1.0 if h[4] & 1 else -1.0)

    def encode(self, text: str) -> np.ndarray:
        v = self._cache.get(text)
        if v is None:
            toks = tokenize(text) or [text.strip() or "<empty>"]
            v = np.zeros(self.dim)
            feats = [(t, 1.0) for t in toks] + [(a + "_" + b, 0.5) for a, b in zip(toks, toks[1:])]
            for f, w in feats:
                i, s = self._slot(f)
                v[i] += s * w
            n = np.linalg.norm(v)
            if n == 0.0:  # collisions cancelled out
                i, _ = self._slot("<fallback>")
                v[i] = 1.0
                n = 1.0
            v = v / n
            v.setflags(write=False)
            self._cache[text] = v
        return v


def encode_instruction(sel: PhraseSelection, instr: Instruction, encoder: InstructionEncoder) -> np.ndarray:
    if sel.alpha == 1:
        if sel.k_star is None or not 0 <= sel.k_star < len(instr.phrases):
            raise ValueError("selection does not match instruction")
        return encoder.encode(instr.phrases[sel.k_star])
    return encoder.encode(instr.raw)

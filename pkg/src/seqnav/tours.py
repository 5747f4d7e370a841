"""Tour construction: trajectory stitching, instruction concatenation and
enrichment through a chat-completion service, and tour files."""
from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import tempfile
import threading
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import httpx
import numpy as np

from .geometry import euclidean
from .instruction import sentences

log = logging.getLogger(__name__)

TOUR_FORMAT = "seqnav-tour/1"
CASSETTE_FORMAT = "seqnav-cassette/1"

CONCAT_TEMPLATE = (
    "Please help logically connect two navigation instructions into one, ensuring semantic coherence, "
    "with the end of the first serving as the start of the second. <INS1> <INS2>"
)
ENRICH_TEMPLATE = (
    "<IMAGES> Please look closely at these multiple images of the first view corresponding to a navigation "
    "trajectory, and help me enrich the discriminating details of instruction without changing its logic. "
    "The original instruction is: <INS>"
)


@dataclass
class EpisodeRecord:
    id: str
    scene_id: str
    reference_path: list
    instruction: str
    phrases: list
    boundaries: list = field(default_factory=list)
    goals: list = field(default_factory=list)
    start_heading: float = 0.0

    def __post_init__(self):
        self.reference_path = [tuple(float(v) for v in p) for p in self.reference_path]
        if not self.reference_path:
            raise ValueError(f"episode {self.id} has an empty path")
        if not self.boundaries:
            self.boundaries = [len(self.reference_path) - 1]

    @property
    def start(self):
        return self.reference_path[0]

    @property
    def end(self):
        return self.reference_path[-1]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["reference_path"] = [list(p) for p in self.reference_path]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeRecord":
        return cls(**d)


@dataclass
class TourRecord:
    id: str
    scene_id: str
    episode_ids: list
    stitched_instruction: str
    subtask_count: int
    provenance: str = "offline"
    episodes: list = field(default_factory=list)  # EpisodeRecords, optional

    def to_dict(self) -> dict:
        d = asdict(self)
        d["episodes"] = [e.to_dict() for e in self.episodes]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TourRecord":
        d = dict(d)
        d["episodes"] = [EpisodeRecord.from_dict(e) for e in d.get("episodes", [])]
        return cls(**d)


# ---------------------------------------------------------------- concatenation


def _norm_ws(s: str) -> str:
    return " ".join(s.split())


def concat_instructions_offline(a: str, b: str) -> str:
    a, b = _norm_ws(a), _norm_ws(b)
    if not a or not b:
        raise ValueError("cannot concatenate empty instructions")
    a = a.rstrip(".").rstrip()
    return f"{a}. Then, {b[0].lower()}{b[1:]}"


# ------------------------------------------------------------------ stitching


def stitch_trajectories(
    records: Sequence[EpisodeRecord],
    tol: float = 0.25,
    max_chain: int = 4,
    concat: Callable[[str, str], str] = concat_instructions_offline,
) -> list:
    """Greedy chaining in stable id order: each chain grows with the smallest-id
    unused record whose start lies within ``tol`` of the chain's end."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    if max_chain < 1:
        raise ValueError("max_chain must be >= 1")
    by_scene = {}
    for r in records:
        by_scene.setdefault(r.scene_id, []).append(r)
    tours = []
    for scene_id in sorted(by_scene):
        recs = sorted(by_scene[scene_id], key=lambda r: r.id)
        used = set()
        for r in recs:
            if r.id in used:
                continue
            chain = [r]
            used.add(r.id)
            while len(chain) < max_chain:
                nxt = next((x for x in recs if x.id not in used and euclidean(chain[-1].end, x.start) <= tol), None)
                if nxt is None:
                    break
                chain.append(nxt)
                used.add(nxt.id)
            text = chain[0].instruction
            for x in chain[1:]:
                text = concat(text, x.instruction)
            tours.append(TourRecord(
                id="+".join(x.id for x in chain), scene_id=scene_id, episode_ids=[x.id for x in chain],
                stitched_instruction=text, subtask_count=len(chain), episodes=list(chain),
            ))
    return tours


def verify_adjacency(tour: TourRecord, tol: float) -> bool:
    eps = tour.episodes
    return all(euclidean(a.end, b.start) <= tol for a, b in zip(eps, eps[1:]))


# ----------------------------------------------------------------- LLM client


class LLMError(RuntimeError):
    pass


def request_digest(body: dict) -> str:
    return hashlib.sha256(json.dumps(body, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


class RemoteLLMClient:
    """Chat-completion client with record/replay cassettes.

    mode "live" talks to ``endpoint``; "record" does the same and stores
    each response in the cassette; "replay" serves only from the cassette.
    """

    def __init__(
        self,
        endpoint: Optional[str] = None,
        model: str = "llama-13b",
        timeout: float = 30.0,
        retries: int = 2,
        mode: str = "live",
        cassette: Optional[str] = None,
        transport: Optional[httpx.BaseTransport] = None,
    ):
        if mode not in ("live", "record", "replay"):
            raise ValueError(f"unknown mode {mode!r}")
        if mode in ("record", "replay") and not cassette:
            raise ValueError(f"mode {mode!r} needs a cassette path")
        self.endpoint = endpoint
        self.model = model
        self.timeout = timeout
        self.retries = retries
        self.mode = mode
        self.cassette = cassette
        self._transport = transport
        self._lock = threading.Lock()
        self.interactions = {}
        self.audit = []  # (digest, source)
        if cassette and os.path.exists(cassette):
            with open(cassette) as f:
                doc = json.load(f)
            if doc.get("format") != CASSETTE_FORMAT:
                raise ValueError(f"{cassette}: unsupported cassette format {doc.get('format')!r}")
            self.interactions = doc["interactions"]

    def body(self, prompt: str) -> dict:
        return {"model": self.model, "messages": [{"role": "user", "content": prompt}]}

    def _save(self):
        d = os.path.dirname(os.path.abspath(self.cassette))
        os.makedirs(d, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
        with os.fdopen(fd, "w") as f:
            json.dump({"format": CASSETTE_FORMAT, "interactions": self.interactions}, f, indent=1, sort_keys=True)
        os.replace(tmp, self.cassette)

    def complete(self, prompt: str) -> str:
        body = self.body(prompt)
        digest = request_digest(body)
        if self.mode == "replay":
            hit = self.interactions.get(digest)
            if hit is None:
                raise LLMError(f"no recorded response for request {digest[:12]}")
            self.audit.append((digest, "replay"))
            return hit["response"]
        if not self.endpoint:
            raise LLMError("no endpoint configured")
        last = None
        for _ in range(self.retries + 1):
            try:
                with httpx.Client(timeout=self.timeout, transport=self._transport) as c:
                    r = c.post(self.endpoint, json=body)
                r.raise_for_status()
                text = r.json()["choices"][0]["message"]["content"]
                if not isinstance(text, str):
                    raise TypeError("content is not a string")
                break
            except (httpx.HTTPError, ValueError, KeyError, IndexError, TypeError) as e:
                last = e
        else:
            raise LLMError(f"request {digest[:12]} failed: {last}")
        self.audit.append((digest, "live"))
        log.info("llm request %s answered (%d chars)", digest[:12], len(text))
        if self.mode == "record":
            with self._lock:
                self.interactions[digest] = {"request": body, "response": text}
                self._save()
        return text


@dataclass(frozen=True)
class Generated:
    text: str
    provenance: str  # "llm" or "offline"
    digest: Optional[str] = None
    error: Optional[str] = None


def llm_concat(client: Optional[RemoteLLMClient], ins1: str, ins2: str) -> Generated:
    prompt = CONCAT_TEMPLATE.replace("<INS1>", ins1).replace("<INS2>", ins2)
    if client is None:
        return Generated(concat_instructions_offline(ins1, ins2), "offline")
    digest = request_digest(client.body(prompt))
    try:
        text = client.complete(prompt).strip()
        if not text or len(text) <= max(len(ins1), len(ins2)):
            raise LLMError("response is not longer than its inputs")
    except LLMError as e:
        return Generated(concat_instructions_offline(ins1, ins2), "offline", digest, str(e))
    return Generated(text, "llm", digest)


def llava_enrich(client: Optional[RemoteLLMClient], phrase: str, frames: Sequence[str]) -> Generated:
    if not frames:
        raise ValueError("enrichment needs at least one frame")
    if client is None:
        return Generated(phrase, "offline")
    images = " ".join(f"<image:{f}>" for f in frames)
    prompt = ENRICH_TEMPLATE.replace("<IMAGES>", images).replace("<INS>", phrase)
    digest = request_digest(client.body(prompt))
    try:
        text = client.complete(prompt).strip()
        if not text or len(sentences(text)) < len(sentences(phrase)):
            raise LLMError("enriched text lost sentences")
    except LLMError as e:
        return Generated(phrase, "offline", digest, str(e))
    return Generated(text, "llm", digest)


# ---------------------------------------------------------------- tour files


class TourFileError(ValueError):
    pass


def write_tours(path: str, tours: Iterable[TourRecord]):
    tmp = f"{path}.tmp"
    with open(tmp, "w") as f:
        for t in tours:
            f.write(json.dumps({"format": TOUR_FORMAT, **t.to_dict()}, sort_keys=True) + "\n")
    os.replace(tmp, path)


def read_tours(path: str) -> list:
    out = []
    with open(path) as f:
        for n, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as e:
                raise TourFileError(f"{path}: line {n}: malformed JSON ({e.msg})") from None
            fmt = d.pop("format", None)
            if fmt != TOUR_FORMAT:
                raise TourFileError(f"{path}: line {n}: unsupported format {fmt!r} (expected {TOUR_FORMAT})")
            try:
                out.append(TourRecord.from_dict(d))
            except (TypeError, ValueError) as e:
                raise TourFileError(f"{path}: line {n}: {e}") from None
    return out


# ------------------------------------------------------- synthetic instructions

_OPENERS = (
    "Walk to the {g}.",
    "Head toward the {g} and stop there.",
    "Make your way over to the {g}.",
    "Continue until you reach the {g}.",
    "Go to the {g}, then wait beside it.",
    "Find the {g} and stand next to it.",
)


def synthesize_instruction(goal_words: Sequence[str], seed: int) -> str:
    """One sentence per sub-task, each naming only its goal."""
    rng = np.random.default_rng([int(seed), 0x1257])
    parts = [_OPENERS[int(rng.integers(len(_OPENERS)))].format(g=g) for g in goal_words]
    return " ".join(parts)


_ID_RE = re.compile(r"^synth-(-?\d+)-r(\d+)-l(\d+)$")


def parse_scene_id(scene_id: str):
    """(seed, n_rooms, n_landmarks) for ids produced by the scene generator."""
    m = _ID_RE.match(scene_id)
    if not m:
        raise ValueError(f"scene id {scene_id!r} is not a generated scene id")
    return int(m.group(1)), int(m.group(2)), int(m.group(3))

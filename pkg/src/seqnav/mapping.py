"""Persistent tour maps, egocentric crops and the map encoder."""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import kernels
from .geometry import ContractViolation, Pose
from .tensorio import load_tensors, save_tensors
from .world import MAX_RANGE, NUM_CLASSES, RESOLUTION, Observation, ray_directions

UNKNOWN, FREE, BLOCKED = -1, 0, 1
CROP = 64
CENTER = 32
_GROW = 32  # cells of slack added when the map grows


class TourMap:
    """Occupancy (-1 unknown / 0 free / 1 blocked) plus 13 binary semantic layers.

    Array index (i, j) holds world cell (i + row_off, j + col_off); world cell
    (r, c) is centred on (c * res, r * res).  Grows on demand.
    """

    def __init__(self, resolution: float = RESOLUTION):
        self.resolution = resolution
        self.occupancy = np.full((0, 0), UNKNOWN, dtype=np.int8)
        self.semantics = np.zeros((NUM_CLASSES, 0, 0), dtype=np.uint8)
        self.row_off = 0
        self.col_off = 0
        self.known_cell_count = 0

    def copy(self) -> "TourMap":
        m = TourMap(self.resolution)
        m.occupancy = self.occupancy.copy()
        m.semantics = self.semantics.copy()
        m.row_off, m.col_off, m.known_cell_count = self.row_off, self.col_off, self.known_cell_count
        return m

    def same_as(self, other: "TourMap") -> bool:
        return (
            self.row_off == other.row_off and self.col_off == other.col_off
            and self.known_cell_count == other.known_cell_count
            and np.array_equal(self.occupancy, other.occupancy)
            and np.array_equal(self.semantics, other.semantics)
        )

    def ensure(self, r0: int, c0: int, r1: int, c1: int):
        """Grow so world cells [r0, r1] x [c0, c1] are addressable."""
        h, w = self.occupancy.shape
        if h and self.row_off <= r0 and self.col_off <= c0 and r1 < self.row_off + h and c1 < self.col_off + w:
            return
        if h:
            nr0, nc0 = min(r0 - _GROW, self.row_off), min(c0 - _GROW, self.col_off)
            nr1, nc1 = max(r1 + _GROW, self.row_off + h - 1), max(c1 + _GROW, self.col_off + w - 1)
        else:
            nr0, nc0, nr1, nc1 = r0 - _GROW, c0 - _GROW, r1 + _GROW, c1 + _GROW
        occ = np.full((nr1 - nr0 + 1, nc1 - nc0 + 1), UNKNOWN, dtype=np.int8)
        sem = np.zeros((NUM_CLASSES,) + occ.shape, dtype=np.uint8)
        if h:
            i, j = self.row_off - nr0, self.col_off - nc0
            occ[i:i + h, j:j + w] = self.occupancy
            sem[:, i:i + h, j:j + w] = self.semantics
        self.occupancy, self.semantics = occ, sem
        self.row_off, self.col_off = nr0, nc0

    def recount(self) -> int:
        return int((self.occupancy != UNKNOWN).sum())


def integrate_observation(tmap: TourMap, obs: Observation) -> TourMap:
    """Mark cells along each depth ray free and the hit cell blocked with its class bit."""
    res = tmap.resolution
    pose = obs.pose
    reach = int(math.ceil(MAX_RANGE / res)) + 2
    pr, pc = int(math.floor(pose.y / res + 0.5)), int(math.floor(pose.x / res + 0.5))
    tmap.ensure(pr - reach, pc - reach, pr + reach, pc + reach)
    if not obs.depth_rays:
        return tmap
    bearings = [r[0] for r in obs.depth_rays]
    dxs, dys = ray_directions(pose.heading, bearings)
    dists = np.array([r[1] for r in obs.depth_rays], dtype=np.float64)
    classes = np.array([-1 if r[2] is None else int(r[2]) for r in obs.depth_rays], dtype=np.int64)
    tmap.known_cell_count += int(kernels.integrate_rays(
        tmap.occupancy, tmap.semantics, tmap.row_off, tmap.col_off, res,
        pose.x, pose.y, dxs, dys, dists, classes, MAX_RANGE,
    ))
    return tmap


@dataclass(frozen=True)
class EgoCrop:
    occ: np.ndarray  # 1x64x64, blocked 0 / unknown 0.5 / free 1
    sem: np.ndarray  # 13x64x64 in {0, 1}
    pose_used: Pose


_I, _J = np.meshgrid(np.arange(CROP), np.arange(CROP), indexing="ij")
_FWD = (CENTER - _I).astype(np.float64)
_RIGHT = (_J - CENTER).astype(np.float64)
_OCC_VALUE = np.array([0.5, 1.0, 0.0])  # indexed by occupancy + 1


def crop_ego(tmap: TourMap, pose: Pose) -> EgoCrop:
    """64x64 window around ``pose`` with the heading pointing up (row 0 is ahead)."""
    res = tmap.resolution
    th = math.radians(pose.heading)
    if pose.heading % 90.0 == 0.0:
        k = int(pose.heading // 90.0) % 4
        c, s = ((1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0))[k]
    else:
        c, s = math.cos(th), math.sin(th)
    # forward = (c, s), right = (s, -c)
    wx = pose.x + res * (_FWD * c + _RIGHT * s)
    wy = pose.y + res * (_FWD * s - _RIGHT * c)
    rows = np.floor(wy / res + 0.5).astype(np.int64) - tmap.row_off
    cols = np.floor(wx / res + 0.5).astype(np.int64) - tmap.col_off
    h, w = tmap.occupancy.shape
    inside = (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)
    rr, cc = np.where(inside, rows, 0), np.where(inside, cols, 0)
    occ = np.full((CROP, CROP), 0.5)
    sem = np.zeros((NUM_CLASSES, CROP, CROP))
    if h and w:
        vals = tmap.occupancy[rr, cc]
        occ = np.where(inside, _OCC_VALUE[vals + 1], 0.5)
        sem = np.where(inside[None], tmap.semantics[:, rr, cc], 0).astype(np.float64)
    return EgoCrop(occ=occ[None].astype(np.float64), sem=sem, pose_used=pose)


# ------------------------------------------------------------------ encoder

STEM_CHANNELS = 8
N_BLOCKS = 4
IN_CHANNELS = 1 + NUM_CLASSES


@dataclass
class BlockWeights:
    conv_w: np.ndarray  # (2c, c, 7, 7)
    conv_b: np.ndarray  # (2c,)
    bn_gamma: np.ndarray
    bn_beta: np.ndarray
    bn_mean: np.ndarray
    bn_var: np.ndarray
    bn_eps: float
    att_w: np.ndarray  # (1, 2, 7, 7)
    att_b: np.ndarray  # (1,)

    def validate(self, c_in: int):
        c_out = self.conv_w.shape[0]
        if self.conv_w.shape != (c_out, c_in, 7, 7):
            raise ContractViolation(f"conv weight shape {self.conv_w.shape} does not take {c_in} channels")
        for name in ("conv_b", "bn_gamma", "bn_beta", "bn_mean", "bn_var"):
            if getattr(self, name).shape != (c_out,):
                raise ContractViolation(f"{name} must have shape ({c_out},)")
        if np.any(self.bn_var + self.bn_eps <= 0):
            raise ContractViolation("batch-norm variance + eps must be positive")
        if self.att_w.shape != (1, 2, 7, 7) or self.att_b.shape != (1,):
            raise ContractViolation("spatial attention expects a (1, 2, 7, 7) kernel and one bias")


@dataclass
class MapEncoderWeights:
    stem_w: np.ndarray  # (8, 14)
    stem_b: np.ndarray  # (8,)
    blocks: list = field(default_factory=list)

    def validate(self):
        if self.stem_w.shape != (STEM_CHANNELS, IN_CHANNELS) or self.stem_b.shape != (STEM_CHANNELS,):
            raise ContractViolation("stem must map 14 to 8 channels")
        if len(self.blocks) != N_BLOCKS:
            raise ContractViolation(f"expected {N_BLOCKS} blocks, got {len(self.blocks)}")
        c = STEM_CHANNELS
        for b in self.blocks:
            b.validate(c)
            if b.conv_w.shape[0] != 2 * c:
                raise ContractViolation("each block must double the channel count")
            c *= 2
        return self

    @classmethod
    def random(cls, seed: int = 0) -> "MapEncoderWeights":
        rng = np.random.default_rng([seed, 0xE4C0])
        stem_w = rng.normal(0, math.sqrt(2.0 / IN_CHANNELS), (STEM_CHANNELS, IN_CHANNELS))
        blocks = []
        c = STEM_CHANNELS
        for _ in range(N_BLOCKS):
            blocks.append(BlockWeights(
                conv_w=rng.normal(0, math.sqrt(2.0 / (c * 49)), (2 * c, c, 7, 7)),
                conv_b=np.zeros(2 * c),
                bn_gamma=np.ones(2 * c) + rng.normal(0, 0.05, 2 * c),
                bn_beta=rng.normal(0, 0.05, 2 * c),
                bn_mean=rng.normal(0, 0.05, 2 * c),
                bn_var=np.ones(2 * c) + rng.uniform(0, 0.1, 2 * c),
                bn_eps=1e-5,
                att_w=rng.normal(0, math.sqrt(1.0 / 98), (1, 2, 7, 7)),
                att_b=np.zeros(1),
            ))
            c *= 2
        return cls(stem_w, np.zeros(STEM_CHANNELS), blocks).validate()

    @classmethod
    def zeros(cls) -> "MapEncoderWeights":
        blocks = []
        c = STEM_CHANNELS
        for _ in range(N_BLOCKS):
            blocks.append(BlockWeights(
                np.zeros((2 * c, c, 7, 7)), np.zeros(2 * c), np.ones(2 * c), np.zeros(2 * c),
                np.zeros(2 * c), np.ones(2 * c), 1e-5, np.zeros((1, 2, 7, 7)), np.zeros(1),
            ))
            c *= 2
        return cls(np.zeros((STEM_CHANNELS, IN_CHANNELS)), np.zeros(STEM_CHANNELS), blocks)

    def to_tensors(self) -> dict:
        out = {"stem.weight": self.stem_w, "stem.bias": self.stem_b}
        for i, b in enumerate(self.blocks):
            p = f"blocks.{i}."
            out.update({
                p + "conv.weight": b.conv_w, p + "conv.bias": b.conv_b,
                p + "bn.weight": b.bn_gamma, p + "bn.bias": b.bn_beta,
                p + "bn.running_mean": b.bn_mean, p + "bn.running_var": b.bn_var,
                p + "bn.eps": np.array(b.bn_eps),
                p + "attn.weight": b.att_w, p + "attn.bias": b.att_b,
            })
        return out

    @classmethod
    def from_tensors(cls, t: dict) -> "MapEncoderWeights":
        try:
            blocks = []
            for i in range(N_BLOCKS):
                p = f"blocks.{i}."
                blocks.append(BlockWeights(
                    t[p + "conv.weight"], t[p + "conv.bias"], t[p + "bn.weight"], t[p + "bn.bias"],
                    t[p + "bn.running_mean"], t[p + "bn.running_var"], float(t[p + "bn.eps"]),
                    t[p + "attn.weight"], t[p + "attn.bias"],
                ))
            return cls(t["stem.weight"], t["stem.bias"], blocks).validate()
        except KeyError as e:
            raise ContractViolation(f"missing tensor {e}") from None

    def save(self, path: str):
        save_tensors(path, self.to_tensors())

    @classmethod
    def load(cls, path: str) -> "MapEncoderWeights":
        return cls.from_tensors(load_tensors(path))


def conv2d(x: np.ndarray, w: np.ndarray, b: Optional[np.ndarray] = None) -> np.ndarray:
    """Same-padded stride-1 cross-correlation; x (C, H, W), w (O, C, k, k)."""
    k = w.shape[-1]
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p)))
    win = sliding_window_view(xp, (k, k), axis=(1, 2))  # (C, H, W, k, k)
    out = np.tensordot(w, win, axes=([1, 2, 3], [0, 3, 4]))  # (O, H, W)
    if b is not None:
        out = out + b[:, None, None]
    return out


def batch_norm(x, gamma, beta, mean, var, eps):
    scale = gamma / np.sqrt(var + eps)
    return (x - mean[:, None, None]) * scale[:, None, None] + beta[:, None, None]


def avg_pool2(x: np.ndarray) -> np.ndarray:
    c, h, w = x.shape
    return x[:, : h - h % 2, : w - w % 2].reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4))


def spatial_attention(x: np.ndarray, att_w: np.ndarray, att_b: np.ndarray) -> np.ndarray:
    pooled = np.stack([x.mean(axis=0), x.max(axis=0)])
    gate = 1.0 / (1.0 + np.exp(-conv2d(pooled, att_w, att_b)))
    return x * gate


def cbraa_block(x: np.ndarray, b: BlockWeights) -> np.ndarray:
    """conv7 -> batch-norm -> ReLU -> 2x2 average pool -> spatial attention."""
    y = conv2d(x, b.conv_w, b.conv_b)
    y = batch_norm(y, b.bn_gamma, b.bn_beta, b.bn_mean, b.bn_var, b.bn_eps)
    y = np.maximum(y, 0.0)
    y = avg_pool2(y)
    return spatial_attention(y, b.att_w, b.att_b)


def encode_map(crop: EgoCrop, w: MapEncoderWeights) -> np.ndarray:
    """14x64x64 crop -> 128x4x4 embedding."""
    if crop.occ.shape != (1, CROP, CROP) or crop.sem.shape != (NUM_CLASSES, CROP, CROP):
        raise ContractViolation(f"crop shapes {crop.occ.shape}/{crop.sem.shape} are not 1x64x64 / 13x64x64")
    x = np.concatenate([crop.occ, crop.sem], axis=0)
    x = np.tensordot(w.stem_w, x, axes=([1], [0])) + w.stem_b[:, None, None]
    for b in w.blocks:
        x = cbraa_block(x, b)
    return x


# ---------------------------------------------------------------- snapshots


def _write_pgm(path: str, img: np.ndarray):
    img = np.ascontiguousarray(img, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        f.write(img[::-1].tobytes())  # +y up in the image


def export_snapshot(tmap: TourMap, prefix: str) -> dict:
    """Write ``prefix``.pgm (occupancy), ``prefix``_sem.pgm (class index) and ``prefix``.json."""
    os.makedirs(os.path.dirname(os.path.abspath(prefix)), exist_ok=True)
    occ = np.full(tmap.occupancy.shape, 128, dtype=np.uint8)
    occ[tmap.occupancy == FREE] = 255
    occ[tmap.occupancy == BLOCKED] = 0
    _write_pgm(prefix + ".pgm", occ)
    if tmap.semantics.size:
        cls_idx = np.where(tmap.semantics.any(axis=0), tmap.semantics.argmax(axis=0), 0)
    else:
        cls_idx = np.zeros(tmap.occupancy.shape, dtype=np.int64)
    _write_pgm(prefix + "_sem.pgm", (cls_idx * 19).astype(np.uint8))
    meta = {
        "format": "seqnav-mapsnap/1",
        "shape": list(tmap.occupancy.shape),
        "row_offset": tmap.row_off,
        "col_offset": tmap.col_off,
        "resolution": tmap.resolution,
        "known_cell_count": tmap.known_cell_count,
        "class_cell_counts": [int(x) for x in tmap.semantics.reshape(NUM_CLASSES, -1).sum(axis=1)],
        "occupancy_levels": {"unknown": 128, "free": 255, "blocked": 0},
    }
    with open(prefix + ".json", "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
    return meta

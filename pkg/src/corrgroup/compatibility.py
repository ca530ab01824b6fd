"""Pairwise geometric compatibility between correspondences and top-N features.

Two correspondences (i, j) are compared through two rotation-invariant
constraints:

    s_dist = | ||ps_i - ps_j|| - ||pt_i - pt_j|| |
    s_ang  = | acos(ns_i . ns_j) - acos(nt_i . nt_j) |

and combined into a Gaussian-kernel score in [0, 1]:

    S(i, j) = exp( -s_dist^2 / (2 a_dist^2) - s_ang^2 / (2 a_ang^2) )

S equals 1 only when both constraints vanish. The per-correspondence feature
is the descending-sorted vector of its scores against all *other*
correspondences, truncated (or zero-padded) to a fixed width N. Two pairs of
exact inliers under one rigid motion score 1, while pairs involving an
outlier rarely agree on both relative distance and relative normal angle, so
inlier features saturate near 1 and outlier features decay quickly.

All kernels below use explicit elementwise arithmetic (no BLAS matmul, which
may fuse multiply-adds) so that a per-pair scalar reference computation
reproduces the vectorized results bit for bit.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import (
    EmptySetError,
    InvalidParameterError,
    MissingNormalsError,
)
from .geometry import PointCloud, cloud_resolution

DEFAULT_N_DIM = 50
DEFAULT_ALPHA_ANG = np.deg2rad(15.0)
DEFAULT_ALPHA_DIST_PR = 10.0  # alpha_dist defaults to this many resolution units

CONSTRAINT_MODES = ("both", "distance", "angle")

# rows per block when tiling the D x D score matrix (also the threading grain)
_BLOCK_ELEMENTS = 2_000_000


@dataclass(frozen=True)
class Correspondence:
    """One hypothesized source-index/target-index match."""

    src_index: int
    tgt_index: int
    similarity: float | None = None
    ratio: float | None = None
    gt_label: bool | None = None


@dataclass(frozen=True)
class CorrespondenceSet:
    """Column-oriented set of correspondences.

    `similarity` (descriptor similarity, higher = more similar), `ratio`
    (nearest/second-nearest descriptor distance ratio, lower = more
    distinctive) and `gt_labels` are optional columns.
    """

    src_indices: np.ndarray
    tgt_indices: np.ndarray
    similarity: np.ndarray | None = None
    ratio: np.ndarray | None = None
    gt_labels: np.ndarray | None = None

    def __post_init__(self):
        si = np.asarray(self.src_indices, dtype=np.int64)
        ti = np.asarray(self.tgt_indices, dtype=np.int64)
        if si.ndim != 1 or si.shape != ti.shape:
            raise InvalidParameterError("src_indices and tgt_indices must be equal-length 1D arrays")
        if si.size and (si.min() < 0 or ti.min() < 0):
            raise InvalidParameterError("correspondence indices must be non-negative")
        object.__setattr__(self, "src_indices", si)
        object.__setattr__(self, "tgt_indices", ti)
        for name, dtype in (("similarity", np.float64), ("ratio", np.float64), ("gt_labels", bool)):
            col = getattr(self, name)
            if col is not None:
                col = np.asarray(col, dtype=dtype)
                if col.shape != si.shape:
                    raise InvalidParameterError(f"{name} must have the same length as the indices")
                object.__setattr__(self, name, col)

    def __len__(self) -> int:
        return self.src_indices.shape[0]

    def __getitem__(self, i: int) -> Correspondence:
        return Correspondence(
            int(self.src_indices[i]),
            int(self.tgt_indices[i]),
            None if self.similarity is None else float(self.similarity[i]),
            None if self.ratio is None else float(self.ratio[i]),
            None if self.gt_labels is None else bool(self.gt_labels[i]),
        )

    def check_bounds(self, n_src: int, n_tgt: int) -> None:
        if len(self) and (self.src_indices.max() >= n_src or self.tgt_indices.max() >= n_tgt):
            raise InvalidParameterError(
                f"correspondence indices exceed cloud sizes ({n_src} source / {n_tgt} target points)")

    def subset(self, mask: np.ndarray) -> "CorrespondenceSet":
        mask = np.asarray(mask)
        pick = lambda col: None if col is None else col[mask]
        return CorrespondenceSet(self.src_indices[mask], self.tgt_indices[mask],
                                 pick(self.similarity), pick(self.ratio), pick(self.gt_labels))

    @classmethod
    def from_correspondences(cls, corrs: list[Correspondence]) -> "CorrespondenceSet":
        def col(attr):
            vals = [getattr(c, attr) for c in corrs]
            return None if all(v is None for v in vals) else [0 if v is None else v for v in vals]

        return cls(
            [c.src_index for c in corrs],
            [c.tgt_index for c in corrs],
            col("similarity"),
            col("ratio"),
            col("gt_label"),
        )


@dataclass(frozen=True)
class CompatParams:
    """Kernel bandwidths and which constraints participate.

    `alpha_dist` is in world units, `alpha_ang` in radians. `constraints`
    selects the exponent terms: "both", "distance" (angle term dropped) or
    "angle" (distance term dropped).
    """

    alpha_dist: float
    alpha_ang: float = DEFAULT_ALPHA_ANG
    constraints: str = "both"

    def __post_init__(self):
        if self.alpha_dist <= 0.0 or self.alpha_ang <= 0.0:
            raise InvalidParameterError("alpha_dist and alpha_ang must be positive")
        if self.constraints not in CONSTRAINT_MODES:
            raise InvalidParameterError(f"constraints must be one of {CONSTRAINT_MODES}, got {self.constraints!r}")

    @classmethod
    def for_cloud(cls, src: PointCloud, alpha_ang: float = DEFAULT_ALPHA_ANG,
                  constraints: str = "both") -> "CompatParams":
        """Default bandwidths tied to the source cloud's sampling density."""
        return cls(DEFAULT_ALPHA_DIST_PR * cloud_resolution(src), alpha_ang, constraints)

    @property
    def needs_normals(self) -> bool:
        return self.constraints != "distance"


def dist_constraint(c_i: Correspondence, c_j: Correspondence,
                    src: PointCloud, tgt: PointCloud) -> float:
    """Absolute difference of the two within-cloud point distances."""
    psi, psj = src.points[c_i.src_index], src.points[c_j.src_index]
    pti, ptj = tgt.points[c_i.tgt_index], tgt.points[c_j.tgt_index]
    dxs, dys, dzs = psi[0] - psj[0], psi[1] - psj[1], psi[2] - psj[2]
    dxt, dyt, dzt = pti[0] - ptj[0], pti[1] - ptj[1], pti[2] - ptj[2]
    ds = np.sqrt((dxs * dxs + dys * dys) + dzs * dzs)
    dt = np.sqrt((dxt * dxt + dyt * dyt) + dzt * dzt)
    return float(np.abs(ds - dt))


def ang_constraint(c_i: Correspondence, c_j: Correspondence,
                   src: PointCloud, tgt: PointCloud) -> float:
    """Absolute difference of the two within-cloud normal angles, in [0, pi]."""
    if src.normals is None or tgt.normals is None:
        raise MissingNormalsError("angle constraint needs normals on both clouds")
    nsi, nsj = src.normals[c_i.src_index], src.normals[c_j.src_index]
    nti, ntj = tgt.normals[c_i.tgt_index], tgt.normals[c_j.tgt_index]
    dot_s = (nsi[0] * nsj[0] + nsi[1] * nsj[1]) + nsi[2] * nsj[2]
    dot_t = (nti[0] * ntj[0] + nti[1] * ntj[1]) + nti[2] * ntj[2]
    ang_s = np.arccos(np.clip(dot_s, -1.0, 1.0))
    ang_t = np.arccos(np.clip(dot_t, -1.0, 1.0))
    return float(np.abs(ang_s - ang_t))


def score_from_constraints(s_dist: float, s_ang: float, params: CompatParams) -> float:
    """Gaussian-kernel score for given constraint values."""
    dd = 2.0 * params.alpha_dist * params.alpha_dist
    da = 2.0 * params.alpha_ang * params.alpha_ang
    if params.constraints == "both":
        arg = -(s_dist * s_dist) / dd - (s_ang * s_ang) / da
    elif params.constraints == "distance":
        arg = -(s_dist * s_dist) / dd
    else:
        arg = -(s_ang * s_ang) / da
    return float(np.exp(arg))


def compat_score(c_i: Correspondence, c_j: Correspondence,
                 src: PointCloud, tgt: PointCloud, params: CompatParams) -> float:
    """Compatibility of two correspondences, in [0, 1]."""
    s_dist = dist_constraint(c_i, c_j, src, tgt) if params.constraints != "angle" else 0.0
    s_ang = ang_constraint(c_i, c_j, src, tgt) if params.needs_normals else 0.0
    return score_from_constraints(s_dist, s_ang, params)


def _gather(corrs: CorrespondenceSet, src: PointCloud, tgt: PointCloud, params: CompatParams):
    corrs.check_bounds(len(src), len(tgt))
    ps = src.points[corrs.src_indices]
    pt = tgt.points[corrs.tgt_indices]
    ns = nt = None
    if params.needs_normals:
        if src.normals is None or tgt.normals is None:
            raise MissingNormalsError(
                "compatibility with angle constraints needs normals on both clouds; "
                "estimate them first (estimate_normals / --estimate-normals)")
        ns = src.normals[corrs.src_indices]
        nt = tgt.normals[corrs.tgt_indices]
    return ps, pt, ns, nt


def _pair_dist(rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    dx = rows[:, 0][:, None] - cols[None, :, 0]
    dy = rows[:, 1][:, None] - cols[None, :, 1]
    dz = rows[:, 2][:, None] - cols[None, :, 2]
    return np.sqrt((dx * dx + dy * dy) + dz * dz)


def _pair_angle(rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    dot = (rows[:, 0][:, None] * cols[None, :, 0]
           + rows[:, 1][:, None] * cols[None, :, 1]) + rows[:, 2][:, None] * cols[None, :, 2]
    return np.arccos(np.clip(dot, -1.0, 1.0))


def _score_rows(lo, hi, ps, pt, ns, nt, params: CompatParams) -> np.ndarray:
    """Scores of correspondences [lo, hi) against the whole set, shape (hi-lo, D)."""
    dd = 2.0 * params.alpha_dist * params.alpha_dist
    da = 2.0 * params.alpha_ang * params.alpha_ang
    if params.constraints != "angle":
        s_dist = np.abs(_pair_dist(ps[lo:hi], ps) - _pair_dist(pt[lo:hi], pt))
    if params.needs_normals:
        s_ang = np.abs(_pair_angle(ns[lo:hi], ns) - _pair_angle(nt[lo:hi], nt))
    if params.constraints == "both":
        arg = -(s_dist * s_dist) / dd - (s_ang * s_ang) / da
    elif params.constraints == "distance":
        arg = -(s_dist * s_dist) / dd
    else:
        arg = -(s_ang * s_ang) / da
    return np.exp(arg)


def _run_blocks(d: int, threads: int, work) -> None:
    block = max(1, min(d, _BLOCK_ELEMENTS // max(d, 1)))
    bounds = [(lo, min(lo + block, d)) for lo in range(0, d, block)]
    if threads <= 1 or len(bounds) == 1:
        for lo, hi in bounds:
            work(lo, hi)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda b: work(*b), bounds))


def compatibility_matrix(corrs: CorrespondenceSet, src: PointCloud, tgt: PointCloud,
                         params: CompatParams, threads: int = 1) -> np.ndarray:
    """Full D x D score matrix (diagonal is the self-score, 1)."""
    d = len(corrs)
    if d < 2:
        raise EmptySetError(f"need at least 2 correspondences, got {d}")
    ps, pt, ns, nt = _gather(corrs, src, tgt, params)
    out = np.empty((d, d))

    def work(lo, hi):
        out[lo:hi] = _score_rows(lo, hi, ps, pt, ns, nt, params)

    _run_blocks(d, threads, work)
    return out


def extract_cf(corrs: CorrespondenceSet, src: PointCloud, tgt: PointCloud,
               params: CompatParams, n_dim: int = DEFAULT_N_DIM, threads: int = 1) -> np.ndarray:
    """Per-correspondence compatibility features, shape (D, n_dim).

    Row i holds the scores of correspondence i against the D-1 others, sorted
    descending, truncated to n_dim; when D-1 < n_dim the tail is zero-padded.
    Row order matches the input order.
    """
    d = len(corrs)
    if d < 2:
        raise EmptySetError(f"feature extraction needs at least 2 correspondences, got {d}")
    if n_dim < 1:
        raise InvalidParameterError(f"n_dim must be >= 1, got {n_dim}")
    ps, pt, ns, nt = _gather(corrs, src, tgt, params)
    keep = min(n_dim, d - 1)
    out = np.zeros((d, n_dim))

    def work(lo, hi):
        scores = _score_rows(lo, hi, ps, pt, ns, nt, params)
        scores[np.arange(hi - lo), np.arange(lo, hi)] = -np.inf  # drop self-score
        ordered = np.sort(scores, axis=1)[:, ::-1]
        out[lo:hi, :keep] = ordered[:, :keep]

    _run_blocks(d, threads, work)
    return out

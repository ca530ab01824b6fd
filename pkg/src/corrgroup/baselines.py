"""Classical correspondence grouping baselines: similarity-score threshold,
nearest-neighbor similarity ratio, geometric-consistency clustering, RANSAC."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .compatibility import CompatParams, CorrespondenceSet, compatibility_matrix
from .errors import (
    DegenerateGeometryError,
    EmptySetError,
    EstimationFailedError,
    InvalidParameterError,
    MissingScoreError,
)
from .geometry import PointCloud, RigidTransform, estimate_rigid_transform, transform_points

DEFAULT_GC_THRESHOLD = 0.9
DEFAULT_RANSAC_ITERATIONS = 2000
DEFAULT_INLIER_DIST_PR = 5.0


@dataclass(frozen=True)
class GroupingResult:
    """Boolean keep-mask over the input correspondence set."""

    kept: np.ndarray
    method_name: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "kept", np.asarray(self.kept, dtype=bool))


def group_ss(corrs: CorrespondenceSet, threshold: float) -> GroupingResult:
    """Keep correspondences whose descriptor similarity is >= threshold."""
    if corrs.similarity is None:
        raise MissingScoreError("similarity-score grouping needs per-correspondence similarity values")
    return GroupingResult(corrs.similarity >= threshold, "ss", {"threshold": threshold})


def group_nnsr(corrs: CorrespondenceSet, threshold: float) -> GroupingResult:
    """Keep correspondences whose nearest/second-nearest ratio is < threshold."""
    if corrs.ratio is None:
        raise MissingScoreError("ratio grouping needs per-correspondence ratio values")
    return GroupingResult(corrs.ratio < threshold, "nnsr", {"threshold": threshold})


def group_gc(corrs: CorrespondenceSet, src: PointCloud, tgt: PointCloud,
             compat_params: CompatParams, score_threshold: float = DEFAULT_GC_THRESHOLD,
             threads: int = 1) -> GroupingResult:
    """Largest cluster of correspondences compatible with one query.

    Every correspondence forms a cluster of all others scoring at or above the
    threshold against it (itself always included); the biggest cluster wins,
    ties going to the lowest query index.
    """
    d = len(corrs)
    if d < 2:
        raise EmptySetError(f"geometric consistency needs at least 2 correspondences, got {d}")
    scores = compatibility_matrix(corrs, src, tgt, compat_params, threads=threads)
    member = scores >= score_threshold
    np.fill_diagonal(member, True)  # the query belongs to its own cluster
    sizes = member.sum(axis=1)
    best = int(np.argmax(sizes))  # argmax takes the lowest index on ties
    return GroupingResult(member[best], "gc",
                          {"score_threshold": score_threshold,
                           "alpha_dist": compat_params.alpha_dist,
                           "alpha_ang": compat_params.alpha_ang,
                           "constraints": compat_params.constraints})


def group_ransac(corrs: CorrespondenceSet, src: PointCloud, tgt: PointCloud,
                 iterations: int = DEFAULT_RANSAC_ITERATIONS, inlier_dist: float = 0.0,
                 seed: int = 0, threads: int = 1):
    """RANSAC over 3-correspondence samples; returns (GroupingResult, RigidTransform).

    All sample index triples are drawn up front from one seeded generator, so
    the result is independent of evaluation order and thread count. The kept
    mask comes from the best iteration's transform; the returned transform is
    re-estimated on the kept correspondences (falling back to the iteration
    transform if that re-fit is degenerate).
    """
    d = len(corrs)
    if d < 3:
        raise EmptySetError(f"RANSAC needs at least 3 correspondences, got {d}")
    if iterations < 1:
        raise InvalidParameterError(f"iterations must be >= 1, got {iterations}")
    if inlier_dist <= 0.0:
        raise InvalidParameterError(f"inlier_dist must be positive, got {inlier_dist}")
    corrs.check_bounds(len(src), len(tgt))
    ps = src.points[corrs.src_indices]
    pt = tgt.points[corrs.tgt_indices]

    rng = np.random.default_rng(seed)
    samples = [rng.choice(d, size=3, replace=False) for _ in range(iterations)]

    counts = np.full(iterations, -1, dtype=np.int64)  # -1 marks degenerate samples

    def score_range(lo, hi):
        for it in range(lo, hi):
            try:
                cand = estimate_rigid_transform(ps[samples[it]], pt[samples[it]])
            except DegenerateGeometryError:
                continue  # degenerate sample: skip, not fatal
            residual = transform_points(ps, cand) - pt
            counts[it] = int((np.sqrt((residual * residual).sum(axis=1)) < inlier_dist).sum())

    if threads <= 1 or iterations < 2:
        score_range(0, iterations)
    else:
        block = -(-iterations // threads)
        bounds = [(lo, min(lo + block, iterations)) for lo in range(0, iterations, block)]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda b: score_range(*b), bounds))

    if counts.max() < 0:
        raise EstimationFailedError("all RANSAC samples were degenerate")
    best_it = int(np.argmax(counts))  # first occurrence: lowest iteration index wins ties
    best_transform = estimate_rigid_transform(ps[samples[best_it]], pt[samples[best_it]])

    residual = transform_points(ps, best_transform) - pt
    kept = np.sqrt((residual * residual).sum(axis=1)) < inlier_dist
    final = best_transform
    if kept.sum() >= 3:
        try:
            final = estimate_rigid_transform(ps[kept], pt[kept])
        except DegenerateGeometryError:
            pass
    result = GroupingResult(kept, "ransac",
                            {"iterations": iterations, "inlier_dist": inlier_dist, "seed": seed})
    return result, final

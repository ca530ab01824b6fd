"""Synthetic scene pairs with ground truth: source cloud, rigidly moved noisy
target, and a correspondence set with a controlled inlier ratio.

Outlier pairs are rejection-sampled so their residual under the ground-truth
transform stays at or above the default labeling threshold (5 * pr); with
zero noise the constructed labels therefore coincide exactly with residual
labeling. Synthetic descriptor similarity and nearest/second-nearest ratio
columns are attached so score-based groupers have something to work with:
inliers draw from a slightly more favorable distribution than outliers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .compatibility import CorrespondenceSet
from .errors import InvalidParameterError, SynthesisError
from .geometry import (
    PointCloud,
    RigidTransform,
    cloud_resolution,
    estimate_normals,
    random_rotation,
    rotation_from_euler,
    transform_points,
)

SHAPES = ("sphere", "plane_union", "random_blob", "grid")
NOISE_UNITS = ("world", "pr")

# synthetic descriptor-score distributions: (mean, sigma) per class
_SIM_INLIER, _SIM_OUTLIER = (0.70, 0.12), (0.50, 0.15)
_RATIO_INLIER, _RATIO_OUTLIER = (0.55, 0.15), (0.85, 0.12)

_REJECTION_CAP = 200  # max draw batches for outlier sampling


@dataclass(frozen=True)
class SynthConfig:
    n_points: int = 1000
    shape: str = "sphere"
    n_corrs: int = 500
    inlier_ratio: float = 0.5
    noise_sigma: float = 0.0
    noise_unit: str = "world"
    rotation: str | tuple[float, float, float] = "random"
    translation_range: float = 2.0
    extent: float = 1.0
    normal_k: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise InvalidParameterError(f"shape must be one of {SHAPES}, got {self.shape!r}")
        if self.noise_unit not in NOISE_UNITS:
            raise InvalidParameterError(f"noise_unit must be one of {NOISE_UNITS}")
        if not 0.0 < self.inlier_ratio <= 1.0:
            raise InvalidParameterError(f"inlier_ratio must be in (0, 1], got {self.inlier_ratio}")
        if self.n_corrs < 2:
            raise InvalidParameterError(f"n_corrs must be >= 2, got {self.n_corrs}")
        if self.noise_sigma < 0.0:
            raise InvalidParameterError("noise_sigma must be >= 0")
        if self.n_points < max(self.normal_k + 1, 2):
            raise InvalidParameterError(f"n_points={self.n_points} too small for normal_k={self.normal_k}")
        if self.extent <= 0.0 or self.translation_range < 0.0:
            raise InvalidParameterError("extent must be positive and translation_range non-negative")
        if self.rotation != "random":
            rot = tuple(float(v) for v in self.rotation)
            if len(rot) != 3:
                raise InvalidParameterError("rotation must be 'random' or three Euler angles in radians")
            object.__setattr__(self, "rotation", rot)


@dataclass(frozen=True)
class ScenePair:
    src: PointCloud
    tgt: PointCloud
    corrs: CorrespondenceSet
    gt: RigidTransform
    pr: float


def sample_shape(shape: str, n: int, extent: float, rng: np.random.Generator) -> np.ndarray:
    """Raw positions for one of the supported shapes."""
    if shape == "sphere":
        d = rng.normal(size=(n, 3))
        d /= np.maximum(np.sqrt((d * d).sum(axis=1, keepdims=True)), 1e-12)
        return extent * d
    if shape == "random_blob":
        return extent * rng.normal(size=(n, 3))
    if shape == "grid":
        m = int(np.ceil(n ** (1.0 / 3.0)))
        spacing = extent / max(m - 1, 1)
        axes = np.arange(m) * spacing
        pts = np.stack(np.meshgrid(axes, axes, axes, indexing="ij"), axis=-1).reshape(-1, 3)
        return pts[:n]
    # plane_union: a few square patches with distinct orientations
    patches = 3
    counts = [n // patches + (1 if i < n % patches else 0) for i in range(patches)]
    parts = []
    for m in counts:
        basis = random_rotation(rng)
        offset = 0.5 * rng.uniform(-extent, extent, size=3)
        uv = rng.uniform(-extent, extent, size=(m, 2))
        parts.append(offset + uv[:, 0:1] * basis[:, 0] + uv[:, 1:2] * basis[:, 1])
    return np.concatenate(parts, axis=0)


def _sample_outliers(rng, n_out, src_pts, tgt_pts, gt, threshold):
    """Index pairs whose residual under gt is >= threshold (rejection sampling)."""
    out_src, out_tgt = [], []
    for _ in range(_REJECTION_CAP):
        if len(out_src) >= n_out:
            break
        batch = max(64, 2 * (n_out - len(out_src)))
        i = rng.integers(0, len(src_pts), size=batch)
        j = rng.integers(0, len(tgt_pts), size=batch)
        diff = transform_points(src_pts[i], gt) - tgt_pts[j]
        ok = np.sqrt((diff * diff).sum(axis=1)) >= threshold
        take = min(int(ok.sum()), n_out - len(out_src))
        out_src.extend(i[ok][:take].tolist())
        out_tgt.extend(j[ok][:take].tolist())
    if len(out_src) < n_out:
        raise SynthesisError(
            f"could not sample {n_out} outliers clear of the {threshold:.4g} residual threshold; "
            "the cloud is too small or too tightly clustered")
    return np.array(out_src, dtype=np.int64), np.array(out_tgt, dtype=np.int64)


def synthesize(config: SynthConfig) -> ScenePair:
    """Deterministic scene pair for a config (one seeded generator, fixed draw order)."""
    rng = np.random.default_rng(config.seed)
    src_pts = sample_shape(config.shape, config.n_points, config.extent, rng)

    if config.rotation == "random":
        rot = random_rotation(rng)
    else:
        rot = rotation_from_euler(*config.rotation)
    gt = RigidTransform(rot, rng.uniform(-config.translation_range, config.translation_range, size=3))

    src = PointCloud(src_pts)
    pr = cloud_resolution(src)
    sigma = config.noise_sigma * (pr if config.noise_unit == "pr" else 1.0)
    tgt_pts = transform_points(src_pts, gt)
    if sigma > 0.0:
        tgt_pts = tgt_pts + rng.normal(0.0, sigma, size=tgt_pts.shape)

    n_inliers = int(round(config.inlier_ratio * config.n_corrs))
    if n_inliers > config.n_points:
        raise InvalidParameterError(
            f"{n_inliers} inlier correspondences need at least that many points, got {config.n_points}")
    inlier_idx = rng.choice(config.n_points, size=n_inliers, replace=False)

    threshold = 5.0 * pr
    n_out = config.n_corrs - n_inliers
    if n_out:
        out_src, out_tgt = _sample_outliers(rng, n_out, src_pts, tgt_pts, gt, threshold)
        src_idx = np.concatenate([inlier_idx, out_src])
        tgt_idx = np.concatenate([inlier_idx, out_tgt])
    else:
        src_idx = tgt_idx = inlier_idx
    labels = np.zeros(config.n_corrs, dtype=bool)
    labels[:n_inliers] = True

    def draws(spec_in, spec_out):
        vals = np.empty(config.n_corrs)
        vals[labels] = rng.normal(*spec_in, size=n_inliers)
        vals[~labels] = rng.normal(*spec_out, size=n_out)
        return vals

    similarity = np.clip(draws(_SIM_INLIER, _SIM_OUTLIER), 0.0, 1.0)
    ratio = np.clip(draws(_RATIO_INLIER, _RATIO_OUTLIER), 0.01, 1.0)

    order = rng.permutation(config.n_corrs)
    corrs = CorrespondenceSet(src_idx[order], tgt_idx[order],
                              similarity[order], ratio[order], labels[order])

    src = estimate_normals(src, k=config.normal_k)
    tgt = estimate_normals(PointCloud(tgt_pts), k=config.normal_k)
    return ScenePair(src, tgt, corrs, gt, pr)

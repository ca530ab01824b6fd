"""corrgroup: 3D correspondence grouping.

Classifies putative point-cloud correspondences into inliers and outliers
with compatibility features (top-N pairwise geometric compatibility scores)
fed to a small MLP, alongside classical baselines, a synthetic benchmark
generator, an evaluation harness, an HTTP service, and a CLI.
"""

__version__ = "0.1.0"

from .compatibility import (
    CompatParams,
    Correspondence,
    CorrespondenceSet,
    compat_score,
    compatibility_matrix,
    extract_cf,
)
from .geometry import (
    PointCloud,
    RigidTransform,
    apply_transform,
    cloud_resolution,
    estimate_normals,
    estimate_rigid_transform,
)
from .mlp import MlpModel, TrainConfig, init_model, load_model, predict, save_model, train
from .synthesis import ScenePair, SynthConfig, synthesize

__all__ = [
    "CompatParams",
    "Correspondence",
    "CorrespondenceSet",
    "MlpModel",
    "PointCloud",
    "RigidTransform",
    "ScenePair",
    "SynthConfig",
    "TrainConfig",
    "apply_transform",
    "cloud_resolution",
    "compat_score",
    "compatibility_matrix",
    "estimate_normals",
    "estimate_rigid_transform",
    "extract_cf",
    "init_model",
    "load_model",
    "predict",
    "save_model",
    "synthesize",
    "train",
    "__version__",
]

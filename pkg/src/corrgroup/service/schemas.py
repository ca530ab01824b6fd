"""Pydantic request/response models for the HTTP service.

These mirror the in-memory types; arrays travel as JSON lists of floats,
trained models as base64-encoded CFMLP blobs. Fields that default to None
(alpha_dist, inlier_dist, pr) are resolved server-side from the source
cloud's resolution and echoed back in the response.
"""

from __future__ import annotations

import base64

import numpy as np
from pydantic import BaseModel, ConfigDict

from .. import compatibility, geometry, mlp
from ..errors import InvalidParameterError


def as_array(values, name: str, dtype=np.float64) -> np.ndarray:
    try:
        return np.asarray(values, dtype=dtype)
    except (ValueError, TypeError):
        raise InvalidParameterError(f"{name}: not a rectangular numeric array") from None


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class CloudModel(StrictModel):
    points: list[list[float]]
    normals: list[list[float]] | None = None

    @classmethod
    def from_cloud(cls, cloud: geometry.PointCloud) -> "CloudModel":
        return cls(points=cloud.points.tolist(),
                   normals=None if cloud.normals is None else cloud.normals.tolist())

    def to_cloud(self) -> geometry.PointCloud:
        return geometry.PointCloud(
            as_array(self.points, "points"),
            None if self.normals is None else as_array(self.normals, "normals"))


class TransformModel(StrictModel):
    rotation: list[list[float]]
    translation: list[float]

    @classmethod
    def from_transform(cls, t: geometry.RigidTransform) -> "TransformModel":
        return cls(rotation=t.rotation.tolist(), translation=t.translation.tolist())

    def to_transform(self) -> geometry.RigidTransform:
        return geometry.RigidTransform(as_array(self.rotation, "rotation"),
                                       as_array(self.translation, "translation"))


class CorrsModel(StrictModel):
    src_indices: list[int]
    tgt_indices: list[int]
    similarity: list[float] | None = None
    ratio: list[float] | None = None
    gt_labels: list[bool] | None = None

    @classmethod
    def from_set(cls, corrs: compatibility.CorrespondenceSet) -> "CorrsModel":
        opt = lambda col: None if col is None else col.tolist()
        return cls(src_indices=corrs.src_indices.tolist(), tgt_indices=corrs.tgt_indices.tolist(),
                   similarity=opt(corrs.similarity), ratio=opt(corrs.ratio),
                   gt_labels=opt(corrs.gt_labels))

    def to_set(self) -> compatibility.CorrespondenceSet:
        return compatibility.CorrespondenceSet(
            self.src_indices, self.tgt_indices, self.similarity, self.ratio, self.gt_labels)


class CompatOptions(StrictModel):
    alpha_dist: float | None = None  # None: 10 * source-cloud resolution
    alpha_ang: float = compatibility.DEFAULT_ALPHA_ANG
    constraints: str = "both"

    def resolve(self, src: geometry.PointCloud) -> compatibility.CompatParams:
        alpha_dist = self.alpha_dist
        if alpha_dist is None:
            alpha_dist = compatibility.DEFAULT_ALPHA_DIST_PR * geometry.cloud_resolution(src)
        return compatibility.CompatParams(alpha_dist, self.alpha_ang, self.constraints)


class NormalsOptions(StrictModel):
    estimate_normals: bool = False
    normal_k: int = 10

    def apply(self, cloud: geometry.PointCloud) -> geometry.PointCloud:
        if self.estimate_normals and not cloud.has_normals:
            return geometry.estimate_normals(cloud, k=self.normal_k)
        return cloud


class SynthRequest(StrictModel):
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


class SynthResponse(StrictModel):
    src: CloudModel
    tgt: CloudModel
    corrs: CorrsModel
    gt: TransformModel
    pr: float


class FeatureRequest(StrictModel):
    src: CloudModel
    tgt: CloudModel
    corrs: CorrsModel
    options: CompatOptions = CompatOptions()
    normals: NormalsOptions = NormalsOptions()
    n_dim: int = compatibility.DEFAULT_N_DIM
    threads: int = 1


class FeatureResponse(StrictModel):
    features: list[list[float]]
    alpha_dist: float
    alpha_ang: float
    constraints: str
    n_dim: int


class TrainOptions(StrictModel):
    learning_rate: float = 0.02
    loss: str = "focal"
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25
    epochs: int = 100
    batch_size: int = 256
    neg_pos_ratio: float | None = None
    seed: int = 0
    momentum: float = 0.0
    hidden: list[int] | None = None  # None: the stock 128/128/64/32 stack

    def to_config(self) -> mlp.TrainConfig:
        return mlp.TrainConfig(self.learning_rate, self.loss, self.focal_gamma,
                               self.focal_alpha, self.epochs, self.batch_size,
                               self.neg_pos_ratio, self.seed, self.momentum)


class TrainRequest(StrictModel):
    features: list[list[float]]
    labels: list[bool]
    options: TrainOptions = TrainOptions()


class TrainResponse(StrictModel):
    model_b64: str
    loss_history: list[float]
    epochs_to_converge: int | None


class ClassifyRequest(StrictModel):
    model_b64: str
    features: list[list[float]]
    threshold: float = 0.5


class ClassifyResponse(StrictModel):
    prob_inlier: list[float]
    kept: list[bool]


class GroupRequest(StrictModel):
    method: str  # ss | nnsr | gc | ransac
    corrs: CorrsModel
    src: CloudModel | None = None
    tgt: CloudModel | None = None
    threshold: float = 0.5  # ss / nnsr
    options: CompatOptions = CompatOptions()  # gc
    score_threshold: float = 0.9  # gc
    iterations: int = 2000  # ransac
    inlier_dist: float | None = None  # ransac; None: 5 * source resolution
    seed: int = 0
    threads: int = 1
    normals: NormalsOptions = NormalsOptions()


class GroupResponse(StrictModel):
    kept: list[bool]
    method: str
    params: dict
    transform: TransformModel | None = None


class EvaluateRequest(StrictModel):
    kept: list[bool]
    corrs: CorrsModel
    src: CloudModel
    tgt: CloudModel
    gt: TransformModel
    multiplier: float = 5.0
    pr: float | None = None  # None: source-cloud resolution
    method: str = ""


class EvaluateResponse(StrictModel):
    precision: float
    recall: float
    f_paper: float
    f1: float
    n_group: int
    n_inlier_in_group: int
    n_gt_inlier: int
    method: str
    degenerate: bool
    pr: float
    multiplier: float


class RegisterRequest(StrictModel):
    src: CloudModel
    tgt: CloudModel
    corrs: CorrsModel
    kept: list[bool] | None = None  # None: use every correspondence


class RegisterResponse(StrictModel):
    transform: TransformModel
    rms_residual: float
    n_used: int


class VersionResponse(StrictModel):
    version: str
    model_format_version: int


def encode_model(model: mlp.MlpModel) -> str:
    return base64.b64encode(mlp.model_to_bytes(model)).decode("ascii")


def decode_model(blob_b64: str) -> mlp.MlpModel:
    try:
        raw = base64.b64decode(blob_b64.encode("ascii"), validate=True)
    except Exception:
        raise InvalidParameterError("model_b64 is not valid base64") from None
    return mlp.model_from_bytes(raw)

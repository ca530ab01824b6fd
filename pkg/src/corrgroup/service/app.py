"""FastAPI app exposing the grouping pipeline as stateless JSON endpoints."""

from __future__ import annotations

import numpy as np
from fastapi import FastAPI
from fastapi.responses import JSONResponse

from .. import __version__, baselines, compatibility, evaluation, geometry, mlp, synthesis
from ..errors import CorrGroupError, InvalidParameterError
from . import schemas as s


def create_app() -> FastAPI:
    app = FastAPI(title="corrgroup", version=__version__)

    @app.exception_handler(CorrGroupError)
    async def _corrgroup_error(request, exc: CorrGroupError):
        return JSONResponse(status_code=400,
                            content={"error": type(exc).__name__, "detail": str(exc)})

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.get("/version", response_model=s.VersionResponse)
    def version():
        return s.VersionResponse(version=__version__,
                                 model_format_version=mlp.MODEL_FORMAT_VERSION)

    @app.post("/synthesize", response_model=s.SynthResponse)
    def synthesize(req: s.SynthRequest):
        rotation = req.rotation if req.rotation == "random" else tuple(req.rotation)
        config = synthesis.SynthConfig(
            n_points=req.n_points, shape=req.shape, n_corrs=req.n_corrs,
            inlier_ratio=req.inlier_ratio, noise_sigma=req.noise_sigma,
            noise_unit=req.noise_unit, rotation=rotation,
            translation_range=req.translation_range, extent=req.extent,
            normal_k=req.normal_k, seed=req.seed)
        pair = synthesis.synthesize(config)
        return s.SynthResponse(src=s.CloudModel.from_cloud(pair.src),
                               tgt=s.CloudModel.from_cloud(pair.tgt),
                               corrs=s.CorrsModel.from_set(pair.corrs),
                               gt=s.TransformModel.from_transform(pair.gt),
                               pr=pair.pr)

    @app.post("/features", response_model=s.FeatureResponse)
    def features(req: s.FeatureRequest):
        src = req.normals.apply(req.src.to_cloud())
        tgt = req.normals.apply(req.tgt.to_cloud())
        params = req.options.resolve(src)
        feats = compatibility.extract_cf(req.corrs.to_set(), src, tgt, params,
                                         n_dim=req.n_dim, threads=req.threads)
        return s.FeatureResponse(features=feats.tolist(), alpha_dist=params.alpha_dist,
                                 alpha_ang=params.alpha_ang, constraints=params.constraints,
                                 n_dim=req.n_dim)

    @app.post("/train", response_model=s.TrainResponse)
    def train(req: s.TrainRequest):
        feats = s.as_array(req.features, "features")
        if feats.ndim != 2:
            raise InvalidParameterError("features must be a 2D array")
        config = req.options.to_config()
        hidden = tuple(req.options.hidden) if req.options.hidden else mlp.DEFAULT_HIDDEN
        model = mlp.init_model(feats.shape[1], seed=config.seed, hidden=hidden)
        trained, history = mlp.train(model, feats, np.asarray(req.labels, dtype=bool), config)
        return s.TrainResponse(model_b64=s.encode_model(trained), loss_history=history,
                               epochs_to_converge=mlp.epochs_to_converge(history))

    @app.post("/classify", response_model=s.ClassifyResponse)
    def classify(req: s.ClassifyRequest):
        model = s.decode_model(req.model_b64)
        probs, kept = mlp.predict(model, s.as_array(req.features, "features"),
                                  threshold=req.threshold)
        return s.ClassifyResponse(prob_inlier=probs.tolist(), kept=kept.tolist())

    @app.post("/group", response_model=s.GroupResponse)
    def group(req: s.GroupRequest):
        corrs = req.corrs.to_set()
        transform = None
        if req.method == "ss":
            result = baselines.group_ss(corrs, req.threshold)
        elif req.method == "nnsr":
            result = baselines.group_nnsr(corrs, req.threshold)
        elif req.method in ("gc", "ransac"):
            if req.src is None or req.tgt is None:
                raise InvalidParameterError(f"method {req.method!r} needs src and tgt clouds")
            src = req.normals.apply(req.src.to_cloud())
            tgt = req.normals.apply(req.tgt.to_cloud())
            if req.method == "gc":
                params = req.options.resolve(src)
                result = baselines.group_gc(corrs, src, tgt, params,
                                            score_threshold=req.score_threshold,
                                            threads=req.threads)
            else:
                inlier_dist = req.inlier_dist
                if inlier_dist is None:
                    inlier_dist = evaluation.DEFAULT_INLIER_MULTIPLIER * geometry.cloud_resolution(src)
                result, best = baselines.group_ransac(corrs, src, tgt,
                                                      iterations=req.iterations,
                                                      inlier_dist=inlier_dist,
                                                      seed=req.seed, threads=req.threads)
                transform = s.TransformModel.from_transform(best)
        else:
            raise InvalidParameterError(f"unknown grouping method {req.method!r}")
        return s.GroupResponse(kept=result.kept.tolist(), method=result.method_name,
                               params=result.params, transform=transform)

    @app.post("/evaluate", response_model=s.EvaluateResponse)
    def evaluate(req: s.EvaluateRequest):
        src = req.src.to_cloud()
        tgt = req.tgt.to_cloud()
        corrs = req.corrs.to_set()
        pr = req.pr if req.pr is not None else geometry.cloud_resolution(src)
        labels = evaluation.label_inliers(corrs, src, tgt, req.gt.to_transform(),
                                          pr, multiplier=req.multiplier)
        report = evaluation.score(np.asarray(req.kept, dtype=bool), labels, method=req.method)
        return s.EvaluateResponse(precision=report.precision, recall=report.recall,
                                  f_paper=report.f_paper, f1=report.f1,
                                  n_group=report.n_group,
                                  n_inlier_in_group=report.n_inlier_in_group,
                                  n_gt_inlier=report.n_gt_inlier, method=report.method,
                                  degenerate=report.degenerate, pr=pr,
                                  multiplier=req.multiplier)

    @app.post("/register", response_model=s.RegisterResponse)
    def register(req: s.RegisterRequest):
        src = req.src.to_cloud()
        tgt = req.tgt.to_cloud()
        corrs = req.corrs.to_set()
        if req.kept is not None:
            kept = np.asarray(req.kept, dtype=bool)
            if kept.shape != (len(corrs),):
                raise InvalidParameterError("kept mask length must match the correspondence count")
            corrs = corrs.subset(kept)
        corrs.check_bounds(len(src), len(tgt))
        ps = src.points[corrs.src_indices]
        pt = tgt.points[corrs.tgt_indices]
        transform = geometry.estimate_rigid_transform(ps, pt)
        diff = geometry.transform_points(ps, transform) - pt
        rms = float(np.sqrt((diff * diff).sum(axis=1).mean()))
        return s.RegisterResponse(transform=s.TransformModel.from_transform(transform),
                                  rms_residual=rms, n_used=len(corrs))

    return app

"""Command-line interface: a thin client over the corrgroup service.

Each subcommand reads its input files, sends one request to the service
(an in-process app by default, or `--server URL`), writes the output files,
and drops a JSON run manifest next to the primary output. Outputs are
byte-deterministic for a given manifest; `--threads` never changes results.

Exit codes: 0 success, 1 runtime/data error, 2 usage error. Angle-valued
flags (`--alpha-ang`, `--rotation`) take degrees; the library works in
radians. Flag defaults can be overridden with CORRGROUP_* environment
variables (documented per flag below).
"""

from __future__ import annotations

import argparse
import base64
import json
import os
import sys
import time
from pathlib import Path

import httpx
import numpy as np

from . import __version__, fileio
from .errors import CorrGroupError
from .evaluation import EvalReport, report_to_text, reports_to_csv
from .mlp import MODEL_FORMAT_VERSION
from .service import schemas as s

ENV_PREFIX = "CORRGROUP_"


class UsageError(Exception):
    pass


def _env(name: str, fallback=None):
    return os.environ.get(ENV_PREFIX + name, fallback)


# ---- argparse value types ----------------------------------------------------

def _ratio01(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a number")
    if not 0.0 < v <= 1.0:
        raise argparse.ArgumentTypeError(f"must be in (0, 1], got {text}")
    return v


def _positive_float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a number")
    if v <= 0.0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return v


def _nonneg_float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a number")
    if v < 0.0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return v


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer")
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return v


def _neg_pos_ratio(text):
    if text == "raw":
        return None
    return _positive_float(text)


def _rotation_spec(text):
    """'random' or three comma-separated Euler angles in degrees."""
    if text == "random":
        return "random"
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected 'random' or 'rx,ry,rz' in degrees, got {text!r}")
    try:
        return tuple(float(np.deg2rad(float(p))) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"non-numeric rotation angle in {text!r}") from None


# ---- shared plumbing ---------------------------------------------------------

def _client(args):
    from .client import ServiceClient
    return ServiceClient(args.server)


def _write_manifest(path: Path, subcommand: str, args, inputs: dict, outputs: dict,
                    resolved: dict, wall_time: float) -> None:
    skip = {"func", "server"}
    params = {k: v for k, v in vars(args).items() if k not in skip}
    doc = {
        "tool": "corrgroup",
        "version": __version__,
        "model_format_version": MODEL_FORMAT_VERSION,
        "subcommand": subcommand,
        "parameters": params,
        "inputs": inputs,
        "outputs": outputs,
        "resolved": resolved,
        "wall_time_s": wall_time,
    }
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n",
                    encoding="ascii")


def _load_scene_inputs(src_path, tgt_path, corrs_path):
    src = fileio.read_ply(src_path)
    tgt = fileio.read_ply(tgt_path)
    corrs = fileio.read_corrs(corrs_path, n_src=len(src), n_tgt=len(tgt))
    return src, tgt, corrs


def _compat_options(args) -> s.CompatOptions:
    return s.CompatOptions(alpha_dist=args.alpha_dist,
                           alpha_ang=float(np.deg2rad(args.alpha_ang)),
                           constraints=args.constraints)


def _normals_options(args) -> s.NormalsOptions:
    return s.NormalsOptions(estimate_normals=args.estimate_normals, normal_k=args.normal_k)


# ---- subcommands -------------------------------------------------------------

def cmd_synth(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.monotonic()
    req = s.SynthRequest(n_points=args.n_points, shape=args.shape, n_corrs=args.n_corrs,
                         inlier_ratio=args.inlier_ratio, noise_sigma=args.noise_sigma,
                         noise_unit=args.noise_unit, rotation=args.rotation,
                         translation_range=args.translation_range, extent=args.extent,
                         normal_k=args.normal_k, seed=args.seed)
    with _client(args) as client:
        resp = client.synthesize(req)
    binary = args.ply_format == "binary"
    fileio.write_ply(resp.src.to_cloud(), out / "src.ply", binary=binary)
    fileio.write_ply(resp.tgt.to_cloud(), out / "tgt.ply", binary=binary)
    fileio.write_corrs(resp.corrs.to_set(), out / "corrs.txt")
    fileio.write_transform(resp.gt.to_transform(), out / "gt.txt")
    _write_manifest(out / "manifest.json", "synth", args, inputs={},
                    outputs={k: str(out / v) for k, v in
                             [("src", "src.ply"), ("tgt", "tgt.ply"),
                              ("corrs", "corrs.txt"), ("gt", "gt.txt")]},
                    resolved={"pr": resp.pr}, wall_time=time.monotonic() - t0)
    print(f"wrote scene to {out} (pr={resp.pr:.6g})")


def cmd_extract(args):
    t0 = time.monotonic()
    src, tgt, corrs = _load_scene_inputs(args.src, args.tgt, args.corrs)
    req = s.FeatureRequest(src=s.CloudModel.from_cloud(src), tgt=s.CloudModel.from_cloud(tgt),
                           corrs=s.CorrsModel.from_set(corrs), options=_compat_options(args),
                           normals=_normals_options(args), n_dim=args.n_dim,
                           threads=args.threads)
    with _client(args) as client:
        resp = client.features(req)
    out = Path(args.out)
    fileio.write_features_csv(np.asarray(resp.features), out)
    _write_manifest(Path(str(out) + ".manifest.json"), "extract", args,
                    inputs={"src": args.src, "tgt": args.tgt, "corrs": args.corrs},
                    outputs={"features": str(out)},
                    resolved={"alpha_dist": resp.alpha_dist, "alpha_ang": resp.alpha_ang,
                              "constraints": resp.constraints, "n_dim": resp.n_dim},
                    wall_time=time.monotonic() - t0)
    print(f"wrote {len(resp.features)} x {resp.n_dim} features to {out}")


def _gather_training_data(args, client):
    """(features, labels) from --features/--labels pairs or from --scene dirs."""
    if args.scene and (args.features or args.labels):
        raise UsageError("use either --scene directories or --features/--labels pairs, not both")
    if args.scene:
        feats, labels = [], []
        for scene_dir in args.scene:
            d = Path(scene_dir)
            src, tgt, corrs = _load_scene_inputs(d / "src.ply", d / "tgt.ply", d / "corrs.txt")
            if corrs.gt_labels is None:
                raise UsageError(f"{d / 'corrs.txt'} carries no gt labels; "
                                 "use --features/--labels instead")
            req = s.FeatureRequest(src=s.CloudModel.from_cloud(src),
                                   tgt=s.CloudModel.from_cloud(tgt),
                                   corrs=s.CorrsModel.from_set(corrs),
                                   options=_compat_options(args),
                                   normals=_normals_options(args),
                                   n_dim=args.n_dim, threads=args.threads)
            feats.append(np.asarray(client.features(req).features))
            labels.append(corrs.gt_labels)
        return np.vstack(feats), np.concatenate(labels)
    if not args.features:
        raise UsageError("provide --scene directories or --features/--labels files")
    if not args.labels or len(args.labels) != len(args.features):
        raise UsageError("each --features file needs a matching --labels file")
    feats = [fileio.read_features_csv(p) for p in args.features]
    widths = {f.shape[1] for f in feats}
    if len(widths) > 1:
        raise UsageError(f"feature files disagree on width: {sorted(widths)}")
    labels = [fileio.read_labels(p) for p in args.labels]
    for fp, lp, f, l in zip(args.features, args.labels, feats, labels):
        if f.shape[0] != l.shape[0]:
            raise UsageError(f"{fp} has {f.shape[0]} rows but {lp} has {l.shape[0]} labels")
    return np.vstack(feats), np.concatenate(labels)


def cmd_train(args):
    t0 = time.monotonic()
    loss = {"ce": "cross_entropy", "focal": "focal"}[args.loss]
    with _client(args) as client:
        features, labels = _gather_training_data(args, client)
        options = s.TrainOptions(learning_rate=args.lr, loss=loss,
                                 focal_gamma=args.gamma, focal_alpha=args.focal_alpha,
                                 epochs=args.epochs, batch_size=args.batch,
                                 neg_pos_ratio=args.neg_pos_ratio, seed=args.seed,
                                 momentum=args.momentum)
        resp = client.train(s.TrainRequest(features=features.tolist(),
                                           labels=labels.tolist(), options=options))
    out = Path(args.out)
    out.write_bytes(base64.b64decode(resp.model_b64))
    history_path = Path(args.loss_history or (str(out) + ".loss.csv"))
    with open(history_path, "w", encoding="ascii") as fh:
        fh.write("epoch,loss\n")
        for i, v in enumerate(resp.loss_history, start=1):
            fh.write(f"{i},{v!r}\n")
    _write_manifest(Path(str(out) + ".manifest.json"), "train", args,
                    inputs={"features": args.features, "labels": args.labels,
                            "scenes": args.scene},
                    outputs={"model": str(out), "loss_history": str(history_path)},
                    resolved={"n_samples": int(features.shape[0]),
                              "n_positive": int(labels.sum()),
                              "epochs_to_converge": resp.epochs_to_converge},
                    wall_time=time.monotonic() - t0)
    print(f"trained on {features.shape[0]} samples ({int(labels.sum())} positive); "
          f"final loss {resp.loss_history[-1]:.6g}; model -> {out}")


def cmd_classify(args):
    t0 = time.monotonic()
    model_b64 = base64.b64encode(Path(args.model).read_bytes()).decode("ascii")
    features = fileio.read_features_csv(args.features)
    req = s.ClassifyRequest(model_b64=model_b64, features=features.tolist(),
                            threshold=args.threshold)
    with _client(args) as client:
        resp = client.classify(req)
    out = Path(args.out)
    fileio.write_labels(np.asarray(resp.kept, dtype=bool), out)
    probs_path = Path(args.probs_out or (str(out) + ".probs.csv"))
    fileio.write_features_csv(np.asarray(resp.prob_inlier).reshape(-1, 1), probs_path)
    _write_manifest(Path(str(out) + ".manifest.json"), "classify", args,
                    inputs={"model": args.model, "features": args.features},
                    outputs={"mask": str(out), "probabilities": str(probs_path)},
                    resolved={"n_kept": int(np.sum(resp.kept))},
                    wall_time=time.monotonic() - t0)
    print(f"kept {int(np.sum(resp.kept))} of {len(resp.kept)} correspondences -> {out}")


def cmd_baseline(args):
    t0 = time.monotonic()
    needs_clouds = args.method in ("gc", "ransac")
    if needs_clouds and (args.src is None or args.tgt is None):
        raise UsageError(f"method {args.method!r} needs --src and --tgt clouds")
    if needs_clouds:
        src, tgt, corrs = _load_scene_inputs(args.src, args.tgt, args.corrs)
        src_model, tgt_model = s.CloudModel.from_cloud(src), s.CloudModel.from_cloud(tgt)
    else:
        corrs = fileio.read_corrs(args.corrs)
        src_model = tgt_model = None
    req = s.GroupRequest(method=args.method, corrs=s.CorrsModel.from_set(corrs),
                         src=src_model, tgt=tgt_model, threshold=args.threshold,
                         options=_compat_options(args), score_threshold=args.score_threshold,
                         iterations=args.iterations, inlier_dist=args.inlier_dist,
                         seed=args.seed, threads=args.threads,
                         normals=_normals_options(args))
    with _client(args) as client:
        resp = client.group(req)
    out = Path(args.out)
    fileio.write_labels(np.asarray(resp.kept, dtype=bool), out)
    outputs = {"mask": str(out)}
    if resp.transform is not None:
        transform_path = Path(args.transform_out or (str(out) + ".transform.txt"))
        fileio.write_transform(resp.transform.to_transform(), transform_path)
        outputs["transform"] = str(transform_path)
    _write_manifest(Path(str(out) + ".manifest.json"), "baseline", args,
                    inputs={"corrs": args.corrs, "src": args.src, "tgt": args.tgt},
                    outputs=outputs, resolved=resp.params,
                    wall_time=time.monotonic() - t0)
    print(f"{args.method}: kept {int(np.sum(resp.kept))} of {len(resp.kept)} -> {out}")


def cmd_evaluate(args):
    t0 = time.monotonic()
    src, tgt, corrs = _load_scene_inputs(args.src, args.tgt, args.corrs)
    mask = fileio.read_labels(args.mask)
    gt = fileio.read_transform(args.gt)
    req = s.EvaluateRequest(kept=mask.tolist(), corrs=s.CorrsModel.from_set(corrs),
                            src=s.CloudModel.from_cloud(src), tgt=s.CloudModel.from_cloud(tgt),
                            gt=s.TransformModel.from_transform(gt),
                            multiplier=args.multiplier, method=args.method_name)
    with _client(args) as client:
        resp = client.evaluate(req)
    report = EvalReport(resp.precision, resp.recall, resp.f_paper, resp.f1, resp.n_group,
                        resp.n_inlier_in_group, resp.n_gt_inlier, resp.method, resp.degenerate)
    text = report_to_text(report)
    out_text = Path(args.out + ".txt")
    out_csv = Path(args.out + ".csv")
    out_text.write_text(text, encoding="ascii")
    out_csv.write_text(reports_to_csv([report]), encoding="ascii")
    _write_manifest(Path(args.out + ".manifest.json"), "evaluate", args,
                    inputs={"mask": args.mask, "corrs": args.corrs, "src": args.src,
                            "tgt": args.tgt, "gt": args.gt},
                    outputs={"report_text": str(out_text), "report_csv": str(out_csv)},
                    resolved={"pr": resp.pr, "multiplier": resp.multiplier},
                    wall_time=time.monotonic() - t0)
    print(text, end="")


def cmd_register(args):
    t0 = time.monotonic()
    src, tgt, corrs = _load_scene_inputs(args.src, args.tgt, args.corrs)
    kept = None
    if args.mask:
        kept = fileio.read_labels(args.mask).tolist()
    req = s.RegisterRequest(src=s.CloudModel.from_cloud(src), tgt=s.CloudModel.from_cloud(tgt),
                            corrs=s.CorrsModel.from_set(corrs), kept=kept)
    with _client(args) as client:
        resp = client.register(req)
    out = Path(args.out)
    fileio.write_transform(resp.transform.to_transform(), out)
    _write_manifest(Path(str(out) + ".manifest.json"), "register", args,
                    inputs={"src": args.src, "tgt": args.tgt, "corrs": args.corrs,
                            "mask": args.mask},
                    outputs={"transform": str(out)},
                    resolved={"rms_residual": resp.rms_residual, "n_used": resp.n_used},
                    wall_time=time.monotonic() - t0)
    print(f"registered from {resp.n_used} correspondences; RMS residual {resp.rms_residual!r} -> {out}")


def cmd_serve(args):
    import uvicorn

    from .service import create_app
    uvicorn.run(create_app(), host=args.host, port=args.port)


# ---- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="corrgroup",
        description="3D correspondence grouping: synthetic scenes, compatibility "
                    "features, MLP classification, classical baselines, evaluation, "
                    "and rigid registration.")
    parser.add_argument("--version", action="version",
                        version=f"corrgroup {__version__} (model format v{MODEL_FORMAT_VERSION})")
    sub = parser.add_subparsers(dest="subcommand", metavar="subcommand")

    server = argparse.ArgumentParser(add_help=False)
    server.add_argument("--server", default=_env("SERVER"),
                        help="base URL of a running service; default: run in-process "
                             "(env CORRGROUP_SERVER)")

    threads = argparse.ArgumentParser(add_help=False)
    threads.add_argument("--threads", type=_positive_int, default=int(_env("THREADS", "1")),
                         help="worker thread cap; never changes results (env CORRGROUP_THREADS)")

    extraction = argparse.ArgumentParser(add_help=False)
    extraction.add_argument("--alpha-dist", type=_positive_float, default=None,
                            help="distance bandwidth, world units; default 10x source resolution")
    extraction.add_argument("--alpha-ang", type=_positive_float, default=15.0,
                            help="angle bandwidth in degrees (default 15)")
    extraction.add_argument("--constraints", choices=("both", "distance", "angle"),
                            default="both", help="which constraints the metric uses")
    extraction.add_argument("--estimate-normals", action="store_true",
                            help="estimate normals for clouds that lack them")
    extraction.add_argument("--normal-k", type=_positive_int, default=10,
                            help="neighbor count for normal estimation")

    p = sub.add_parser("synth", parents=[server], help="generate a synthetic scene pair")
    p.add_argument("--n-points", type=_positive_int, default=1000)
    p.add_argument("--shape", choices=("sphere", "plane_union", "random_blob", "grid"),
                   default="sphere")
    p.add_argument("--n-corrs", type=_positive_int, default=500)
    p.add_argument("--inlier-ratio", type=_ratio01, default=0.5)
    p.add_argument("--noise-sigma", type=_nonneg_float, default=0.0)
    p.add_argument("--noise-unit", choices=("world", "pr"), default="world")
    p.add_argument("--rotation", type=_rotation_spec, default="random",
                   help="'random' or 'rx,ry,rz' Euler angles in degrees")
    p.add_argument("--translation-range", type=_nonneg_float, default=2.0)
    p.add_argument("--extent", type=_positive_float, default=1.0)
    p.add_argument("--normal-k", type=_positive_int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ply-format", choices=("ascii", "binary"), default="ascii")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", parents=[server, threads, extraction],
                       help="compute compatibility features")
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--corrs", required=True)
    p.add_argument("--n-dim", type=_positive_int, default=50,
                   help="feature dimensionality N (default 50)")
    p.add_argument("--out", required=True, help="output feature CSV")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", parents=[server, threads, extraction],
                       help="train the MLP classifier")
    p.add_argument("--features", action="append", default=[],
                   help="feature CSV (repeatable, pairs with --labels)")
    p.add_argument("--labels", action="append", default=[],
                   help="0/1 label file (repeatable)")
    p.add_argument("--scene", action="append", default=[],
                   help="scene directory from `synth` (repeatable; labels from corrs.txt)")
    p.add_argument("--n-dim", type=_positive_int, default=50)
    p.add_argument("--loss", choices=("focal", "ce"), default="focal")
    p.add_argument("--gamma", type=_nonneg_float, default=2.0, help="focal exponent")
    p.add_argument("--focal-alpha", type=_ratio01, default=0.25)
    p.add_argument("--lr", type=_positive_float, default=0.02)
    p.add_argument("--epochs", type=_positive_int, default=100)
    p.add_argument("--batch", type=_positive_int, default=256)
    p.add_argument("--neg-pos-ratio", type=_neg_pos_ratio, default=None,
                   help="per-epoch negative:positive subsampling ratio, or 'raw' (default)")
    p.add_argument("--momentum", type=_nonneg_float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--loss-history", default=None,
                   help="loss history CSV path (default <out>.loss.csv)")
    p.add_argument("--out", required=True, help="output model file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("classify", parents=[server], help="classify features with a model")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--probs-out", default=None,
                   help="probabilities CSV path (default <out>.probs.csv)")
    p.add_argument("--out", required=True, help="output mask file")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("baseline", parents=[server, threads, extraction],
                       help="run a classical grouping baseline")
    p.add_argument("--method", choices=("ss", "nnsr", "gc", "ransac"), required=True)
    p.add_argument("--corrs", required=True)
    p.add_argument("--src", default=None)
    p.add_argument("--tgt", default=None)
    p.add_argument("--threshold", type=float, default=0.5,
                   help="similarity (ss) or ratio (nnsr) threshold")
    p.add_argument("--score-threshold", type=float, default=0.9,
                   help="gc compatibility threshold")
    p.add_argument("--iterations", type=_positive_int, default=2000, help="ransac iterations")
    p.add_argument("--inlier-dist", type=_positive_float, default=None,
                   help="ransac inlier distance; default 5x source resolution")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--transform-out", default=None,
                   help="ransac transform path (default <out>.transform.txt)")
    p.add_argument("--out", required=True, help="output mask file")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("evaluate", parents=[server], help="score a mask against ground truth")
    p.add_argument("--mask", required=True)
    p.add_argument("--corrs", required=True)
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--multiplier", type=_positive_float, default=5.0,
                   help="inlier threshold in resolution units (default 5)")
    p.add_argument("--method-name", default="")
    p.add_argument("--out", required=True, help="report path prefix (.txt/.csv added)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("register", parents=[server],
                       help="estimate a rigid transform from kept correspondences")
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--corrs", required=True)
    p.add_argument("--mask", default=None, help="keep-mask file; default: use all")
    p.add_argument("--out", required=True, help="output transform file")
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=_positive_int, default=8000)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "func"):
        parser.print_help()
        return 2
    try:
        args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except CorrGroupError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except httpx.HTTPError as exc:
        print(f"error: request failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Readers and writers for the on-disk formats (see docs/formats.md).

Covered here: a PLY subset (ASCII and binary_little_endian vertices with
float/double x y z and optional nx ny nz), the correspondence text format,
4x4 homogeneous transform files, 0/1 label files, and float CSV feature
tables. Floats are written with repr(), which round-trips exactly.
"""

from __future__ import annotations

import struct

import numpy as np

from .compatibility import CorrespondenceSet
from .errors import (
    CorrsParseError,
    FeaturesParseError,
    InvalidParameterError,
    LabelsParseError,
    NonRigidMatrixError,
    PlyHeaderError,
    PlyPropertyError,
    PlyTruncatedError,
    TransformParseError,
)
from .geometry import PointCloud, RigidTransform

_PLY_FLOAT_TYPES = {"float", "float32", "double", "float64"}
_PLY_SCALAR_SIZES = {
    "char": 1, "int8": 1, "uchar": 1, "uint8": 1,
    "short": 2, "int16": 2, "ushort": 2, "uint16": 2,
    "int": 4, "int32": 4, "uint": 4, "uint32": 4,
    "float": 4, "float32": 4, "double": 8, "float64": 8,
}
_PLY_STRUCT_CODES = {
    "char": "b", "int8": "b", "uchar": "B", "uint8": "B",
    "short": "h", "int16": "h", "ushort": "H", "uint16": "H",
    "int": "i", "int32": "i", "uint": "I", "uint32": "I",
    "float": "f", "float32": "f", "double": "d", "float64": "d",
}
_COORD_NAMES = ("x", "y", "z")
_NORMAL_NAMES = ("nx", "ny", "nz")


def _parse_ply_header(lines: list[bytes]):
    """Returns (format, vertex_count, property list [(type, name)], header line count)."""
    if not lines or lines[0].strip() != b"ply":
        raise PlyHeaderError("line 1: missing 'ply' magic")
    fmt = None
    vertex_count = None
    props: list[tuple[str, str]] = []
    in_vertex = False
    for lineno, raw in enumerate(lines[1:], start=2):
        tokens = raw.decode("ascii", errors="replace").split()
        if not tokens:
            raise PlyHeaderError(f"line {lineno}: empty header line")
        kw = tokens[0]
        if kw == "comment":
            continue
        if kw == "format":
            if len(tokens) != 3 or tokens[1] not in ("ascii", "binary_little_endian"):
                raise PlyHeaderError(f"line {lineno}: unsupported format {' '.join(tokens[1:])!r} "
                                     "(need ascii or binary_little_endian)")
            fmt = tokens[1]
        elif kw == "element":
            if len(tokens) != 3:
                raise PlyHeaderError(f"line {lineno}: malformed element declaration")
            try:
                count = int(tokens[2])
            except ValueError:
                raise PlyHeaderError(f"line {lineno}: element count {tokens[2]!r} is not an integer") from None
            if count < 0:
                raise PlyHeaderError(f"line {lineno}: negative element count {count}")
            if tokens[1] == "vertex":
                if vertex_count is not None:
                    raise PlyHeaderError(f"line {lineno}: duplicate vertex element")
                vertex_count = count
                in_vertex = True
            else:
                if count > 0:
                    raise PlyHeaderError(f"line {lineno}: unsupported element {tokens[1]!r} with nonzero count")
                in_vertex = False
        elif kw == "property":
            if len(tokens) >= 2 and tokens[1] == "list":
                raise PlyPropertyError(f"line {lineno}: list properties are not supported")
            if len(tokens) != 3:
                raise PlyHeaderError(f"line {lineno}: malformed property declaration")
            if in_vertex:
                ptype, name = tokens[1], tokens[2]
                if ptype not in _PLY_SCALAR_SIZES:
                    raise PlyPropertyError(f"line {lineno}: unknown property type {ptype!r}")
                if name in _COORD_NAMES + _NORMAL_NAMES and ptype not in _PLY_FLOAT_TYPES:
                    raise PlyPropertyError(f"line {lineno}: property {name!r} must be float or double, got {ptype!r}")
                props.append((ptype, name))
        elif kw == "end_header":
            if fmt is None:
                raise PlyHeaderError(f"line {lineno}: end_header before a format line")
            if vertex_count is None:
                raise PlyHeaderError(f"line {lineno}: no vertex element declared")
            names = [n for _, n in props]
            missing = [n for n in _COORD_NAMES if n not in names]
            if missing:
                raise PlyHeaderError(f"line {lineno}: vertex element lacks coordinate properties {missing}")
            has = [n for n in _NORMAL_NAMES if n in names]
            if has and len(has) != 3:
                raise PlyHeaderError(f"line {lineno}: normals need all of nx, ny, nz; found only {has}")
            return fmt, vertex_count, props, lineno
        else:
            raise PlyHeaderError(f"line {lineno}: unknown header keyword {kw!r}")
    raise PlyHeaderError("header never terminated with end_header")


def read_ply(path) -> PointCloud:
    """Load a point cloud; normals are attached when nx/ny/nz are present."""
    with open(path, "rb") as fh:
        data = fh.read()
    header_end = data.find(b"end_header")
    if header_end < 0:
        raise PlyHeaderError("header never terminated with end_header")
    nl = data.find(b"\n", header_end)
    body_offset = len(data) if nl < 0 else nl + 1
    header_lines = data[:header_end].splitlines() + [b"end_header"]
    fmt, count, props, _ = _parse_ply_header(header_lines)

    names = [n for _, n in props]
    col = {n: i for i, n in enumerate(names)}
    has_normals = all(n in col for n in _NORMAL_NAMES)
    if count == 0:
        raise PlyHeaderError("vertex count is 0; nothing to load")

    if fmt == "ascii":
        rows = []
        body_lines = data[body_offset:].splitlines()
        data_lines = [(i + 1, ln) for i, ln in enumerate(body_lines) if ln.strip()]
        if len(data_lines) < count:
            raise PlyTruncatedError(f"body has {len(data_lines)} vertex lines, header promised {count}")
        for lineno, raw in data_lines[:count]:
            tokens = raw.split()
            if len(tokens) != len(props):
                raise PlyTruncatedError(
                    f"vertex line {lineno}: expected {len(props)} values, got {len(tokens)}")
            try:
                rows.append([float(t) for t in tokens])
            except ValueError:
                raise PlyTruncatedError(f"vertex line {lineno}: non-numeric vertex value") from None
        table = np.array(rows, dtype=np.float64)
    else:
        fmt_str = "<" + "".join(_PLY_STRUCT_CODES[t] for t, _ in props)
        stride = struct.calcsize(fmt_str)
        body = data[body_offset:]
        if len(body) < stride * count:
            raise PlyTruncatedError(
                f"body holds {len(body)} bytes at offset {body_offset}, "
                f"header promised {stride * count} ({count} vertices x {stride} bytes)")
        if all(t in ("double", "float64") for t, _ in props):
            table = np.frombuffer(body, dtype="<f8", count=count * len(props)
                                  ).reshape(count, len(props)).astype(np.float64)
        else:
            table = np.array([struct.unpack_from(fmt_str, body, i * stride) for i in range(count)],
                             dtype=np.float64)

    points = table[:, [col["x"], col["y"], col["z"]]]
    normals = table[:, [col["nx"], col["ny"], col["nz"]]] if has_normals else None
    if normals is not None:
        lengths = np.sqrt((normals * normals).sum(axis=1))
        if not np.all(np.abs(lengths - 1.0) <= 1e-4):
            raise PlyPropertyError("nx/ny/nz columns are not unit length; refusing to treat them as normals")
        normals = normals / lengths[:, None]
    return PointCloud(points, normals)


def write_ply(cloud: PointCloud, path, binary: bool = False) -> None:
    names = _COORD_NAMES + (_NORMAL_NAMES if cloud.has_normals else ())
    header = ["ply",
              "format binary_little_endian 1.0" if binary else "format ascii 1.0",
              f"element vertex {len(cloud)}"]
    header += [f"property double {n}" for n in names]
    header.append("end_header")
    table = cloud.points if not cloud.has_normals else np.hstack([cloud.points, cloud.normals])
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            fh.write(np.ascontiguousarray(table, dtype="<f8").tobytes())
        else:
            for row in table:
                fh.write((" ".join(repr(float(v)) for v in row) + "\n").encode("ascii"))


def _data_lines(path):
    """(lineno, content) for non-empty lines with '#' comments stripped."""
    out = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, raw in enumerate(fh, start=1):
            content = raw.split("#", 1)[0].strip()
            if content:
                out.append((lineno, content))
    return out


def read_corrs(path, n_src: int | None = None, n_tgt: int | None = None) -> CorrespondenceSet:
    """Correspondence text file: `src tgt [similarity] [ratio] [label]` per line.

    All data lines must carry the same column count. When cloud sizes are
    given, out-of-range indices are rejected here.
    """
    lines = _data_lines(path)
    if not lines:
        raise CorrsParseError(f"{path}: no correspondence lines found")
    width = None
    src_idx, tgt_idx, sims, ratios, labels = [], [], [], [], []
    for lineno, content in lines:
        tokens = content.split()
        if not 2 <= len(tokens) <= 5:
            raise CorrsParseError(f"line {lineno}: expected 2-5 columns, got {len(tokens)}")
        if width is None:
            width = len(tokens)
        elif len(tokens) != width:
            raise CorrsParseError(f"line {lineno}: inconsistent column count "
                                  f"({len(tokens)} here, {width} earlier)")
        try:
            si, ti = int(tokens[0]), int(tokens[1])
        except ValueError:
            raise CorrsParseError(f"line {lineno}: indices must be integers") from None
        if si < 0 or ti < 0:
            raise CorrsParseError(f"line {lineno}: negative correspondence index")
        if n_src is not None and si >= n_src:
            raise CorrsParseError(f"line {lineno}: source index {si} out of range (cloud has {n_src} points)")
        if n_tgt is not None and ti >= n_tgt:
            raise CorrsParseError(f"line {lineno}: target index {ti} out of range (cloud has {n_tgt} points)")
        src_idx.append(si)
        tgt_idx.append(ti)
        try:
            if width >= 3:
                sims.append(float(tokens[2]))
            if width >= 4:
                ratios.append(float(tokens[3]))
        except ValueError:
            raise CorrsParseError(f"line {lineno}: similarity/ratio must be numeric") from None
        if width == 5:
            if tokens[4] not in ("0", "1"):
                raise CorrsParseError(f"line {lineno}: label must be 0 or 1, got {tokens[4]!r}")
            labels.append(tokens[4] == "1")
    return CorrespondenceSet(src_idx, tgt_idx,
                             sims if sims else None,
                             ratios if ratios else None,
                             labels if labels else None)


def write_corrs(corrs: CorrespondenceSet, path) -> None:
    """Columns are positional: a later optional column requires the earlier ones."""
    cols = [corrs.src_indices, corrs.tgt_indices]
    present = [corrs.similarity is not None, corrs.ratio is not None, corrs.gt_labels is not None]
    # positional format: no gaps allowed
    last = max((i for i, p in enumerate(present) if p), default=-1)
    if last >= 0 and not all(present[: last + 1]):
        raise InvalidParameterError(
            "cannot serialize: optional columns must be contiguous (similarity before ratio before label)")
    with open(path, "w", encoding="ascii") as fh:
        for i in range(len(corrs)):
            parts = [str(int(corrs.src_indices[i])), str(int(corrs.tgt_indices[i]))]
            if present[0]:
                parts.append(repr(float(corrs.similarity[i])))
            if present[1]:
                parts.append(repr(float(corrs.ratio[i])))
            if present[2]:
                parts.append(str(int(corrs.gt_labels[i])))
            fh.write(" ".join(parts) + "\n")


def read_transform(path) -> RigidTransform:
    """4x4 row-major homogeneous matrix, validated as rigid (tolerance 1e-6)."""
    lines = _data_lines(path)
    if len(lines) != 4:
        raise TransformParseError(f"{path}: expected 4 matrix rows, found {len(lines)}")
    rows = []
    for lineno, content in lines:
        tokens = content.split()
        if len(tokens) != 4:
            raise TransformParseError(f"line {lineno}: expected 4 values, got {len(tokens)}")
        try:
            rows.append([float(t) for t in tokens])
        except ValueError:
            raise TransformParseError(f"line {lineno}: non-numeric matrix value") from None
    m = np.array(rows)
    if np.abs(m[3] - np.array([0.0, 0.0, 0.0, 1.0])).max() > 1e-6:
        raise NonRigidMatrixError(f"{path}: bottom row must be 0 0 0 1")
    try:
        return RigidTransform(m[:3, :3], m[:3, 3])
    except NonRigidMatrixError as exc:
        raise NonRigidMatrixError(f"{path}: {exc}") from None


def write_transform(transform: RigidTransform, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for row in transform.matrix():
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def read_labels(path) -> np.ndarray:
    """Boolean mask file: one 0/1 per line."""
    lines = _data_lines(path)
    out = []
    for lineno, content in lines:
        if content not in ("0", "1"):
            raise LabelsParseError(f"line {lineno}: expected 0 or 1, got {content!r}")
        out.append(content == "1")
    if not out:
        raise LabelsParseError(f"{path}: no label lines found")
    return np.array(out, dtype=bool)


def write_labels(mask: np.ndarray, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for v in np.asarray(mask, dtype=bool):
            fh.write(f"{int(v)}\n")


def read_features_csv(path) -> np.ndarray:
    """Headerless CSV of floats, one feature row per correspondence."""
    lines = _data_lines(path)
    if not lines:
        raise FeaturesParseError(f"{path}: no feature rows found")
    rows = []
    width = None
    for lineno, content in lines:
        tokens = content.split(",")
        if width is None:
            width = len(tokens)
        elif len(tokens) != width:
            raise FeaturesParseError(f"line {lineno}: inconsistent column count "
                                     f"({len(tokens)} here, {width} earlier)")
        try:
            rows.append([float(t) for t in tokens])
        except ValueError:
            raise FeaturesParseError(f"line {lineno}: non-numeric feature value") from None
    return np.array(rows, dtype=np.float64)


def write_features_csv(features: np.ndarray, path) -> None:
    features = np.asarray(features, dtype=np.float64)
    with open(path, "w", encoding="ascii") as fh:
        for row in np.atleast_2d(features):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")

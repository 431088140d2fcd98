"""File formats: meshes, clouds, poses, symmetries, correspondences, scores, reports.

All lengths are meters; rotations are 9 reals, row-major. Text formats write
floats with ``repr`` so a save/load round trip is exact.

Formats
-------
mesh / cloud   OBJ (``v``/``f``; other records ignored) or PLY (ascii or
               binary_little_endian; vertex x,y,z + optional uchar
               red,green,blue; face ``vertex_indices`` list). Clouds may carry
               an ``int instance`` vertex property.
symmetry       JSON ``{object_id: {"discrete": [{"R": [9], "t": [3]}],
               "continuous": [{"axis": [3], "point": [3]}], "sphere": bool,
               "center": [3]?}}``
poses          JSON lines ``{"scene_id", "object_id", "rotation": [9],
               "translation": [3], "score"}`` (``score`` only on predictions)
correspondences  text, one pair per line ``ox oy oz sx sy sz confidence``;
               ``# key: value`` header lines carry metadata
scores         8-byte magic ``SYMPSCR1``, uint64 LE count, count float32 LE
intrinsics     JSON ``{"fx", "fy", "cx", "cy", "width", "height"}``
report         JSON summary + CSV rows ``scene_id,object_id,metric,error_meters``
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import struct
import warnings
from dataclasses import dataclass

import numpy as np

from ._version import __version__
from .errors import GeometryError, ParseError
from .fitting import CorrespondenceSet
from .geometry import CameraIntrinsics, ColoredPointCloud, RigidTransform, TriangleMesh, orthonormalize
from .metrics import ContinuousAxis, EvaluationReport, InstanceResult, SymmetryAnnotation

SCORES_MAGIC = b"SYMPSCR1"
AXIS_NORM_TOL = 1e-6

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


@dataclass
class PoseRecord:
    scene_id: str
    object_id: str
    pose: RigidTransform
    score: float | None = None

    @property
    def key(self):
        return (self.scene_id, self.object_id)


def _fmt(x: float) -> str:
    return repr(float(x))


# -- OBJ ----------------------------------------------------------------------


def _load_obj(path):
    verts, colors, faces = [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split("#", 1)[0].split()
            if not parts:
                continue
            tag = parts[0]
            try:
                if tag == "v":
                    if len(parts) not in (4, 7):
                        raise ValueError("expected 3 or 6 numbers")
                    verts.append([float(x) for x in parts[1:4]])
                    if len(parts) == 7:
                        colors.append([float(x) for x in parts[4:7]])
                elif tag == "f":
                    idx = []
                    for tok in parts[1:]:
                        i = int(tok.split("/")[0])
                        idx.append(i - 1 if i > 0 else len(verts) + i)
                    if len(idx) < 3:
                        raise ValueError("face needs at least 3 vertices")
                    for k in range(1, len(idx) - 1):
                        faces.append((idx[0], idx[k], idx[k + 1]))
            except ValueError as exc:
                raise ParseError(f"{path}: line {lineno}: {exc}") from None
    if colors and len(colors) != len(verts):
        raise ParseError(f"{path}: vertex colors given for only some vertices")
    try:
        return TriangleMesh(np.array(verts, dtype=np.float64).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3), np.array(colors) if colors else None)
    except GeometryError as exc:
        raise ParseError(f"{path}: {exc}") from None


def _save_obj(mesh: TriangleMesh, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i, v in enumerate(mesh.vertices):
            row = " ".join(_fmt(x) for x in v)
            if mesh.vertex_colors is not None:
                row += " " + " ".join(_fmt(x) for x in mesh.vertex_colors[i])
            fh.write(f"v {row}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


# -- PLY ----------------------------------------------------------------------


@dataclass
class _Element:
    name: str
    count: int
    props: list  # (name, dtype) or (name, ("list", count_dtype, item_dtype))


def _read_ply_header(fh, path):
    first = fh.readline()
    if first.strip() != b"ply":
        raise ParseError(f"{path}: line 1 (offset 0): missing 'ply' magic")
    fmt = None
    elements: list[_Element] = []
    lineno = 1
    while True:
        offset = fh.tell()
        raw = fh.readline()
        lineno += 1
        if not raw:
            raise ParseError(f"{path}: line {lineno} (offset {offset}): header ended without end_header")
        parts = raw.decode("ascii", errors="replace").split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        where = f"{path}: line {lineno} (offset {offset})"
        if parts[0] == "format":
            if len(parts) != 3 or parts[1] not in ("ascii", "binary_little_endian"):
                raise ParseError(f"{where}: unsupported format {' '.join(parts[1:])!r}")
            fmt = parts[1]
        elif parts[0] == "element":
            if len(parts) != 3 or not parts[2].isdigit():
                raise ParseError(f"{where}: malformed element line")
            elements.append(_Element(parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise ParseError(f"{where}: property before any element")
            if len(parts) == 5 and parts[1] == "list":
                if parts[2] not in _PLY_TYPES or parts[3] not in _PLY_TYPES:
                    raise ParseError(f"{where}: unknown list types")
                elements[-1].props.append((parts[4], ("list", _PLY_TYPES[parts[2]], _PLY_TYPES[parts[3]])))
            elif len(parts) == 3 and parts[1] in _PLY_TYPES:
                elements[-1].props.append((parts[2], _PLY_TYPES[parts[1]]))
            else:
                raise ParseError(f"{where}: malformed property line")
        elif parts[0] == "end_header":
            break
        else:
            raise ParseError(f"{where}: unexpected header keyword {parts[0]!r}")
    if fmt is None:
        raise ParseError(f"{path}: header has no format line")
    return fmt, elements


def _read_binary_element(buf: bytes, pos: int, el: _Element, path):
    """Returns (dict name -> array or list of arrays, new position)."""
    scalar = all(not isinstance(t, tuple) for _, t in el.props)
    if scalar:
        dt = np.dtype([(n, "<" + t) for n, t in el.props])
        end = pos + dt.itemsize * el.count
        if end > len(buf):
            raise ParseError(f"{path}: offset {pos}: truncated {el.name} data")
        arr = np.frombuffer(buf, dtype=dt, count=el.count, offset=pos)
        return {n: arr[n] for n, _ in el.props}, end
    # Fast path: every list has the same length as the first one.
    if el.count and len(el.props) == 1:
        name, (_, ct, it) = el.props[0]
        cdt = np.dtype("<" + ct)
        if pos + cdt.itemsize > len(buf):
            raise ParseError(f"{path}: offset {pos}: truncated {el.name} data")
        n0 = int(np.frombuffer(buf, dtype=cdt, count=1, offset=pos)[0])
        rec = np.dtype([("n", cdt), ("v", "<" + it, (n0,))])
        end = pos + rec.itemsize * el.count
        if end <= len(buf):
            arr = np.frombuffer(buf, dtype=rec, count=el.count, offset=pos)
            if np.all(arr["n"] == n0):
                return {name: arr["v"]}, end
    out = {n: [] for n, _ in el.props}
    for _ in range(el.count):
        for n, t in el.props:
            if isinstance(t, tuple):
                cdt, idt = np.dtype("<" + t[1]), np.dtype("<" + t[2])
                if pos + cdt.itemsize > len(buf):
                    raise ParseError(f"{path}: offset {pos}: truncated {el.name} data")
                k = int(np.frombuffer(buf, dtype=cdt, count=1, offset=pos)[0])
                pos += cdt.itemsize
                if pos + idt.itemsize * k > len(buf):
                    raise ParseError(f"{path}: offset {pos}: truncated {el.name} data")
                out[n].append(np.frombuffer(buf, dtype=idt, count=k, offset=pos))
                pos += idt.itemsize * k
            else:
                dt = np.dtype("<" + t)
                if pos + dt.itemsize > len(buf):
                    raise ParseError(f"{path}: offset {pos}: truncated {el.name} data")
                out[n].append(np.frombuffer(buf, dtype=dt, count=1, offset=pos)[0])
                pos += dt.itemsize
    return out, pos


def _read_ascii_elements(lines, start_line, elements, path):
    data = {}
    it = iter(enumerate(lines, start=start_line))
    for el in elements:
        cols = {n: [] for n, _ in el.props}
        for _ in range(el.count):
            try:
                lineno, line = next(it)
            except StopIteration:
                raise ParseError(f"{path}: unexpected end of file in element {el.name!r}") from None
            toks = line.split()
            k = 0
            try:
                for n, t in el.props:
                    if isinstance(t, tuple):
                        cnt = int(toks[k])
                        vals = toks[k + 1 : k + 1 + cnt]
                        if len(vals) != cnt:
                            raise IndexError
                        cols[n].append(np.array(vals, dtype=t[2]))
                        k += 1 + cnt
                    else:
                        cols[n].append(np.array(toks[k], dtype=np.float64 if t[0] == "f" else np.int64))
                        k += 1
                if k != len(toks):
                    raise ParseError(f"{path}: line {lineno}: {len(toks) - k} extra values")
            except (IndexError, ValueError):
                raise ParseError(f"{path}: line {lineno}: malformed {el.name} record") from None
        data[el.name] = cols
    for lineno, line in it:
        if line.strip():
            raise ParseError(f"{path}: line {lineno}: data after last element")
    return data


def _ply_read(path):
    with open(path, "rb") as fh:
        fmt, elements = _read_ply_header(fh, path)
        body_offset = fh.tell()
        header_lines = fh.tell()
        body = fh.read()
    if fmt == "ascii":
        with open(path, "rb") as fh:
            nhead = 0
            while True:
                nhead += 1
                if fh.readline().strip() == b"end_header":
                    break
        lines = body.decode("ascii", errors="replace").splitlines()
        return _read_ascii_elements(lines, nhead + 1, elements, path), elements, fmt
    del header_lines
    data, pos = {}, 0
    for el in elements:
        data[el.name], pos = _read_binary_element(body, pos, el, path)
    if pos != len(body):
        raise ParseError(f"{path}: offset {body_offset + pos}: {len(body) - pos} trailing bytes")
    return data, elements, fmt


def _vertex_arrays(data, path):
    if "vertex" not in data:
        raise ParseError(f"{path}: no vertex element")
    v = data["vertex"]
    for k in ("x", "y", "z"):
        if k not in v:
            raise ParseError(f"{path}: vertex element lacks property {k!r}")
    pos = np.stack([np.asarray(v[k], dtype=np.float64) for k in ("x", "y", "z")], axis=1).reshape(-1, 3)
    colors = None
    if all(k in v for k in ("red", "green", "blue")):
        colors = np.stack([np.asarray(v[k], dtype=np.float64) for k in ("red", "green", "blue")], axis=1).reshape(-1, 3) / 255.0
    return pos, colors


def _load_ply_mesh(path):
    data, _, _ = _ply_read(path)
    pos, colors = _vertex_arrays(data, path)
    faces = np.zeros((0, 3), dtype=np.int64)
    if "face" in data:
        f = data["face"]
        key = "vertex_indices" if "vertex_indices" in f else "vertex_index" if "vertex_index" in f else None
        if key is None:
            raise ParseError(f"{path}: face element lacks vertex_indices")
        lists = f[key]
        if isinstance(lists, np.ndarray) and lists.ndim == 2 and lists.shape[1] == 3:
            faces = lists.astype(np.int64)
        else:
            tris = []
            for poly in lists:
                poly = np.asarray(poly, dtype=np.int64)
                if len(poly) < 3:
                    raise ParseError(f"{path}: face with fewer than 3 vertices")
                for k in range(1, len(poly) - 1):
                    tris.append((poly[0], poly[k], poly[k + 1]))
            faces = np.array(tris, dtype=np.int64).reshape(-1, 3)
    try:
        return TriangleMesh(pos, faces, colors)
    except GeometryError as exc:
        raise ParseError(f"{path}: {exc}") from None


def _ply_header(fmt, n_vert, vprops, n_face=None):
    lines = ["ply", f"format {fmt} 1.0", f"element vertex {n_vert}"]
    lines += [f"property {t} {n}" for n, t in vprops]
    if n_face is not None:
        lines += [f"element face {n_face}", "property list uchar int vertex_indices"]
    lines.append("end_header")
    return ("\n".join(lines) + "\n").encode("ascii")


def _colors_u8(colors):
    return np.rint(np.asarray(colors) * 255.0).astype(np.uint8)


def _write_ply(path, pos, colors=None, faces=None, extra_int=None, binary=True, precision="double"):
    ftype = {"double": ("double", "<f8"), "float": ("float", "<f4")}[precision]
    vprops = [("x", ftype[0]), ("y", ftype[0]), ("z", ftype[0])]
    fields = [("x", ftype[1]), ("y", ftype[1]), ("z", ftype[1])]
    if colors is not None:
        vprops += [("red", "uchar"), ("green", "uchar"), ("blue", "uchar")]
        fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
    if extra_int is not None:
        name, values = extra_int
        vprops.append((name, "int"))
        fields.append((name, "<i4"))
    fmt = "binary_little_endian" if binary else "ascii"
    header = _ply_header(fmt, len(pos), vprops, None if faces is None else len(faces))
    with open(path, "wb") as fh:
        fh.write(header)
        if binary:
            arr = np.zeros(len(pos), dtype=fields)
            arr["x"], arr["y"], arr["z"] = pos[:, 0], pos[:, 1], pos[:, 2]
            if colors is not None:
                c = _colors_u8(colors)
                arr["red"], arr["green"], arr["blue"] = c[:, 0], c[:, 1], c[:, 2]
            if extra_int is not None:
                arr[extra_int[0]] = extra_int[1]
            fh.write(arr.tobytes())
            if faces is not None:
                frec = np.zeros(len(faces), dtype=[("n", "u1"), ("v", "<i4", (3,))])
                frec["n"] = 3
                frec["v"] = faces
                fh.write(frec.tobytes())
        else:
            out = io.StringIO()
            c = _colors_u8(colors) if colors is not None else None
            cast = (lambda x: repr(float(np.float32(x)))) if precision == "float" else _fmt
            for i, p in enumerate(pos):
                row = [cast(x) for x in p]
                if c is not None:
                    row += [str(int(x)) for x in c[i]]
                if extra_int is not None:
                    row.append(str(int(extra_int[1][i])))
                out.write(" ".join(row) + "\n")
            if faces is not None:
                for f in faces:
                    out.write(f"3 {f[0]} {f[1]} {f[2]}\n")
            fh.write(out.getvalue().encode("ascii"))


def _ext(path):
    return os.path.splitext(str(path))[1].lower()


def load_mesh(path) -> TriangleMesh:
    """Read an OBJ or PLY triangle mesh; PLY 8-bit colors are scaled to [0, 1]."""
    ext = _ext(path)
    if ext == ".obj":
        return _load_obj(path)
    if ext == ".ply":
        return _load_ply_mesh(path)
    raise ParseError(f"{path}: unsupported mesh extension {ext!r}")


def save_mesh(mesh: TriangleMesh, path, binary: bool = True, precision: str = "double") -> None:
    ext = _ext(path)
    if ext == ".obj":
        _save_obj(mesh, path)
    elif ext == ".ply":
        _write_ply(path, mesh.vertices, mesh.vertex_colors, mesh.faces, binary=binary, precision=precision)
    else:
        raise ParseError(f"{path}: unsupported mesh extension {ext!r}")


def load_cloud(path, with_labels: bool = False):
    """Read a PLY point cloud; with ``with_labels`` also return the ``instance`` property (or None)."""
    data, _, _ = _ply_read(path)
    pos, colors = _vertex_arrays(data, path)
    try:
        cloud = ColoredPointCloud(pos, colors)
    except GeometryError as exc:
        raise ParseError(f"{path}: {exc}") from None
    if not with_labels:
        return cloud
    lab = data["vertex"].get("instance")
    return cloud, None if lab is None else np.asarray(lab, dtype=np.int64).reshape(-1)


def save_cloud(cloud: ColoredPointCloud, path, labels=None, binary: bool = True) -> None:
    extra = None if labels is None else ("instance", np.asarray(labels, dtype=np.int64))
    _write_ply(path, cloud.positions, cloud.colors, None, extra_int=extra, binary=binary)


# -- poses --------------------------------------------------------------------


def _pose_from(rot, trans, where) -> RigidTransform:
    try:
        R = np.asarray(rot, dtype=np.float64)
        t = np.asarray(trans, dtype=np.float64)
        if R.size != 9 or t.size != 3:
            raise ValueError("rotation needs 9 values and translation 3")
        return RigidTransform(orthonormalize(R.reshape(3, 3)), t.reshape(3))
    except (ValueError, TypeError) as exc:
        raise ParseError(f"{where}: {exc}") from None


def _load_pose_lines(path, need_score: bool) -> list[PoseRecord]:
    records = []
    required = ("scene_id", "object_id", "rotation", "translation")
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{path}: line {lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{where}: invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise ParseError(f"{where}: expected an object")
            for k in required + (("score",) if need_score else ()):
                if k not in obj:
                    raise ParseError(f"{where}: missing field {k!r}")
            pose = _pose_from(obj["rotation"], obj["translation"], where)
            score = obj.get("score")
            records.append(PoseRecord(str(obj["scene_id"]), str(obj["object_id"]), pose, None if score is None else float(score)))
    return records


def load_predictions(path) -> list[PoseRecord]:
    return _load_pose_lines(path, need_score=True)


def load_ground_truth(path) -> list[PoseRecord]:
    return _load_pose_lines(path, need_score=False)


def pose_record_line(rec: PoseRecord) -> str:
    obj = {
        "scene_id": rec.scene_id,
        "object_id": rec.object_id,
        "rotation": [float(x) for x in rec.pose.rotation.ravel()],
        "translation": [float(x) for x in rec.pose.translation],
    }
    if rec.score is not None:
        obj["score"] = float(rec.score)
    return json.dumps(obj)


def save_pose_records(records, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(pose_record_line(rec) + "\n")


# -- symmetry -----------------------------------------------------------------


def _parse_symmetry(oid, entry, where) -> SymmetryAnnotation:
    if not isinstance(entry, dict):
        raise ParseError(f"{where}: entry for {oid!r} must be an object")
    sphere = bool(entry.get("sphere", False))
    center = entry.get("center", [0.0, 0.0, 0.0])
    if sphere:
        if entry.get("discrete") or entry.get("continuous"):
            warnings.warn(f"{oid}: sphere flag set, ignoring discrete/continuous symmetries", stacklevel=3)
        return SymmetryAnnotation(is_textureless_sphere=True, sphere_center=np.asarray(center, dtype=np.float64))
    discrete = []
    for i, d in enumerate(entry.get("discrete", [])):
        discrete.append(_pose_from(d.get("R"), d.get("t", [0.0, 0.0, 0.0]), f"{where}: {oid}.discrete[{i}]"))
    axes = []
    for i, c in enumerate(entry.get("continuous", [])):
        axis = np.asarray(c.get("axis"), dtype=np.float64).reshape(-1)
        if axis.shape != (3,):
            raise ParseError(f"{where}: {oid}.continuous[{i}]: axis needs 3 values")
        norm = float(np.linalg.norm(axis))
        if abs(norm - 1.0) > AXIS_NORM_TOL:
            raise ParseError(f"{where}: {oid}.continuous[{i}]: axis not unit length (norm {norm:.9g})")
        axes.append(ContinuousAxis(axis / norm, np.asarray(c.get("point", [0.0, 0.0, 0.0]), dtype=np.float64)))
    return SymmetryAnnotation(tuple(discrete), tuple(axes), False)


def load_symmetry(path) -> dict[str, SymmetryAnnotation]:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: line {exc.lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: top level must be an object")
    return {str(oid): _parse_symmetry(oid, entry, str(path)) for oid, entry in doc.items()}


def symmetry_to_dict(sym: SymmetryAnnotation) -> dict:
    if sym.is_textureless_sphere:
        return {"sphere": True, "center": [float(x) for x in sym.sphere_center]}
    return {
        "discrete": [{"R": [float(x) for x in d.rotation.ravel()], "t": [float(x) for x in d.translation]} for d in sym.discrete],
        "continuous": [{"axis": [float(x) for x in a.direction], "point": [float(x) for x in a.point]} for a in sym.continuous_axes],
        "sphere": False,
    }


def save_symmetry(table: dict, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump({k: symmetry_to_dict(v) for k, v in table.items()}, fh, indent=2)
        fh.write("\n")


# -- correspondences ----------------------------------------------------------


def load_correspondences(path, with_meta: bool = False):
    meta, rows = {}, []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.strip()
            if not s:
                continue
            if s.startswith("#"):
                body = s[1:].strip()
                if ":" in body:
                    k, v = body.split(":", 1)
                    meta[k.strip()] = v.strip()
                continue
            toks = s.split()
            if len(toks) != 7:
                raise ParseError(f"{path}: line {lineno}: expected 7 values, got {len(toks)}")
            try:
                rows.append([float(x) for x in toks])
            except ValueError:
                raise ParseError(f"{path}: line {lineno}: non-numeric value") from None
    arr = np.array(rows, dtype=np.float64).reshape(-1, 7)
    try:
        corr = CorrespondenceSet(arr[:, :3], arr[:, 3:6], arr[:, 6])
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from None
    return (corr, meta) if with_meta else corr


def save_correspondences(corr: CorrespondenceSet, path, meta: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for k, v in (meta or {}).items():
            fh.write(f"# {k}: {v}\n")
        for o, s, c in zip(corr.object_points, corr.scene_points, corr.confidences):
            fh.write(" ".join(_fmt(x) for x in (*o, *s, c)) + "\n")


# -- heatmap scores -----------------------------------------------------------


def load_scores(path) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 16 or buf[:8] != SCORES_MAGIC:
        raise ParseError(f"{path}: offset 0: bad scores magic")
    (count,) = struct.unpack("<Q", buf[8:16])
    if len(buf) != 16 + 4 * count:
        raise ParseError(f"{path}: offset 16: expected {count} float32 values, found {(len(buf) - 16) / 4:g}")
    return np.frombuffer(buf, dtype="<f4", count=count, offset=16).astype(np.float64)


def save_scores(scores, path) -> None:
    arr = np.asarray(scores, dtype="<f4").reshape(-1)
    with open(path, "wb") as fh:
        fh.write(SCORES_MAGIC + struct.pack("<Q", arr.size) + arr.tobytes())


# -- intrinsics, segment indices ------------------------------------------------


def load_intrinsics(path) -> CameraIntrinsics:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: line {exc.lineno}: invalid JSON ({exc.msg})") from None
    try:
        return CameraIntrinsics(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]), int(d["width"]), int(d["height"]))
    except KeyError as exc:
        raise ParseError(f"{path}: missing field {exc.args[0]!r}") from None
    except GeometryError as exc:
        raise ParseError(f"{path}: {exc}") from None


def save_intrinsics(cam: CameraIntrinsics, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump({"fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy, "width": cam.width, "height": cam.height}, fh)
        fh.write("\n")


def save_indices(indices, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i in indices:
            fh.write(f"{int(i)}\n")


def load_indices(path) -> np.ndarray:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                try:
                    out.append(int(line))
                except ValueError:
                    raise ParseError(f"{path}: line {lineno}: not an integer") from None
    return np.array(out, dtype=np.int64)


# -- reports ------------------------------------------------------------------


def _num(x):
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return None
    return float(x)


def report_to_dict(report: EvaluationReport) -> dict:
    return {
        "toolkit_version": report.version or __version__,
        "config": report.config,
        "metrics": list(report.metrics),
        "n_instances": len(report.instances),
        "auc": {m: _num(report.auc.get(m)) for m in report.metrics},
        "auc_per_object": {m: {o: _num(v) for o, v in sorted(report.auc_per_object.get(m, {}).items())} for m in report.metrics},
    }


def write_report(report: EvaluationReport, path_json, path_csv) -> None:
    """JSON summary (AUCs, config, version) and one CSV row per instance and metric."""
    with open(path_json, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(report_to_dict(report), fh, indent=2)
        fh.write("\n")
    with open(path_csv, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scene_id", "object_id", "metric", "error_meters"])
        for r in report.instances:
            for m in report.metrics:
                w.writerow([r.scene_id, r.object_id, m, _fmt(r.errors[m])])


def read_report(path_json, path_csv) -> EvaluationReport:
    with open(path_json, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    metrics = tuple(doc["metrics"])
    rows: dict = {}
    order = []
    with open(path_csv, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["scene_id", "object_id", "metric", "error_meters"]:
            raise ParseError(f"{path_csv}: line 1: unexpected header {header}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise ParseError(f"{path_csv}: line {lineno}: expected 4 columns")
            key = (row[0], row[1])
            if key not in rows:
                rows[key] = {}
                order.append(key)
            rows[key][row[2]] = float(row[3])
    instances = [InstanceResult(k[0], k[1], rows[k]) for k in order]
    return EvaluationReport(
        metrics,
        instances,
        {m: doc["auc"].get(m) for m in metrics},
        {m: dict(doc["auc_per_object"].get(m, {})) for m in metrics},
        doc.get("config", {}),
        doc.get("toolkit_version", ""),
    )

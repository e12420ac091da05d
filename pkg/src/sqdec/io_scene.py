"""Point-cloud ingestion, instance splitting and decomposition serialization.

File formats are described in ``docs/formats.md``.
"""
from __future__ import annotations

import colorsys
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .geometry import PointCloud, Superquadric, surface_mesh

SCENE_VERSION = "1"
MIN_INSTANCE_POINTS = 16
PALETTE_SIZE = 32


class PlyError(ValueError):
    """Malformed or unsupported PLY input; ``offset`` is the byte position of the problem."""

    def __init__(self, message, offset=None):
        self.offset = offset
        super().__init__(message if offset is None else f"{message} (byte offset {offset})")


_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


@dataclass
class _Element:
    name: str
    count: int
    props: list = field(default_factory=list)  # (name, dtype) pairs


def _parse_header(data: bytes):
    if not data.startswith(b"ply"):
        raise PlyError("missing 'ply' magic", 0)
    end = data.find(b"end_header")
    if end < 0:
        raise PlyError("header has no 'end_header'", len(data))
    body = data.find(b"\n", end)
    if body < 0:
        raise PlyError("header not terminated by newline", len(data))
    fmt = None
    elements: list[_Element] = []
    offset = 0
    for raw in data[:end].split(b"\n"):
        line = raw.decode("ascii", errors="replace").strip()
        tokens = line.split()
        here = offset
        offset += len(raw) + 1
        if not tokens or tokens[0] in ("ply", "comment", "obj_info"):
            continue
        if tokens[0] == "format":
            if len(tokens) != 3:
                raise PlyError(f"bad format line {line!r}", here)
            fmt = tokens[1]
            if fmt not in ("ascii", "binary_little_endian"):
                raise PlyError(f"unsupported PLY format {fmt!r}", here)
        elif tokens[0] == "element":
            if len(tokens) != 3 or not tokens[2].isdigit():
                raise PlyError(f"bad element line {line!r}", here)
            elements.append(_Element(tokens[1], int(tokens[2])))
        elif tokens[0] == "property":
            if not elements:
                raise PlyError("property before any element", here)
            if len(tokens) >= 2 and tokens[1] == "list":
                if elements[-1].name == "vertex":
                    raise PlyError("list properties on vertices are not supported", here)
                elements[-1].props.append((tokens[-1], None))
                continue
            if len(tokens) != 3 or tokens[1] not in _PLY_TYPES:
                raise PlyError(f"bad property line {line!r}", here)
            elements[-1].props.append((tokens[2], _PLY_TYPES[tokens[1]]))
        else:
            raise PlyError(f"unexpected header keyword {tokens[0]!r}", here)
    if fmt is None:
        raise PlyError("header has no format line", 0)
    return fmt, elements, body + 1


def read_ply(path) -> PointCloud:
    data = Path(path).read_bytes()
    fmt, elements, start = _parse_header(data)
    if not elements or elements[0].name != "vertex":
        raise PlyError("first element must be 'vertex'", start)
    for el in elements[1:]:
        if el.count:
            raise PlyError(f"unsupported element layout: non-empty element {el.name!r}", start)
    vertex = elements[0]
    names = [n for n, _ in vertex.props]
    for axis in "xyz":
        if axis not in names:
            raise PlyError(f"vertex element lacks property {axis!r}", start)
    dtype = np.dtype([(n, "<" + t) for n, t in vertex.props])

    if fmt == "binary_little_endian":
        need = vertex.count * dtype.itemsize
        if len(data) - start < need:
            raise PlyError(f"truncated payload: need {need} bytes, have {len(data) - start}", len(data))
        table = np.frombuffer(data, dtype=dtype, count=vertex.count, offset=start)
    else:
        lines = data[start:].split(b"\n")
        table = np.empty(vertex.count, dtype=dtype)
        offset = start
        for i in range(vertex.count):
            if i >= len(lines):
                raise PlyError(f"truncated payload: expected {vertex.count} vertices, got {i}", len(data))
            tokens = lines[i].split()
            if len(tokens) != len(names):
                if not tokens and i >= len(lines) - 1:
                    raise PlyError(f"truncated payload: expected {vertex.count} vertices, got {i}", offset)
                raise PlyError(f"vertex {i} has {len(tokens)} values, expected {len(names)}", offset)
            try:
                table[i] = tuple(
                    int(tok) if dtype[k].kind in "iu" else float(tok) for k, tok in enumerate(tokens)
                )
            except (ValueError, OverflowError) as exc:
                raise PlyError(f"vertex {i}: {exc}", offset) from None
            offset += len(lines[i]) + 1

    positions = np.stack([table[a].astype(np.float64) for a in "xyz"], axis=1)
    normals = None
    if all(n in names for n in ("nx", "ny", "nz")):
        normals = np.stack([table[a].astype(np.float64) for a in ("nx", "ny", "nz")], axis=1)
        lengths = np.linalg.norm(normals, axis=1)
        off = np.abs(lengths - 1.0) > 1e-6
        if np.any(off):
            normals[off] /= np.where(lengths[off] > 0, lengths[off], 1.0)[:, None]
            normals[off & (lengths == 0)] = (0.0, 0.0, 1.0)
    ids = None
    for key in ("instance", "label"):
        if key in names:
            col = table[key]
            if col.dtype.kind not in "iu":
                raise PlyError(f"property {key!r} must be an integer type", start)
            ids = np.array(col, dtype=col.dtype.newbyteorder("="))
            break
    return PointCloud(positions, normals, ids)


def write_ply(pc: PointCloud, path, binary: bool = False) -> None:
    props = [("x", "f8"), ("y", "f8"), ("z", "f8")]
    if pc.normals is not None:
        props += [("nx", "f8"), ("ny", "f8"), ("nz", "f8")]
    id_type = None
    if pc.instance_ids is not None:
        id_type = "u2" if pc.instance_ids.dtype == np.uint16 else "u4"
        props.append(("instance", id_type))
    type_names = {"f8": "double", "u2": "ushort", "u4": "uint"}
    header = ["ply", f"format {'binary_little_endian' if binary else 'ascii'} 1.0",
              f"element vertex {len(pc)}"]
    header += [f"property {type_names[t]} {n}" for n, t in props]
    header.append("end_header")
    table = np.empty(len(pc), dtype=[(n, "<" + t) for n, t in props])
    for k, a in enumerate("xyz"):
        table[a] = pc.positions[:, k]
    if pc.normals is not None:
        for k, a in enumerate(("nx", "ny", "nz")):
            table[a] = pc.normals[:, k]
    if id_type is not None:
        table["instance"] = pc.instance_ids
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            fh.write(table.tobytes())
        else:
            for row in table:
                fh.write((" ".join(
                    repr(float(v)) if table.dtype[k].kind == "f" else str(int(v)) for k, v in enumerate(row)
                ) + "\n").encode("ascii"))


def read_xyz(path) -> PointCloud:
    """Whitespace text: 3 columns (positions) or 6 (positions and normals)."""
    data = np.loadtxt(path, dtype=float, ndmin=2)
    if data.shape[1] == 3:
        return PointCloud(data)
    if data.shape[1] == 6:
        return PointCloud(data[:, :3], data[:, 3:])
    raise ValueError(f"{path}: expected 3 or 6 columns, got {data.shape[1]}")


def write_xyz(pc: PointCloud, path) -> None:
    data = pc.positions if pc.normals is None else np.hstack([pc.positions, pc.normals])
    np.savetxt(path, data, fmt="%.17g")


def load_point_cloud(path, format: Optional[str] = None) -> PointCloud:
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt == "ply":
        return read_ply(path)
    if fmt in ("xyz", "txt"):
        return read_xyz(path)
    raise ValueError(f"unknown point cloud format {fmt!r}")


def save_point_cloud(pc: PointCloud, path, format: Optional[str] = None, binary: bool = False) -> None:
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt == "ply":
        write_ply(pc, path, binary)
    elif fmt in ("xyz", "txt"):
        write_xyz(pc, path)
    else:
        raise ValueError(f"unknown point cloud format {fmt!r}")


# --- instances ------------------------------------------------------------------


def background_id(ids: np.ndarray) -> int:
    """Sentinel for unlabeled points: the maximum of the id dtype (uint32 max for signed ids)."""
    if ids.dtype.kind == "u":
        return int(np.iinfo(ids.dtype).max)
    return int(np.iinfo(np.uint32).max)


@dataclass
class InstanceSplit:
    objects: list  # (instance_id, PointCloud)
    skipped: list  # (instance_id, point count)
    background: int  # number of unlabeled points


def split_instances(pc: PointCloud, min_points: int = MIN_INSTANCE_POINTS) -> InstanceSplit:
    if pc.instance_ids is None:
        raise ValueError("point cloud has no instance ids; use --single-object to fit it as one object")
    ids = pc.instance_ids
    bg = background_id(ids)
    objects, skipped = [], []
    for iid in np.unique(ids):
        if int(iid) == bg:
            continue
        mask = ids == iid
        count = int(mask.sum())
        if count < min_points:
            skipped.append((int(iid), count))
        else:
            objects.append((int(iid), pc.subset(mask)))
    return InstanceSplit(objects, skipped, int(np.sum(ids == bg)))


# --- scene JSON -----------------------------------------------------------------


@dataclass
class SceneNode:
    """Primitives of one object (or of one hierarchy cell), in world coordinates."""

    superquadrics: list
    center: np.ndarray
    scale: float
    children: dict = field(default_factory=dict)  # primitive index -> SceneNode

    @classmethod
    def from_decomposition(cls, dec) -> "SceneNode":
        return cls(list(dec.superquadrics), np.asarray(dec.center, dtype=float), float(dec.scale))

    @classmethod
    def from_hierarchy(cls, node) -> "SceneNode":
        out = cls.from_decomposition(node.decomposition)
        out.children = {j: cls.from_hierarchy(ch) for j, ch in sorted(node.children.items())}
        return out

    def level(self, depth: int) -> list:
        if depth <= 1:
            return list(self.superquadrics)
        out = []
        for j, sq in enumerate(self.superquadrics):
            child = self.children.get(j)
            out.extend(child.level(depth - 1) if child is not None else [sq])
        return out


@dataclass
class SceneObject:
    instance_id: int
    node: SceneNode

    @property
    def superquadrics(self):
        return self.node.superquadrics


@dataclass
class SceneDecomposition:
    objects: list  # SceneObject
    source: dict = field(default_factory=dict)  # {"path": str, "n_points": int}
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        ids = [o.instance_id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate instance ids: {ids}")

    def all_superquadrics(self) -> list:
        return [sq for o in self.objects for sq in o.superquadrics]


def _sq_to_json(sq: Superquadric) -> dict:
    return {
        "scale": [float(v) for v in sq.scale],
        "exponents": [float(v) for v in sq.exponents],
        "rotation_wxyz": [float(v) for v in sq.rotation],
        "translation": [float(v) for v in sq.translation],
        "existence": float(sq.existence),
    }


def _sq_from_json(d: dict) -> Superquadric:
    return Superquadric(d["scale"], d["exponents"], d["rotation_wxyz"], d["translation"], d.get("existence", 1.0))


def _node_to_json(node: SceneNode) -> dict:
    out = {
        "normalization": {"center": [float(v) for v in node.center], "scale": float(node.scale)},
        "superquadrics": [_sq_to_json(sq) for sq in node.superquadrics],
    }
    if node.children:
        out["children"] = [dict(primitive=j, **_node_to_json(ch)) for j, ch in sorted(node.children.items())]
    return out


def _node_from_json(d: dict) -> SceneNode:
    norm = d["normalization"]
    node = SceneNode([_sq_from_json(s) for s in d["superquadrics"]], np.asarray(norm["center"], dtype=float),
                     float(norm["scale"]))
    for ch in d.get("children", []):
        node.children[int(ch["primitive"])] = _node_from_json(ch)
    return node


def scene_to_dict(scene: SceneDecomposition) -> dict:
    return {
        "version": SCENE_VERSION,
        "source": scene.source,
        "config": scene.config,
        "objects": [dict(instance_id=o.instance_id, **_node_to_json(o.node)) for o in scene.objects],
    }


def _format_float(v: float) -> str:
    if not math.isfinite(v):
        raise ValueError(f"cannot serialize non-finite value {v}")
    text = "%.17g" % v
    if "." not in text and "e" not in text and "n" not in text:
        text += ".0"
    return text


def canonical_json(obj, indent: int = 0) -> str:
    """Deterministic JSON text with floats written to 17 significant digits."""
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(obj, bool) or obj is None:
        return {True: "true", False: "false", None: "null"}[obj]
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _format_float(float(obj))
    if isinstance(obj, str):
        import json

        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{canonical_json(str(k))}: {canonical_json(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        if len(obj) == 0:
            return "[]"
        if all(isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(canonical_json(v) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + canonical_json(v, indent + 1) for v in obj) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def save_scene_json(scene: SceneDecomposition, path) -> None:
    Path(path).write_text(canonical_json(scene_to_dict(scene)) + "\n")


def scene_from_dict(d: dict) -> SceneDecomposition:
    version = str(d.get("version"))
    if version != SCENE_VERSION:
        raise ValueError(f"unsupported scene version {version!r} (expected {SCENE_VERSION!r})")
    objects = [SceneObject(int(o["instance_id"]), _node_from_json(o)) for o in d.get("objects", [])]
    return SceneDecomposition(objects, d.get("source", {}), d.get("config", {}))


def load_scene_json(path) -> SceneDecomposition:
    import json

    return scene_from_dict(json.loads(Path(path).read_text()))


# --- OBJ export -----------------------------------------------------------------


def palette(n: int = PALETTE_SIZE) -> list:
    """Fixed colours spread around the hue circle by the golden ratio."""
    out = []
    for k in range(n):
        h = (k * 0.6180339887498949) % 1.0
        s = 0.55 + 0.35 * ((k // 8) % 2)
        v = 0.95 - 0.15 * ((k // 16) % 2)
        out.append(colorsys.hsv_to_rgb(h, s, v))
    return out


def export_obj(scene: SceneDecomposition, path, resolution: int = 16) -> int:
    """Write one OBJ group per instance plus a sibling ``.mtl``; returns the vertex count."""
    if resolution < 4:
        raise ValueError("resolution must be >= 4")
    path = Path(path)
    mtl_path = path.with_suffix(".mtl")
    colors = palette()
    used = sorted({o.instance_id % PALETTE_SIZE for o in scene.objects})
    with open(mtl_path, "w") as fh:
        for k in used:
            r, g, b = colors[k]
            fh.write(f"newmtl color_{k:02d}\nKd {r:.6f} {g:.6f} {b:.6f}\n\n")
    lines = [f"mtllib {mtl_path.name}"]
    base = 1
    for obj in scene.objects:
        lines.append(f"g instance_{obj.instance_id}")
        lines.append(f"usemtl color_{obj.instance_id % PALETTE_SIZE:02d}")
        for sq in obj.superquadrics:
            mesh = surface_mesh(sq, resolution)
            lines.extend("v %.9g %.9g %.9g" % tuple(v) for v in mesh.vertices)
            lines.extend("f %d %d %d" % tuple(f + base) for f in mesh.faces)
            base += len(mesh.vertices)
    path.write_text("\n".join(lines) + "\n")
    return base - 1

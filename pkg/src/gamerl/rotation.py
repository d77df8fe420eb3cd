"""Rotation-game instances: OBJ meshes, a software renderer and image pairs.

Coordinates: x right, y up, z toward the viewer. Rotations are right-handed
and counter-clockwise positive. Angles that are multiples of 90 degrees use
exact matrix entries so that an in-plane quarter turn of the object is an
exact pixel permutation of the rendered image.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .kernels import rasterize
from .move_oracle import RotationTarget

Y_GRID = tuple(range(0, 360, 45))
Z_GRID = tuple(range(0, 360, 30))

CONTROLLED = (RotationTarget.CCW90, RotationTarget.R180)
UNCONTROLLED = (RotationTarget.CW90, RotationTarget.CCW90, RotationTarget.R180)


class MeshError(ValueError):
    """Malformed or empty mesh file."""


class RotationConfigError(ValueError):
    pass


_EXACT = {0: (1.0, 0.0), 90: (0.0, 1.0), 180: (-1.0, 0.0), 270: (0.0, -1.0)}


def rotation_matrix(axis: str, degrees: float) -> np.ndarray:
    if not math.isfinite(degrees):
        raise ValueError("angle must be finite")
    d = math.fmod(float(degrees), 360.0)
    if d < 0:
        d += 360.0
    if d in _EXACT:
        c, s = _EXACT[int(d)]
    else:
        r = math.radians(d)
        c, s = math.cos(r), math.sin(r)
    if axis == "x":
        m = [[1, 0, 0], [0, c, -s], [0, s, c]]
    elif axis == "y":
        m = [[c, 0, s], [0, 1, 0], [-s, 0, c]]
    elif axis == "z":
        m = [[c, -s, 0], [s, c, 0], [0, 0, 1]]
    else:
        raise ValueError(f"axis must be x, y or z, got {axis!r}")
    return np.array(m, dtype=np.float64)


# ---------------------------------------------------------------------------
# meshes
# ---------------------------------------------------------------------------


@dataclass
class Mesh:
    vertices: np.ndarray  # (V, 3) float64
    triangles: np.ndarray  # (T, 3) int64
    colors: Optional[np.ndarray] = None  # (T, 3) uint8
    name: str = ""

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(self.triangles) == 0:
            raise MeshError("mesh has no triangles")
        if not np.all(np.isfinite(self.vertices)):
            raise MeshError("non-finite vertex coordinates")
        if self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices):
            raise MeshError("triangle index out of range")
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)
            if len(self.colors) != len(self.triangles):
                raise MeshError("one color per triangle required")

    def normalized(self) -> "Mesh":
        """Copy scaled uniformly to fit the unit cube centred at the origin."""
        lo, hi = self.vertices.min(axis=0), self.vertices.max(axis=0)
        extent = float((hi - lo).max())
        if extent <= 0:
            raise MeshError("mesh is degenerate (zero extent)")
        verts = (self.vertices - (lo + hi) / 2.0) / extent
        return replace(self, vertices=verts)


def _obj_index(token: str, nverts: int, lineno: int) -> int:
    raw = token.split("/")[0]
    try:
        idx = int(raw)
    except ValueError:
        raise MeshError(f"line {lineno}: bad face index {token!r}") from None
    if idx == 0:
        raise MeshError(f"line {lineno}: face index 0 is invalid (OBJ indices are 1-based)")
    idx = idx - 1 if idx > 0 else nverts + idx
    if not 0 <= idx < nverts:
        raise MeshError(f"line {lineno}: face index {raw} out of range")
    return idx


def parse_obj(text: str, name: str = "") -> Mesh:
    """Parse ``v`` and ``f`` records of an OBJ file.

    Polygons are fan-triangulated. Negative (relative) indices are allowed.
    Optional vertex colors ``v x y z r g b`` (0..1 floats) become per-triangle
    colors by averaging. Other record types are ignored.
    """
    verts: list[tuple[float, float, float]] = []
    vcols: list[Optional[tuple[float, float, float]]] = []
    tris: list[tuple[int, int, int]] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        tag = parts[0]
        if tag == "v":
            if len(parts) < 4:
                raise MeshError(f"line {lineno}: vertex needs 3 coordinates")
            try:
                nums = [float(p) for p in parts[1:]]
            except ValueError:
                raise MeshError(f"line {lineno}: bad vertex coordinate") from None
            verts.append((nums[0], nums[1], nums[2]))
            vcols.append(tuple(nums[3:6]) if len(nums) >= 6 else None)  # type: ignore[arg-type]
        elif tag == "f":
            if len(parts) < 4:
                raise MeshError(f"line {lineno}: face needs at least 3 vertices")
            idx = [_obj_index(p, len(verts), lineno) for p in parts[1:]]
            for k in range(1, len(idx) - 1):
                tris.append((idx[0], idx[k], idx[k + 1]))
    if not verts or not tris:
        raise MeshError("empty geometry: no vertices or faces")
    colors = None
    if all(c is not None for c in vcols):
        vc = np.array(vcols, dtype=np.float64)
        tri_c = vc[np.array(tris)].mean(axis=1)
        colors = np.clip(np.rint(tri_c * 255.0), 0, 255).astype(np.uint8)
    try:
        return Mesh(np.array(verts), np.array(tris), colors, name=name)
    except MeshError:
        raise
    except ValueError as exc:  # pragma: no cover
        raise MeshError(str(exc)) from exc


def load_mesh(path, normalize: bool = True) -> Mesh:
    path = Path(path)
    mesh = parse_obj(path.read_text(encoding="utf-8"), name=path.stem)
    return mesh.normalized() if normalize else mesh


def write_obj(mesh: Mesh, path) -> None:
    lines = [f"v {float(x)!r} {float(y)!r} {float(z)!r}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Orientation:
    """Euler angles applied x, then y, then z, then an extra in-plane ``turn`` about z."""

    rx: float = 0.0
    ry: float = 0.0
    rz: float = 0.0
    turn: float = 0.0

    def then_turn(self, degrees: float) -> "Orientation":
        return replace(self, turn=self.turn + degrees)

    def matrices(self) -> list[np.ndarray]:
        mats = [rotation_matrix("x", self.rx), rotation_matrix("y", self.ry), rotation_matrix("z", self.rz)]
        if self.turn:
            mats.append(rotation_matrix("z", self.turn))
        return mats

    def apply(self, vertices: np.ndarray) -> np.ndarray:
        v = np.asarray(vertices, dtype=np.float64)
        for m in self.matrices():
            v = v @ m.T
        return v

    def to_dict(self) -> dict:
        return {"rx": self.rx, "ry": self.ry, "rz": self.rz, "turn": self.turn}


@dataclass(frozen=True)
class RenderConfig:
    resolution: int = 512
    projection: str = "orthographic"
    # view-aligned light: shading depends on |n_z| only, so in-plane turns stay exact
    light_dir: tuple[float, float, float] = (0.0, 0.0, 1.0)
    background: tuple[int, int, int] = (128, 128, 128)
    margin: float = 0.05
    ambient: float = 0.25
    base_color: tuple[int, int, int] = (214, 168, 92)
    camera_distance: float = 3.0

    def __post_init__(self):
        if self.projection not in ("orthographic", "perspective"):
            raise ValueError(f"unknown projection {self.projection!r}")
        if self.resolution < 2:
            raise ValueError("resolution must be >= 2")


def _shade(verts: np.ndarray, tris: np.ndarray, colors: np.ndarray, cfg: RenderConfig) -> np.ndarray:
    a, b, c = verts[tris[:, 0]], verts[tris[:, 1]], verts[tris[:, 2]]
    n = np.cross(b - a, c - a)
    norm = np.sqrt((n * n).sum(axis=1))
    light = np.asarray(cfg.light_dir, dtype=np.float64)
    light = light / np.sqrt((light * light).sum())
    with np.errstate(invalid="ignore", divide="ignore"):
        lam = np.abs(n @ light) / norm
    lam = np.nan_to_num(lam, nan=0.0)
    intensity = cfg.ambient + (1.0 - cfg.ambient) * lam
    return np.clip(np.rint(colors * intensity[:, None]), 0, 255).astype(np.uint8)


def render(mesh: Mesh, orientation: Orientation, config: RenderConfig = RenderConfig(), backend=None) -> np.ndarray:
    """Render ``mesh`` as an ``(N, N, 3)`` uint8 image.

    The object is assumed to fit the unit cube (see :meth:`Mesh.normalized`);
    the scale depends only on that bound, never on the orientation.
    """
    verts = orientation.apply(mesh.vertices)
    tris = mesh.triangles
    base = mesh.colors if mesh.colors is not None else np.tile(np.array(config.base_color, np.float64), (len(tris), 1))
    colors = _shade(verts, tris, np.asarray(base, dtype=np.float64), config)

    n = config.resolution
    radius = math.sqrt(3.0) / 2.0
    scale = (n / 2.0) * (1.0 - config.margin) / radius
    x, y, z = verts[:, 0], verts[:, 1], verts[:, 2]
    if config.projection == "perspective":
        d = config.camera_distance
        k = d / (d - z)
        sxv, syv = x * k * scale, y * k * scale
    else:
        sxv, syv = x * scale, y * scale
    return rasterize(sxv[tris], syv[tris], z[tris], colors, n, config.background, backend=backend)


def image_rotate_oracle(image: np.ndarray, angle: int) -> np.ndarray:
    """Rotate a square raster counter-clockwise by 90, 180 or 270 degrees.

    Pixel ``(col c, row r)`` goes to ``(col r, row N-1-c)`` under a 90 degree turn.
    """
    image = np.asarray(image)
    if image.ndim < 2 or image.shape[0] != image.shape[1]:
        raise ValueError("image must be square")
    if angle % 90 != 0 or angle % 360 == 0:
        raise ValueError("angle must be 90, 180 or 270")
    n = image.shape[0]
    out = image
    for _ in range((angle // 90) % 4):
        rows, cols = np.indices((n, n))
        # out[N-1-c, r] = src[r, c]
        nxt = np.empty_like(out)
        nxt[n - 1 - cols, rows] = out[rows, cols]
        out = nxt
    return out


def png_bytes(image: np.ndarray) -> bytes:
    from PIL import Image

    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(image), mode="RGB").save(buf, format="PNG", optimize=False)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# instances
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RotationDifficulty:
    angle_set: tuple[RotationTarget, ...] = CONTROLLED

    def __post_init__(self):
        if not self.angle_set:
            raise RotationConfigError("angle set must be non-empty")

    @classmethod
    def controlled(cls, ninety: str = "ccw") -> "RotationDifficulty":
        if ninety not in ("ccw", "cw"):
            raise RotationConfigError("ninety must be 'ccw' or 'cw'")
        t = RotationTarget.CCW90 if ninety == "ccw" else RotationTarget.CW90
        return cls((t, RotationTarget.R180))

    @classmethod
    def uncontrolled(cls) -> "RotationDifficulty":
        return cls(UNCONTROLLED)


@dataclass
class RotationInstance:
    instance_id: str
    mesh_id: str
    init_orientation: Orientation
    target: RotationTarget
    angle_set: tuple[RotationTarget, ...]
    image_init: np.ndarray = field(repr=False)
    image_rot: np.ndarray = field(repr=False)
    example_mesh_id: str = ""
    example_orientation: Optional[Orientation] = None
    example_target: RotationTarget = RotationTarget.R180
    example_init: Optional[np.ndarray] = field(default=None, repr=False)
    example_rot: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def example_pair_ref(self) -> str:
        return f"{self.example_mesh_id}@{self.example_orientation.ry:g}/{self.example_orientation.rz:g}" if self.example_orientation else ""


def sample_orientation(rng: np.random.Generator) -> Orientation:
    return Orientation(rx=0.0, ry=float(Y_GRID[rng.integers(len(Y_GRID))]), rz=float(Z_GRID[rng.integers(len(Z_GRID))]))


def render_pair(mesh: Mesh, orient: Orientation, target: RotationTarget, config: RenderConfig):
    init = render(mesh, orient, config)
    rot = render(mesh, orient.then_turn(target.value), config)
    return init, rot


def make_instance(
    mesh: Mesh,
    difficulty: RotationDifficulty,
    rng: np.random.Generator,
    example_pool: Sequence[Mesh],
    config: RenderConfig = RenderConfig(),
    target: Optional[RotationTarget] = None,
    instance_id: str = "",
) -> RotationInstance:
    """Sample an initial pose on the grids, a target angle and an example pair."""
    if not example_pool:
        raise RotationConfigError("example mesh pool is empty")
    orient = sample_orientation(rng)
    drawn = difficulty.angle_set[int(rng.integers(len(difficulty.angle_set)))]
    target = target if target is not None else drawn
    if target not in difficulty.angle_set:
        raise RotationConfigError(f"target {target} outside the active angle set")
    ex_mesh = example_pool[int(rng.integers(len(example_pool)))]
    ex_orient = sample_orientation(rng)

    init, rot = render_pair(mesh, orient, target, config)
    ex_init, ex_rot = render_pair(ex_mesh, ex_orient, RotationTarget.R180, config)
    return RotationInstance(
        instance_id=instance_id or f"{mesh.name}-{orient.ry:g}-{orient.rz:g}-{target.name}",
        mesh_id=mesh.name,
        init_orientation=orient,
        target=target,
        angle_set=tuple(difficulty.angle_set),
        image_init=init,
        image_rot=rot,
        example_mesh_id=ex_mesh.name,
        example_orientation=ex_orient,
        example_init=ex_init,
        example_rot=ex_rot,
    )


def oracle_check(instance: RotationInstance) -> bool:
    """True when the rotated image is an exact pixel rotation of the initial one."""
    expected = image_rotate_oracle(instance.image_init, instance.target.ccw_degrees)
    return bool(np.array_equal(expected, instance.image_rot))


# ---------------------------------------------------------------------------
# built-in asymmetric test meshes
# ---------------------------------------------------------------------------


def _box(x0, y0, z0, x1, y1, z1, color):
    v = np.array(
        [[x0, y0, z0], [x1, y0, z0], [x1, y1, z0], [x0, y1, z0], [x0, y0, z1], [x1, y0, z1], [x1, y1, z1], [x0, y1, z1]],
        dtype=np.float64,
    )
    quads = [(0, 3, 2, 1), (4, 5, 6, 7), (0, 1, 5, 4), (2, 3, 7, 6), (1, 2, 6, 5), (0, 4, 7, 3)]
    tris = []
    for a, b, c, d in quads:
        tris += [(a, b, c), (a, c, d)]
    return v, np.array(tris), np.tile(np.array(color, np.uint8), (len(tris), 1))


def _merge(parts, name):
    verts, tris, cols, off = [], [], [], 0
    for v, t, c in parts:
        verts.append(v)
        tris.append(t + off)
        cols.append(c)
        off += len(v)
    return Mesh(np.vstack(verts), np.vstack(tris), np.vstack(cols), name=name).normalized()


def builtin_meshes() -> list[Mesh]:
    """A handful of small, rotationally asymmetric block objects."""
    specs = {
        "l_block": [(0, 0, 0, 3, 1, 1, (200, 60, 60)), (0, 1, 0, 1, 4, 1, (60, 160, 60))],
        "t_block": [(0, 3, 0, 3, 4, 1, (60, 90, 200)), (1, 0, 0, 2, 3, 1, (220, 180, 40))],
        "step": [(0, 0, 0, 3, 1, 2, (150, 80, 200)), (0, 1, 0, 2, 2, 2, (60, 200, 200)), (0, 2, 0, 1, 3, 1, (240, 140, 40))],
        "flag": [(0, 0, 0, 0.5, 4, 0.5, (120, 120, 120)), (0.5, 2.5, 0, 2.5, 4, 0.3, (230, 40, 40))],
        "arrow": [(0, 1, 0, 3, 2, 1, (40, 180, 90)), (3, 0, 0, 4, 3, 1, (240, 200, 60)), (0, 2, 0, 0.5, 3.5, 0.5, (90, 60, 220))],
        "chair": [(0, 0, 0, 2, 0.4, 2, (160, 110, 60)), (0, 0.4, 0, 0.4, 3, 2, (120, 80, 40)), (1.6, -2, 1.6, 2, 0, 2, (90, 60, 30))],
    }
    return [_merge([_box(*s[:6], s[6]) for s in parts], name) for name, parts in specs.items()]


def write_builtin_meshes(directory) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for m in builtin_meshes():
        p = directory / f"{m.name}.obj"
        vcol = np.zeros((len(m.vertices), 3), dtype=np.uint8)
        vcol[m.triangles.reshape(-1)] = np.repeat(m.colors, 3, axis=0)
        lines = [
            f"v {float(x)!r} {float(y)!r} {float(z)!r} {r / 255:.6f} {g / 255:.6f} {b / 255:.6f}"
            for (x, y, z), (r, g, b) in zip(m.vertices, vcol.astype(int))
        ]
        lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in m.triangles]
        p.write_text("\n".join(lines) + "\n", encoding="utf-8")
        paths.append(p)
    return paths

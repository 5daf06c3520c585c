"""Billiard domains and their triangulations.

Three domain families are supported: plain rectangles, the elementary domain
of a Sinai billiard (rectangle with a quarter circle removed from the corner
at the origin), and a pair of rectangular chambers separated by a thin
impenetrable wall.  All lengths are in units of the reference scale L, so
areas carry L^2.

Meshes are deterministic: a structured grid covers the bounding rectangle,
vertices inside (or too close to) the quarter circle are dropped, and the
boundary layer is re-triangulated against a chord polyline along the arc via
a Delaunay pass over the combined point set.  The quarter circle sits at the
origin so that the opposite walls stay straight and full length, which makes
dA/dLx = Ly and dA/dLy = Lx exact.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.spatial import Delaunay

from .errors import MeshError, ValidationError


# --------------------------------------------------------------------------
# domain specifications
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Rectangle:
    """Axis-aligned rectangular billiard [0, lx] x [0, ly]."""

    lx: float
    ly: float

    def __post_init__(self):
        if not (self.lx > 0 and self.ly > 0):
            raise ValidationError("Rectangle: side lengths must be positive")


@dataclass(frozen=True)
class SinaiElementary:
    """Rectangle with a quarter disc of given radius removed at the origin."""

    lx: float
    ly: float
    radius: float

    def __post_init__(self):
        if not (self.lx > 0 and self.ly > 0):
            raise ValidationError("SinaiElementary: side lengths must be positive")
        if not (0 < self.radius < min(self.lx, self.ly)):
            raise ValidationError(
                "SinaiElementary: radius must satisfy 0 < R < min(lx, ly)"
            )


@dataclass(frozen=True)
class TwoBox:
    """Two rectangular chambers of common height separated by a rigid wall.

    The left box spans x in [0, lx_left]; the right box spans
    [lx_left + wall, lx_left + wall + lx_right].  The wall itself is excluded
    volume and is never meshed.
    """

    lx_left: float
    lx_right: float
    ly: float
    wall: float

    def __post_init__(self):
        if not (self.lx_left > 0 and self.lx_right > 0 and self.ly > 0):
            raise ValidationError("TwoBox: box dimensions must be positive")
        if not (0 < self.wall < 0.1 * self.lx_left):
            raise ValidationError("TwoBox: wall width must satisfy 0 < wall << lx_left")

    @property
    def right_offset(self) -> float:
        return self.lx_left + self.wall


DomainSpec = Rectangle | SinaiElementary | TwoBox


def domain_area(spec: DomainSpec):
    """Exact area of the domain; for TwoBox a (left, right) pair."""
    if isinstance(spec, Rectangle):
        return spec.lx * spec.ly
    if isinstance(spec, SinaiElementary):
        return spec.lx * spec.ly - np.pi * spec.radius**2 / 4.0
    if isinstance(spec, TwoBox):
        return (spec.lx_left * spec.ly, spec.lx_right * spec.ly)
    raise ValidationError(f"unknown domain spec {type(spec).__name__}")


def domain_perimeter(spec: DomainSpec) -> float:
    """Boundary length (both chambers summed for TwoBox)."""
    if isinstance(spec, Rectangle):
        return 2.0 * (spec.lx + spec.ly)
    if isinstance(spec, SinaiElementary):
        straight = (spec.lx - spec.radius) + (spec.ly - spec.radius) + spec.lx + spec.ly
        return straight + np.pi * spec.radius / 2.0
    if isinstance(spec, TwoBox):
        return 2.0 * (spec.lx_left + spec.ly) + 2.0 * (spec.lx_right + spec.ly)
    raise ValidationError(f"unknown domain spec {type(spec).__name__}")


def area_derivative(spec: DomainSpec, param: str) -> float:
    """dA/d(param) for the supported deformation parameters."""
    if isinstance(spec, Rectangle):
        if param == "lx":
            return spec.ly
        if param == "ly":
            return spec.lx
    elif isinstance(spec, SinaiElementary):
        if param == "lx":
            return spec.ly
        if param == "ly":
            return spec.lx
        if param == "radius":
            return -np.pi * spec.radius / 2.0
    raise ValidationError(f"no area derivative for parameter '{param}' of {type(spec).__name__}")


def deformed_spec(spec: DomainSpec, param: str, value: float) -> DomainSpec:
    """Copy of `spec` with one deformation parameter replaced."""
    if param not in {"lx", "ly", "radius"}:
        raise ValidationError(f"unknown deformation parameter '{param}'")
    if isinstance(spec, Rectangle) and param in {"lx", "ly"}:
        return replace(spec, **{param: value})
    if isinstance(spec, SinaiElementary):
        return replace(spec, **{param: value})
    raise ValidationError(f"cannot deform {type(spec).__name__} in '{param}'")


# --------------------------------------------------------------------------
# meshes
# --------------------------------------------------------------------------

@dataclass
class Mesh:
    """Conforming triangle mesh.

    vertices : (nv, 2) float array of coordinates.
    triangles : (nt, 3) int array of CCW vertex triples.
    boundary : (nv,) bool flags, True exactly for vertices on the domain
        boundary.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary: np.ndarray

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)

    def triangle_areas(self) -> np.ndarray:
        p0 = self.vertices[self.triangles[:, 0]]
        p1 = self.vertices[self.triangles[:, 1]]
        p2 = self.vertices[self.triangles[:, 2]]
        return 0.5 * ((p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
                      - (p1[:, 1] - p0[:, 1]) * (p2[:, 0] - p0[:, 0]))

    def area(self) -> float:
        return float(self.triangle_areas().sum())


def boundary_edges(triangles: np.ndarray) -> np.ndarray:
    """Edges that belong to exactly one triangle, as (ne, 2) vertex pairs."""
    e = np.vstack([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    e = np.sort(e, axis=1)
    eu, cnt = np.unique(e, axis=0, return_counts=True)
    return eu[cnt == 1]


def validate_mesh(mesh: Mesh, min_area: float = 1e-14) -> None:
    """Check structural invariants; raise MeshError on violation."""
    areas = mesh.triangle_areas()
    if len(areas) == 0:
        raise MeshError("mesh has no triangles")
    worst = int(np.argmin(areas))
    if areas[worst] <= min_area:
        raise MeshError(f"degenerate triangle {worst} (area {areas[worst]:.3e})")
    be = boundary_edges(mesh.triangles)
    on_be = np.zeros(mesh.num_vertices, dtype=bool)
    on_be[be.ravel()] = True
    if not np.array_equal(on_be, mesh.boundary):
        nbad = int((on_be != mesh.boundary).sum())
        raise MeshError(f"boundary flags inconsistent with edge incidence ({nbad} vertices)")


def _structured_rectangle(lx: float, ly: float, nx: int, ny: int,
                          x0: float = 0.0, y0: float = 0.0):
    xs = x0 + np.linspace(0.0, lx, nx + 1)
    ys = y0 + np.linspace(0.0, ly, ny + 1)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    verts = np.column_stack([gx.ravel(), gy.ravel()])
    i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    v00 = (i * (ny + 1) + j).ravel()
    v10 = ((i + 1) * (ny + 1) + j).ravel()
    v11 = ((i + 1) * (ny + 1) + j + 1).ravel()
    v01 = (i * (ny + 1) + j + 1).ravel()
    tris = np.vstack([np.column_stack([v00, v10, v11]),
                      np.column_stack([v00, v11, v01])])
    return verts, tris.astype(np.int64)


def _grid_divisions(lx: float, ly: float, resolution: int):
    h = min(lx, ly) / resolution
    nx = max(1, int(round(lx / h)))
    ny = max(1, int(round(ly / h)))
    return nx, ny, h


def _rectangle_mesh(spec: Rectangle, resolution: int) -> Mesh:
    nx, ny, _ = _grid_divisions(spec.lx, spec.ly, resolution)
    verts, tris = _structured_rectangle(spec.lx, spec.ly, nx, ny)
    flags = _rectangle_boundary_flags(verts, spec.lx, spec.ly)
    return Mesh(verts, tris, flags)


def _rectangle_boundary_flags(verts, lx, ly, x0=0.0, y0=0.0, tol=1e-12):
    return (
        (np.abs(verts[:, 0] - x0) < tol)
        | (np.abs(verts[:, 0] - (x0 + lx)) < tol)
        | (np.abs(verts[:, 1] - y0) < tol)
        | (np.abs(verts[:, 1] - (y0 + ly)) < tol)
    )


def _sinai_mesh(spec: SinaiElementary, resolution: int, arc_points: int) -> Mesh:
    lx, ly, radius = spec.lx, spec.ly, spec.radius
    nx, ny, h = _grid_divisions(lx, ly, resolution)
    verts, _ = _structured_rectangle(lx, ly, nx, ny)
    r = np.hypot(verts[:, 0], verts[:, 1])
    # Keep a clear margin to the arc so the Delaunay strip has no slivers.
    keep = r >= radius + 0.5 * h
    pts = verts[keep]
    theta = np.linspace(0.0, np.pi / 2.0, arc_points + 1)
    arc = np.column_stack([radius * np.cos(theta), radius * np.sin(theta)])
    allpts = np.vstack([pts, arc])

    tri = Delaunay(allpts)
    t = tri.simplices.astype(np.int64)
    centroids = allpts[t].mean(axis=1)
    outside_hole = np.hypot(centroids[:, 0], centroids[:, 1]) >= radius
    t = t[outside_hole]

    p0, p1, p2 = allpts[t[:, 0]], allpts[t[:, 1]], allpts[t[:, 2]]
    twice_area = (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1]) \
        - (p1[:, 1] - p0[:, 1]) * (p2[:, 0] - p0[:, 0])
    flip = twice_area < 0
    t[flip] = t[flip][:, ::-1]
    t = t[np.abs(twice_area) > 1e-12 * h * h]

    flags = _rectangle_boundary_flags(allpts, lx, ly)
    on_arc = np.abs(np.hypot(allpts[:, 0], allpts[:, 1]) - radius) < 1e-12
    flags |= on_arc
    mesh = Mesh(allpts, t, flags)
    validate_mesh(mesh, min_area=1e-10 * h * h)
    return mesh


def build_mesh(spec: DomainSpec, resolution: int, arc_points: int | None = None):
    """Triangulate a domain at the given grid resolution.

    `resolution` sets the target edge count along the shorter side; the
    quarter-circle boundary is approximated by `arc_points` chords
    (default 2 * resolution).  For TwoBox a (left, right) pair of disjoint
    meshes is returned.
    """
    if resolution < 4:
        raise ValidationError("resolution must be at least 4")
    if isinstance(spec, Rectangle):
        return _rectangle_mesh(spec, resolution)
    if isinstance(spec, SinaiElementary):
        if arc_points is None:
            arc_points = 2 * resolution
        if arc_points < 8:
            raise ValidationError("arc_points must be at least 8")
        return _sinai_mesh(spec, resolution, arc_points)
    if isinstance(spec, TwoBox):
        left = _rectangle_mesh(Rectangle(spec.lx_left, spec.ly), resolution)
        nx, ny, _ = _grid_divisions(spec.lx_right, spec.ly, resolution)
        vr, tr = _structured_rectangle(spec.lx_right, spec.ly, nx, ny,
                                       x0=spec.right_offset)
        fr = _rectangle_boundary_flags(vr, spec.lx_right, spec.ly, x0=spec.right_offset)
        return left, Mesh(vr, tr, fr)
    raise ValidationError(f"unknown domain spec {type(spec).__name__}")


# --------------------------------------------------------------------------
# fixed-topology deformation
# --------------------------------------------------------------------------

def deform_mesh(mesh: Mesh, reference: DomainSpec, param: str, value: float) -> Mesh:
    """Map mesh vertices onto the deformed domain, keeping the topology.

    Re-meshing a deformed geometry from scratch can flip the set of removed
    near-arc vertices and the grid divisions, which makes the discretization
    error jump between parameter samples and ruins finite-difference level
    derivatives.  Instead the reference mesh is mapped by a continuous,
    piecewise-smooth vertex motion: stretches anchored at the scatterer for
    the side lengths, a radial blend for the radius.
    """
    v = mesh.vertices.copy()
    if isinstance(reference, Rectangle):
        if param == "lx":
            v[:, 0] *= value / reference.lx
        elif param == "ly":
            v[:, 1] *= value / reference.ly
        else:
            raise ValidationError(f"cannot deform Rectangle in '{param}'")
    elif isinstance(reference, SinaiElementary):
        radius = reference.radius
        if param == "lx":
            anchor = radius
            m = v[:, 0] > anchor
            v[m, 0] = anchor + (v[m, 0] - anchor) * (value - anchor) / (reference.lx - anchor)
        elif param == "ly":
            anchor = radius
            m = v[:, 1] > anchor
            v[m, 1] = anchor + (v[m, 1] - anchor) * (value - anchor) / (reference.ly - anchor)
        elif param == "radius":
            outer = min(reference.lx, reference.ly)
            if not (0 < value < outer):
                raise ValidationError("deformed radius out of range")
            r = np.hypot(v[:, 0], v[:, 1])
            m = (r > 0) & (r < outer)
            rn = value + (r[m] - radius) * (outer - value) / (outer - radius)
            v[m] *= (rn / r[m])[:, None]
        else:
            raise ValidationError(f"cannot deform SinaiElementary in '{param}'")
    else:
        raise ValidationError(f"cannot deform {type(reference).__name__}")
    out = Mesh(v, mesh.triangles, mesh.boundary)
    if out.triangle_areas().min() <= 0:
        raise MeshError(f"deformation {param}={value} inverted a triangle")
    return out


# --------------------------------------------------------------------------
# plain-text export
# --------------------------------------------------------------------------

def write_mesh(path: str | Path, mesh: Mesh) -> None:
    """Write `vertices <n>` / `x y flag` rows, then `triangles <m>` / `i j k`."""
    path = Path(path)
    with path.open("w") as fh:
        fh.write(f"vertices {mesh.num_vertices}\n")
        for (x, y), flag in zip(mesh.vertices, mesh.boundary):
            fh.write(f"{x:.17g} {y:.17g} {int(flag)}\n")
        fh.write(f"triangles {mesh.num_triangles}\n")
        for i, j, k in mesh.triangles:
            fh.write(f"{i} {j} {k}\n")


def read_mesh(path: str | Path) -> Mesh:
    path = Path(path)
    with path.open() as fh:
        tag, nv = fh.readline().split()
        if tag != "vertices":
            raise MeshError(f"{path}: expected 'vertices <count>' header")
        nv = int(nv)
        rows = [fh.readline().split() for _ in range(nv)]
        verts = np.array([[float(r[0]), float(r[1])] for r in rows])
        flags = np.array([bool(int(r[2])) for r in rows])
        tag, nt = fh.readline().split()
        if tag != "triangles":
            raise MeshError(f"{path}: expected 'triangles <count>' header")
        nt = int(nt)
        tris = np.array([[int(x) for x in fh.readline().split()] for _ in range(nt)],
                        dtype=np.int64)
    return Mesh(verts, tris, flags)

"""Hybrid FE/FD discretization of the rectangular computational domain.

The outer rectangle ``D`` carries a structured FD grid of square cells.  The
inner rectangle ``D_FEM`` carries a triangulation whose initial vertices are
exactly the FD grid nodes inside it (each square split along one diagonal),
so the two schemes share node positions on the overlap layers:

* layer I  -- FE vertices on the FE boundary, updated by the FD scheme;
* layer II -- FE vertices one cell inside, updated by the FE scheme and
  copied into the FD grid.

Region tags: ``CORE`` (D1, impenetrable), ``DESIGN`` (D2, optimized) and
``BACKGROUND`` (D3).
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ConfigurationError, DomainError, GeometryError

CORE, DESIGN, BACKGROUND = 1, 2, 3
REGION_NAMES = {CORE: "D1", DESIGN: "D2", BACKGROUND: "D3"}

# relative tolerance used when checking that extents are multiples of h
_DIV_TOL = 1e-9


@dataclass(frozen=True)
class Rect:
    x0: float
    x1: float
    y0: float
    y1: float

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ConfigurationError(f"degenerate rectangle {self}")

    @property
    def width(self):
        return self.x1 - self.x0

    @property
    def height(self):
        return self.y1 - self.y0

    def as_list(self):
        return [self.x0, self.x1, self.y0, self.y1]


@dataclass(frozen=True)
class Disk:
    center: tuple[float, float]
    radius: float

    def sdf(self, pts):
        pts = np.asarray(pts, dtype=float)
        return np.hypot(pts[..., 0] - self.center[0], pts[..., 1] - self.center[1]) - self.radius

    def to_dict(self):
        return {"shape": "disk", "center": list(self.center), "radius": self.radius}


@dataclass(frozen=True)
class Annulus:
    center: tuple[float, float]
    inner: float
    outer: float

    def __post_init__(self):
        if not 0 <= self.inner < self.outer:
            raise ConfigurationError(f"annulus radii must satisfy 0 <= inner < outer, got {self}")

    def sdf(self, pts):
        pts = np.asarray(pts, dtype=float)
        r = np.hypot(pts[..., 0] - self.center[0], pts[..., 1] - self.center[1])
        return np.maximum(self.inner - r, r - self.outer)

    def to_dict(self):
        return {"shape": "annulus", "center": list(self.center),
                "inner": self.inner, "outer": self.outer}


@dataclass(frozen=True)
class Box:
    x0: float
    x1: float
    y0: float
    y1: float

    def sdf(self, pts):
        pts = np.asarray(pts, dtype=float)
        cx, cy = 0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1)
        hx, hy = 0.5 * (self.x1 - self.x0), 0.5 * (self.y1 - self.y0)
        qx = np.abs(pts[..., 0] - cx) - hx
        qy = np.abs(pts[..., 1] - cy) - hy
        outside = np.hypot(np.maximum(qx, 0), np.maximum(qy, 0))
        return outside + np.minimum(np.maximum(qx, qy), 0)

    def to_dict(self):
        return {"shape": "rect", "bounds": [self.x0, self.x1, self.y0, self.y1]}


Shape = Disk | Annulus | Box


_SHAPE_FIELDS = {"disk": ("center", "radius"), "annulus": ("center", "inner", "outer"),
                 "rect": ("bounds",)}


def shape_from_dict(d):
    d = dict(d)
    kind = d.pop("shape", None)
    if kind not in _SHAPE_FIELDS:
        raise ConfigurationError(f"unknown shape kind {kind!r}")
    extra = sorted(set(d) - set(_SHAPE_FIELDS[kind]))
    if extra:
        raise ConfigurationError(f"unknown key {extra[0]!r} in {kind} shape")
    missing = [k for k in _SHAPE_FIELDS[kind] if k not in d]
    if missing:
        raise ConfigurationError(f"{kind} shape is missing field {missing[0]!r}")
    if kind == "disk":
        return Disk(tuple(map(float, d["center"])), float(d["radius"]))
    if kind == "annulus":
        return Annulus(tuple(map(float, d["center"])), float(d["inner"]), float(d["outer"]))
    return Box(*map(float, d["bounds"]))


def union_sdf(shapes, pts):
    pts = np.asarray(pts, dtype=float)
    if not shapes:
        return np.full(pts.shape[:-1], np.inf)
    return np.min([s.sdf(pts) for s in shapes], axis=0)


@dataclass(frozen=True)
class DomainSpec:
    """Outer domain, FE subdomain and the D1/D2 masks (D3 is the remainder).

    ``core`` and ``design`` are unions of signed-distance primitives.  The
    plane wave enters through the bottom side ``x2 = outer.y0`` (the
    backscattering boundary) and leaves through the top side.
    """

    outer: Rect
    fem: Rect
    core: tuple = ()
    design: tuple = ()

    @property
    def source_plane(self):
        return self.outer.y0

    def classify(self, pts):
        pts = np.asarray(pts, dtype=float)
        tags = np.full(pts.shape[0], BACKGROUND, dtype=np.int8)
        tags[union_sdf(self.design, pts) < 0] = DESIGN
        tags[union_sdf(self.core, pts) < 0] = CORE
        return tags

    def to_dict(self):
        return {
            "outer": self.outer.as_list(),
            "fem": self.fem.as_list(),
            "core": [s.to_dict() for s in self.core],
            "design": [s.to_dict() for s in self.design],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(Rect(*map(float, d["outer"])), Rect(*map(float, d["fem"])),
                   tuple(shape_from_dict(s) for s in d.get("core", ())),
                   tuple(shape_from_dict(s) for s in d.get("design", ())))


def default_domain():
    """The reference geometry with default D1/D2 masks centred at the origin."""
    return DomainSpec(
        outer=Rect(-1.1, 1.1, -0.62, 0.62),
        fem=Rect(-1.0, 1.0, -0.52, 0.52),
        core=(Disk((0.0, 0.0), 0.1),),
        design=(Annulus((0.0, 0.0), 0.1, 0.3),),
    )


def geometry_hash(spec, h):
    payload = json.dumps({"domain": spec.to_dict(), "h": float(h)}, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _readonly(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Conforming triangulation of D_FEM.

    ``layer`` marks vertices on the FE boundary (1) and one cell inside it
    (2); 0 elsewhere.  ``parent`` indexes the element of the previous mesh
    each element descends from (-1 on an unrefined root mesh).
    """

    vertices: np.ndarray
    triangles: np.ndarray
    region: np.ndarray
    layer: np.ndarray
    parent: np.ndarray
    parent_fingerprint: str | None = None
    level: int = 0

    def __post_init__(self):
        for name in ("vertices", "triangles", "region", "layer", "parent"):
            object.__setattr__(self, name, _readonly(getattr(self, name)))

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_elements(self):
        return len(self.triangles)

    @cached_property
    def fingerprint(self):
        digest = hashlib.sha1()
        digest.update(self.vertices.tobytes())
        digest.update(self.triangles.astype(np.int64).tobytes())
        return digest.hexdigest()

    @cached_property
    def areas(self):
        p = self.vertices[self.triangles]
        e1, e2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        return _readonly(0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]))

    @cached_property
    def centroids(self):
        return _readonly(self.vertices[self.triangles].mean(axis=1))

    @cached_property
    def edge_lengths(self):
        """Lengths of the edges opposite vertex 0, 1, 2 of each triangle."""
        p = self.vertices[self.triangles]
        return _readonly(np.stack([np.linalg.norm(p[:, 2] - p[:, 1], axis=1),
                                   np.linalg.norm(p[:, 0] - p[:, 2], axis=1),
                                   np.linalg.norm(p[:, 1] - p[:, 0], axis=1)], axis=1))

    @property
    def h_per_element(self):
        return self.edge_lengths.max(axis=1)

    @property
    def min_edge(self):
        return float(self.edge_lengths.min())

    @cached_property
    def angles(self):
        """Interior angles (degrees) at vertex 0, 1, 2 of each triangle."""
        a, b, c = self.edge_lengths.T
        cos = np.stack([(b**2 + c**2 - a**2) / (2 * b * c),
                        (c**2 + a**2 - b**2) / (2 * c * a),
                        (a**2 + b**2 - c**2) / (2 * a * b)], axis=1)
        return np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))

    @property
    def min_angle(self):
        return float(self.angles.min())

    @cached_property
    def frozen_elements(self):
        """Elements touching the FE boundary; they must never be refined."""
        return _readonly((self.layer[self.triangles] == 1).any(axis=1))

    def edges(self):
        """Unique undirected edges as an (n, 2) array, plus per-element edge ids."""
        t = self.triangles
        e = np.concatenate([t[:, [1, 2]], t[:, [2, 0]], t[:, [0, 1]]])
        e.sort(axis=1)
        uniq, inv = np.unique(e, axis=0, return_inverse=True)
        return uniq, inv.reshape(3, -1).T

    def boundary_edges(self):
        """Edges on the FE boundary ('fem') and on the core boundary ('core')."""
        uniq, eid = self.edges()
        count = np.bincount(eid.ravel(), minlength=len(uniq))
        on_fem = (count == 1) & (self.layer[uniq] == 1).all(axis=1)
        is_core = self.region == CORE
        core_count = np.bincount(eid[is_core].ravel(), minlength=len(uniq))
        on_core = (core_count == 1) & (count == 2)
        return {"fem": uniq[on_fem], "core": uniq[on_core]}


@dataclass(frozen=True)
class StructuredGrid:
    """FD nodes of the whole outer rectangle; ``fem_box`` gives the
    inclusive index range (i0, i1, j0, j1) of the nodes coinciding with FE
    vertices.  Arrays on the grid are indexed ``[j, i]`` (row along x2)."""

    x0: float
    y0: float
    h: float
    nx: int
    ny: int
    fem_box: tuple[int, int, int, int]

    @cached_property
    def x(self):
        return self.x0 + self.h * np.arange(self.nx)

    @cached_property
    def y(self):
        return self.y0 + self.h * np.arange(self.ny)

    @property
    def shape(self):
        return (self.ny, self.nx)

    def linear(self, j, i):
        return np.asarray(j) * self.nx + np.asarray(i)

    def _box_mask(self, offset):
        i0, i1, j0, j1 = self.fem_box
        m = np.zeros(self.shape, dtype=bool)
        m[j0 + offset:j1 - offset + 1, i0 + offset:i1 - offset + 1] = True
        return m

    @cached_property
    def layer_one(self):
        """Grid nodes on the FE boundary (interface layer I)."""
        return self._box_mask(0) & ~self._box_mask(1)

    @cached_property
    def layer_two(self):
        """Inner boundary of the FD region (interface layer II)."""
        return self._box_mask(1) & ~self._box_mask(2)

    @cached_property
    def fd_active(self):
        """Nodes advanced by the FD scheme: everything outside the open FE box."""
        return ~self._box_mask(1)

    @property
    def back_row(self):
        return 0

    @property
    def trans_row(self):
        return self.ny - 1

    @cached_property
    def side_weights(self):
        """Trapezoidal edge weights of the nodes along a bottom/top side."""
        w = np.full(self.nx, self.h)
        w[0] = w[-1] = 0.5 * self.h
        return _readonly(w)


@dataclass(frozen=True, eq=False)
class HybridMesh:
    """FE triangulation plus FD grid with index maps between shared nodes.

    ``coincident_fe[k]`` and ``coincident_fd[k]`` identify the same point;
    the layer maps are the restrictions to interface layers I and II.
    Refinement only appends vertices, so the maps survive it unchanged.
    """

    tri: TriMesh
    grid: StructuredGrid
    spec: DomainSpec
    coincident_fe: np.ndarray
    coincident_fd: np.ndarray
    layer1_fe: np.ndarray
    layer1_fd: np.ndarray
    layer2_fe: np.ndarray
    layer2_fd: np.ndarray

    @property
    def h(self):
        return self.grid.h

    @property
    def h_min(self):
        return min(self.grid.h, self.tri.min_edge)

    def with_tri(self, tri):
        return HybridMesh(tri, self.grid, self.spec, self.coincident_fe, self.coincident_fd,
                          self.layer1_fe, self.layer1_fd, self.layer2_fe, self.layer2_fd)


def _cells(extent, h, what):
    n = extent / h
    k = int(round(n))
    if k < 1 or abs(k - n) > _DIV_TOL * max(1.0, n):
        raise ConfigurationError(f"{what} {extent!r} is not an integer multiple of h={h!r}")
    return k


def build_hybrid_mesh(spec: DomainSpec, h: float) -> HybridMesh:
    """Structured hybrid discretization with cell width ``h``."""
    if not h > 0:
        raise ConfigurationError(f"mesh size h must be positive, got {h!r}")
    o, f = spec.outer, spec.fem
    nx = _cells(o.width, h, "outer x1-extent") + 1
    ny = _cells(o.height, h, "outer x2-extent") + 1
    i0 = _cells(f.x0 - o.x0, h, "left gap") if f.x0 > o.x0 else 0
    j0 = _cells(f.y0 - o.y0, h, "bottom gap") if f.y0 > o.y0 else 0
    nfx = _cells(f.width, h, "FEM x1-extent") + 1
    nfy = _cells(f.height, h, "FEM x2-extent") + 1
    i1, j1 = i0 + nfx - 1, j0 + nfy - 1
    gaps = {"left": i0, "right": nx - 1 - i1, "bottom": j0, "top": ny - 1 - j1}
    for side, gap in gaps.items():
        if gap < 2:
            raise ConfigurationError(
                f"FE rectangle must sit at least two cells inside the outer one ({side} gap is {gap})")
    if nfx < 3 or nfy < 3:
        raise ConfigurationError("FE rectangle needs at least 2 cells per axis")

    grid = StructuredGrid(o.x0, o.y0, h, nx, ny, (i0, i1, j0, j1))
    jj, ii = np.meshgrid(np.arange(nfy), np.arange(nfx), indexing="ij")
    verts = np.stack([grid.x[i0 + ii.ravel()], grid.y[j0 + jj.ravel()]], axis=1)

    ring = np.minimum.reduce([ii, nfx - 1 - ii, jj, nfy - 1 - jj]).ravel()
    layer = np.where(ring == 0, 1, np.where(ring == 1, 2, 0)).astype(np.int8)

    sj, si = np.meshgrid(np.arange(nfy - 1), np.arange(nfx - 1), indexing="ij")
    a = (sj * nfx + si).ravel()
    b, c, d = a + 1, a + nfx + 1, a + nfx
    tris = np.empty((2 * a.size, 3), dtype=np.int64)
    tris[0::2] = np.stack([a, b, c], axis=1)
    tris[1::2] = np.stack([a, c, d], axis=1)

    region = spec.classify(verts[tris].mean(axis=1))
    # design/core vertices must stay off layers I and II; the ring is never refined
    near = np.isin(layer[tris], (1, 2)).any(axis=1)
    bad = near & (region != BACKGROUND)
    if bad.any():
        names = sorted({REGION_NAMES[int(r)] for r in region[bad]})
        raise GeometryError(f"mask(s) {', '.join(names)} touch the FE boundary overlap layers")

    tri = TriMesh(verts, tris, region, layer, np.full(len(tris), -1, dtype=np.int64))

    fe_ids = np.arange(nfx * nfy)
    fd_ids = grid.linear(j0 + jj.ravel(), i0 + ii.ravel())
    l1, l2 = layer == 1, layer == 2
    return HybridMesh(tri, grid, spec, _readonly(fe_ids), _readonly(fd_ids),
                      _readonly(fe_ids[l1]), _readonly(fd_ids[l1]),
                      _readonly(fe_ids[l2]), _readonly(fd_ids[l2]))


@dataclass(frozen=True)
class TimePartition:
    """Uniform partition of (0, T) into N steps of length tau."""

    T: float
    tau: float

    def __post_init__(self):
        if not (self.T > 0 and self.tau > 0):
            raise ConfigurationError("T and tau must be positive")
        n = self.T / self.tau
        if abs(round(n) - n) > _DIV_TOL * max(1.0, n) or round(n) < 2:
            raise ConfigurationError(f"tau={self.tau!r} does not divide T={self.T!r}")

    @property
    def N(self):
        return int(round(self.T / self.tau))

    @cached_property
    def times(self):
        return self.tau * np.arange(self.N + 1)

    @classmethod
    def fitting(cls, T, tau_max):
        """Largest uniform step not exceeding ``tau_max`` that divides T."""
        n = math.ceil(T / tau_max - 1e-9)
        return cls(T, T / n)


def cfl_step(h_min, eps_min):
    if not eps_min > 0:
        raise DomainError(f"eps_min must be positive, got {eps_min!r}")
    return h_min * math.sqrt(eps_min) / 10.0


def cfl_time_step(mesh: HybridMesh, eps_min: float) -> float:
    """Conservative default step ``h_min * sqrt(eps_min) / 10``."""
    return cfl_step(mesh.h_min, eps_min)


def mark_for_refinement(g, C, regions=None, design_only=True, frozen=None):
    """Element ids with ``|g_K| >= C * max |g|`` (max over all of D_FEM).

    With ``design_only`` the result is intersected with D2, which needs
    ``regions``.  Elements flagged in ``frozen`` are never returned.
    """
    if not 0 < C < 1:
        raise DomainError(f"refinement fraction C must lie in (0, 1), got {C!r}")
    g = np.abs(np.asarray(g, dtype=float))
    gmax = g.max() if g.size else 0.0
    if gmax == 0:
        return np.array([], dtype=np.int64)
    keep = g >= C * gmax
    if design_only:
        if regions is None:
            raise ValueError("design_only marking needs region tags")
        keep &= np.asarray(regions) == DESIGN
    if frozen is not None:
        keep &= ~np.asarray(frozen, dtype=bool)
    return np.flatnonzero(keep)

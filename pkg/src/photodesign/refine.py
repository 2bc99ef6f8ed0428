"""Conforming local refinement of right-isosceles triangulations.

Marked elements are red-refined (four similar children).  Conformity is
restored by bisecting neighbours through their longest edge: an element
with only its hypotenuse split is bisected once (green); one with a leg
split also gets its hypotenuse split first and the affected child is
bisected again (blue, three children).  A leg split always forces the
hypotenuse split, which is what keeps every triangle similar to the
initial 45-45-90 ones, so the minimal angle never drops below 45 degrees.
"""
from __future__ import annotations

import numpy as np

from .errors import GeometryError, LineageError
from .geometry import TriMesh


def _apex_first(mesh):
    """Triangles rotated so vertex 0 sits opposite the longest edge."""
    k = np.argmax(mesh.edge_lengths, axis=1)
    idx = (k[:, None] + np.arange(3)) % 3
    return np.take_along_axis(mesh.triangles, idx, axis=1)


def _keys(a, b, n):
    return np.minimum(a, b) * n + np.maximum(a, b)


def conforming_closure(mesh: TriMesh, marked) -> np.ndarray:
    """Sorted edge keys that must be split to refine ``marked`` conformingly."""
    n = mesh.n_vertices
    rot = _apex_first(mesh)
    a, b, c = rot.T
    hyp, leg_ab, leg_ca = _keys(b, c, n), _keys(a, b, n), _keys(c, a, n)
    marked = np.asarray(sorted(set(int(m) for m in marked)), dtype=np.int64)
    split = np.unique(np.concatenate([hyp[marked], leg_ab[marked], leg_ca[marked]]))
    while True:
        leg_split = np.isin(leg_ab, split) | np.isin(leg_ca, split)
        need = leg_split & ~np.isin(hyp, split)
        if not need.any():
            return split
        split = np.union1d(split, hyp[need])


def refine_conforming(mesh: TriMesh, marked) -> TriMesh:
    """Red-refine ``marked`` elements and close the mesh conformingly.

    Children inherit the region tag of their parent and record its index in
    ``parent``.  Elements touching the FE boundary may not be modified.
    """
    marked = np.asarray(list(marked), dtype=np.int64)
    if marked.size and (marked.min() < 0 or marked.max() >= mesh.n_elements):
        raise IndexError("marked element id out of range")
    n = mesh.n_vertices
    rot = _apex_first(mesh)
    a, b, c = rot.T
    split = conforming_closure(mesh, marked)

    s_hyp = np.isin(_keys(b, c, n), split)
    s_ab = np.isin(_keys(a, b, n), split)
    s_ca = np.isin(_keys(c, a, n), split)
    touched = s_hyp | s_ab | s_ca
    if (touched & mesh.frozen_elements).any():
        raise GeometryError("refinement reached elements on the FE boundary overlap layer")

    new_id = {int(k): n + i for i, k in enumerate(split)}
    lo, hi = np.divmod(split, n)
    midpoints = 0.5 * (mesh.vertices[lo] + mesh.vertices[hi])

    def mid(p, q):
        return new_id[int(min(p, q) * n + max(p, q))]

    tris, parents = [], []
    for e in range(mesh.n_elements):
        if not touched[e]:
            tris.append(mesh.triangles[e])
            parents.append(e)
            continue
        A, B, C = (int(v) for v in rot[e])
        m = mid(B, C)
        if s_ab[e] and s_ca[e]:
            p, q = mid(A, B), mid(C, A)
            kids = [(A, p, q), (p, B, m), (q, m, C), (p, m, q)]
        elif s_ab[e]:
            p = mid(A, B)
            kids = [(m, A, p), (m, p, B), (A, m, C)]
        elif s_ca[e]:
            q = mid(C, A)
            kids = [(A, B, m), (m, C, q), (m, q, A)]
        else:
            kids = [(A, B, m), (A, m, C)]
        tris.extend(kids)
        parents.extend([e] * len(kids))

    parents = np.asarray(parents, dtype=np.int64)
    vertices = np.vstack([mesh.vertices, midpoints]) if len(split) else mesh.vertices
    layer = np.concatenate([mesh.layer, np.zeros(len(split), dtype=np.int8)])
    return TriMesh(vertices, np.asarray(tris, dtype=np.int64).reshape(-1, 3),
                   mesh.region[parents], layer, parents,
                   parent_fingerprint=mesh.fingerprint, level=mesh.level + 1)


def transfer_piecewise_constant(values, old: TriMesh, new: TriMesh) -> np.ndarray:
    """Carry a cellwise field from ``old`` to its refinement ``new``."""
    values = np.asarray(values)
    if new.parent_fingerprint != old.fingerprint:
        raise LineageError("new mesh was not refined from the given old mesh")
    if values.shape[0] != old.n_elements:
        raise LineageError(
            f"field has {values.shape[0]} cells but the old mesh has {old.n_elements}")
    return values[new.parent]

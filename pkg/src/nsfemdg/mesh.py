"""Structured tetrahedral meshes of box domains.

A box is split into n^3 cubes and every cube into the six tetrahedra that
share the cube's main diagonal, giving 6*n^3 positively oriented elements.
The subdivision is nested under n -> 2n refinement, which the Cauchy
convergence study relies on.

Face orientation convention: every face stores one unit normal.  For an
interior face the normal points from the adjacent element with the lower
index (the owner) to the one with the higher index; for a boundary face it
points out of the domain.  `elem_face_sign` records +1 where the stored
normal is outward for that element and -1 where it is inward, so outward
quantities are always `sign * stored`.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import numpy.typing as npt

NDArrayF = npt.NDArray[np.floating]
NDArrayI = npt.NDArray[np.integer]

# Local faces of a tet, opposite vertices 0..3.
_LOCAL_FACES = ((1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2))


@dataclass(eq=False)
class Mesh:
    """Conforming tetrahedral mesh with oriented faces.

    All connectivity is index-based; arrays are immutable by convention.
    `face_neighbor` is -1 on boundary faces.
    """

    vertices: NDArrayF          # (n_verts, 3)
    tets: NDArrayI              # (n_elems, 4), positively oriented
    face_vertices: NDArrayI     # (n_faces, 3)
    face_owner: NDArrayI        # (n_faces,)  lower adjacent element index
    face_neighbor: NDArrayI     # (n_faces,)  higher adjacent element, -1 on boundary
    elem_faces: NDArrayI        # (n_elems, 4) global face id of local face l
    elem_face_sign: NDArrayF    # (n_elems, 4) +1 if stored normal is outward
    elem_volume: NDArrayF       # (n_elems,)
    elem_centroid: NDArrayF     # (n_elems, 3)
    face_area: NDArrayF         # (n_faces,)
    face_normal: NDArrayF       # (n_faces, 3) unit, oriented owner -> neighbor
    face_centroid: NDArrayF     # (n_faces, 3)
    h: float                    # max element diameter
    box_lo: NDArrayF | None = None
    box_hi: NDArrayF | None = None
    n_per_axis: int | None = None
    _space_cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_elems(self) -> int:
        return self.tets.shape[0]

    @property
    def n_faces(self) -> int:
        return self.face_vertices.shape[0]

    @property
    def n_verts(self) -> int:
        return self.vertices.shape[0]

    @property
    def is_boundary_face(self) -> npt.NDArray[np.bool_]:
        return self.face_neighbor < 0

    @property
    def interior_faces(self) -> NDArrayI:
        return np.flatnonzero(self.face_neighbor >= 0)

    @property
    def boundary_faces(self) -> NDArrayI:
        return np.flatnonzero(self.face_neighbor < 0)


@dataclass(frozen=True)
class MeshMetrics:
    n_elems: int
    n_faces_interior: int
    n_faces_boundary: int
    h: float
    volume_total: float
    volume_min: float
    shape_ratio_max: float      # max circumradius / inradius


def build_box_mesh(n: int, box_lo=(0.0, 0.0, 0.0), box_hi=(1.0, 1.0, 1.0)) -> Mesh:
    """Build the six-tets-per-cube subdivision of a box with n cells per axis."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    lo = np.asarray(box_lo, dtype=float)
    hi = np.asarray(box_hi, dtype=float)
    if lo.shape != (3,) or hi.shape != (3,):
        raise ValueError("box_lo and box_hi must be 3-vectors")
    if not np.all(hi > lo):
        raise ValueError(f"degenerate box: lo={lo}, hi={hi}")

    axis = [np.linspace(lo[d], hi[d], n + 1) for d in range(3)]
    # Vertex id (i, j, k) -> i*(n+1)^2 + j*(n+1) + k.
    grid = np.stack(np.meshgrid(*axis, indexing="ij"), axis=-1)
    vertices = grid.reshape(-1, 3)

    def vid(i, j, k):
        return (i * (n + 1) + j) * (n + 1) + k

    perms = list(itertools.permutations((0, 1, 2)))
    tets = np.empty((6 * n**3, 4), dtype=np.int64)
    e = 0
    for i, j, k in itertools.product(range(n), repeat=3):
        corner = np.array([i, j, k])
        for perm in perms:
            steps = [corner.copy()]
            for p in perm:
                nxt = steps[-1].copy()
                nxt[p] += 1
                steps.append(nxt)
            ids = [vid(*s) for s in steps]
            tets[e] = ids
            e += 1

    # Enforce positive orientation: swap the last two vertices where needed.
    v = vertices[tets]
    signed6 = np.einsum(
        "ei,ei->e",
        np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]),
        v[:, 3] - v[:, 0],
    )
    flip = signed6 < 0
    tets[flip, 2], tets[flip, 3] = tets[flip, 3].copy(), tets[flip, 2].copy()

    return _mesh_from_tets(vertices, tets, lo, hi, n)


def _mesh_from_tets(vertices, tets, box_lo=None, box_hi=None, n_per_axis=None) -> Mesh:
    n_elems = tets.shape[0]
    v = vertices[tets]
    signed6 = np.einsum(
        "ei,ei->e",
        np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]),
        v[:, 3] - v[:, 0],
    )
    if np.any(signed6 <= 0):
        raise ValueError("mesh contains a non-positively-oriented or degenerate tet")
    elem_volume = signed6 / 6.0
    elem_centroid = v.mean(axis=1)

    # Collect faces; each sorted vertex triple appears in one or two elements.
    first: dict[tuple, int] = {}
    face_verts: list[tuple] = []
    owner: list[int] = []
    neighbor: list[int] = []
    elem_faces = np.empty((n_elems, 4), dtype=np.int64)
    for e in range(n_elems):
        for l, loc in enumerate(_LOCAL_FACES):
            key = tuple(sorted(tets[e, i] for i in loc))
            f = first.get(key)
            if f is None:
                f = len(face_verts)
                first[key] = f
                face_verts.append(key)
                owner.append(e)
                neighbor.append(-1)
            else:
                if neighbor[f] != -1:
                    raise ValueError(f"face {key} shared by more than two tets")
                neighbor[f] = e
            elem_faces[e, l] = f

    face_vertices = np.array(face_verts, dtype=np.int64)
    face_owner = np.array(owner, dtype=np.int64)
    face_neighbor = np.array(neighbor, dtype=np.int64)
    # Owner is the lower of the two adjacent indices: elements are visited in
    # increasing order, so first-seen already is the smaller one.

    fv = vertices[face_vertices]
    cross = np.cross(fv[:, 1] - fv[:, 0], fv[:, 2] - fv[:, 0])
    face_area = 0.5 * np.linalg.norm(cross, axis=1)
    if np.any(face_area <= 0.0):
        raise ValueError("mesh contains a degenerate face")
    face_normal = cross / (2.0 * face_area)[:, None]
    face_centroid = fv.mean(axis=1)

    # Orient normals owner -> neighbor (outward on the boundary).
    interior = face_neighbor >= 0
    target = np.where(
        interior[:, None],
        elem_centroid[np.where(interior, face_neighbor, 0)] - elem_centroid[face_owner],
        face_centroid - elem_centroid[face_owner],
    )
    wrong = np.einsum("fi,fi->f", face_normal, target) < 0.0
    face_normal[wrong] *= -1.0

    elem_face_sign = np.where(
        face_owner[elem_faces] == np.arange(n_elems)[:, None], 1.0, -1.0
    )

    edges = list(itertools.combinations(range(4), 2))
    edge_len = np.stack([np.linalg.norm(v[:, a] - v[:, b], axis=1) for a, b in edges])
    h = float(edge_len.max())

    return Mesh(
        vertices=vertices,
        tets=tets,
        face_vertices=face_vertices,
        face_owner=face_owner,
        face_neighbor=face_neighbor,
        elem_faces=elem_faces,
        elem_face_sign=elem_face_sign,
        elem_volume=elem_volume,
        elem_centroid=elem_centroid,
        face_area=face_area,
        face_normal=face_normal,
        face_centroid=face_centroid,
        h=h,
        box_lo=box_lo,
        box_hi=box_hi,
        n_per_axis=n_per_axis,
    )


def mesh_metrics(mesh: Mesh) -> MeshMetrics:
    """Element/face counts and quality measures of a mesh."""
    v = mesh.vertices[mesh.tets]
    # Inradius r = 3V / (sum of face areas).
    areas = mesh.face_area[mesh.elem_faces].sum(axis=1)
    inradius = 3.0 * mesh.elem_volume / areas
    # Circumcenter c solves 2 (v_i - v_0) . c = |v_i|^2 - |v_0|^2, i = 1..3.
    A = 2.0 * (v[:, 1:] - v[:, :1])
    b = np.einsum("eij,eij->ei", v[:, 1:], v[:, 1:]) - np.einsum(
        "eij,eij->ei", v[:, :1], v[:, :1]
    )
    center = np.linalg.solve(A, b[..., None])[..., 0]
    circumradius = np.linalg.norm(center - v[:, 0], axis=1)
    n_int = int(np.count_nonzero(mesh.face_neighbor >= 0))
    return MeshMetrics(
        n_elems=mesh.n_elems,
        n_faces_interior=n_int,
        n_faces_boundary=mesh.n_faces - n_int,
        h=mesh.h,
        volume_total=float(mesh.elem_volume.sum()),
        volume_min=float(mesh.elem_volume.min()),
        shape_ratio_max=float((circumradius / inradius).max()),
    )


def find_elements(mesh: Mesh, points: NDArrayF, tol: float = 1e-12) -> NDArrayI:
    """Locate the element containing each point of a box mesh.

    Points on inter-element boundaries resolve to the first of the (up to six)
    candidate tets of the enclosing cube that contains them.
    """
    if mesh.n_per_axis is None:
        raise ValueError("find_elements requires a mesh built by build_box_mesh")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = mesh.n_per_axis
    rel = (pts - mesh.box_lo) / (mesh.box_hi - mesh.box_lo)
    if np.any(rel < -tol) or np.any(rel > 1.0 + tol):
        raise ValueError("point outside the mesh box")
    cell = np.clip((rel * n).astype(np.int64), 0, n - 1)
    cell_id = (cell[:, 0] * n + cell[:, 1]) * n + cell[:, 2]

    out = np.empty(len(pts), dtype=np.int64)
    for i, (p, c) in enumerate(zip(pts, cell_id)):
        found = -1
        for e in range(6 * c, 6 * c + 6):
            lam = barycentric_coordinates(mesh, e, p)
            if lam.min() >= -1e-10:
                found = e
                break
        if found < 0:
            raise ValueError(f"point {p} not located in its candidate cube")
        out[i] = found
    return out


def barycentric_coordinates(mesh: Mesh, elem: int, point: NDArrayF) -> NDArrayF:
    """Barycentric coordinates of a point with respect to one tet."""
    v = mesh.vertices[mesh.tets[elem]]
    T = (v[1:] - v[0]).T
    lam = np.linalg.solve(T, np.asarray(point, dtype=float) - v[0])
    return np.concatenate([[1.0 - lam.sum()], lam])

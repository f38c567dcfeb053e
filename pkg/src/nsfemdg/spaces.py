"""Discrete spaces and interpolation operators on tetrahedral meshes.

Three discrete objects appear throughout:

* piecewise-constant scalars (one value per element), with projection
  ``project_q`` equal to the elementwise mean;
* nonconforming piecewise-linear vector fields with one vector degree of
  freedom per face (the face average), interpolated by ``interpolate_v``;
* face normal fluxes (one scalar per face), obtained from a velocity by
  ``normal_flux``.  The lowest-order divergence-conforming reconstruction
  matching those fluxes, w + s*x on each element, is used when a flux field
  has to be evaluated inside elements.

The face-average dof makes three identities exact at the discrete level, up
to quadrature exactness, and ``commuting_residual`` /
``orthogonality_residual`` measure them:

    div_h (interp v)   = mean-of div v    elementwise,
    curl_h (interp v)  = mean-of curl v   elementwise,
    div (flux recon v) = mean-of div v    elementwise,

and the broken gradient of any dof field is L2-orthogonal to the broken
gradient of the interpolation error of any smooth field.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import numpy.typing as npt
from scipy.special import roots_jacobi

from .mesh import Mesh, NDArrayF

# ---------------------------------------------------------------------------
# Quadrature.
#
# Rules are returned in barycentric coordinates with weights summing to one:
# integral over a simplex S of f  ~=  |S| * sum_q w_q f(x_q).
# The degree-2 defaults are the 4-point tet rule and the edge-midpoint
# triangle rule; higher degrees use collapsed Gauss-Jacobi product rules.


def tet_rule(degree: int) -> tuple[NDArrayF, NDArrayF]:
    if degree <= 1:
        return np.full((1, 4), 0.25), np.array([1.0])
    if degree == 2:
        a = (5.0 + 3.0 * np.sqrt(5.0)) / 20.0
        b = (5.0 - np.sqrt(5.0)) / 20.0
        bary = np.full((4, 4), b)
        np.fill_diagonal(bary, a)
        return bary, np.full(4, 0.25)
    n = (degree + 2) // 2
    xa, wa = _gauss01(n, 2)
    xb, wb = _gauss01(n, 1)
    xc, wc = _gauss01(n, 0)
    pts, wts = [], []
    for a, pa in zip(xa, wa):
        for b, pb in zip(xb, wb):
            for c, pc in zip(xc, wc):
                x = a
                y = b * (1.0 - a)
                z = c * (1.0 - a) * (1.0 - b)
                pts.append((1.0 - x - y - z, x, y, z))
                wts.append(pa * pb * pc)
    w = np.array(wts)
    return np.array(pts), w / w.sum()


def tri_rule(degree: int) -> tuple[NDArrayF, NDArrayF]:
    if degree <= 1:
        return np.full((1, 3), 1.0 / 3.0), np.array([1.0])
    if degree == 2:
        bary = 0.5 * (1.0 - np.eye(3))
        return bary, np.full(3, 1.0 / 3.0)
    n = (degree + 2) // 2
    xa, wa = _gauss01(n, 1)
    xb, wb = _gauss01(n, 0)
    pts, wts = [], []
    for a, pa in zip(xa, wa):
        for b, pb in zip(xb, wb):
            x = a
            y = b * (1.0 - a)
            pts.append((1.0 - x - y, x, y))
            wts.append(pa * pb)
    w = np.array(wts)
    return np.array(pts), w / w.sum()


def _gauss01(n: int, alpha: int):
    # Nodes/weights for weight (1-x)^alpha on [0, 1].
    x, w = roots_jacobi(n, alpha, 0.0)
    return (x + 1.0) / 2.0, w / w.sum()


def elem_quad_points(mesh: Mesh, degree: int) -> tuple[NDArrayF, NDArrayF]:
    """Physical quadrature points (n_elems, nq, 3) and weights summing to 1."""
    bary, w = tet_rule(degree)
    pts = np.einsum("qi,eij->eqj", bary, mesh.vertices[mesh.tets])
    return pts, w


def face_quad_points(mesh: Mesh, degree: int) -> tuple[NDArrayF, NDArrayF]:
    bary, w = tri_rule(degree)
    pts = np.einsum("qi,fij->fqj", bary, mesh.vertices[mesh.face_vertices])
    return pts, w


# ---------------------------------------------------------------------------
# Fields.


@dataclass
class ScalarQField:
    """Piecewise-constant scalar: one value per element."""

    values: NDArrayF

    def copy(self) -> "ScalarQField":
        return ScalarQField(self.values.copy())


@dataclass
class VelocityCRField:
    """Face-dof vector field; the dof of a face is the field's face average.

    `boundary_mask` marks constrained (no-slip) dofs.  Construction does not
    zero them; `apply_bc` does.
    """

    dofs: NDArrayF                       # (n_faces, 3)
    boundary_mask: npt.NDArray[np.bool_]  # (n_faces,)

    def copy(self) -> "VelocityCRField":
        return VelocityCRField(self.dofs.copy(), self.boundary_mask)


@dataclass
class FaceFluxField:
    """One normal flux per face, in the stored face-normal orientation."""

    values: NDArrayF


def apply_bc(u: VelocityCRField) -> VelocityCRField:
    out = u.copy()
    out.dofs[out.boundary_mask] = 0.0
    return out


# ---------------------------------------------------------------------------
# Interpolation.


def cell_means(f, mesh: Mesh, degree: int = 2) -> NDArrayF:
    """Elementwise means of a callable, (n_elems,) or (n_elems, m)."""
    pts, w = elem_quad_points(mesh, degree)
    vals = np.asarray(f(pts.reshape(-1, 3)), dtype=float)
    vals = vals.reshape(pts.shape[0], pts.shape[1], -1)
    out = np.einsum("q,eqm->em", w, vals)
    return out[:, 0] if out.shape[1] == 1 else out


def project_q(f, mesh: Mesh, degree: int = 2) -> ScalarQField:
    """L2 projection of a scalar function onto piecewise constants."""
    means = cell_means(f, mesh, degree)
    if means.ndim != 1:
        raise ValueError("project_q expects a scalar function")
    return ScalarQField(means)


def interpolate_v(f, mesh: Mesh, degree: int = 2) -> VelocityCRField:
    """Face-average interpolation of a vector function (no BC applied)."""
    pts, w = face_quad_points(mesh, degree)
    vals = np.asarray(f(pts.reshape(-1, 3)), dtype=float).reshape(pts.shape[0], -1, 3)
    dofs = np.einsum("q,fqi->fi", w, vals)
    return VelocityCRField(dofs, mesh.is_boundary_face.copy())


def element_average(u: VelocityCRField, mesh: Mesh) -> NDArrayF:
    """Elementwise mean velocity: the mean of the element's four face dofs.

    For a piecewise-linear field the mean over the element equals its value at
    the barycenter, which is the average of the four face centroids.
    """
    return u.dofs[mesh.elem_faces].mean(axis=1)


def normal_flux(u: VelocityCRField, mesh: Mesh) -> FaceFluxField:
    """Normal flux per face; the dof being the face average makes this exact."""
    return FaceFluxField(np.einsum("fi,fi->f", u.dofs, mesh.face_normal))


# ---------------------------------------------------------------------------
# Per-element reconstructions (cached on the mesh).


def p1_coefficients(mesh: Mesh) -> NDArrayF:
    """(n_elems, 4, 4) maps 4 face values to [a1, a2, a3, d] with p = a.x + d.

    Rows of the inverted Vandermonde correspond to the element's local faces
    in `elem_faces` order; face values are imposed at face centroids, where a
    linear function attains its face average.
    """
    cached = mesh._space_cache.get("p1")
    if cached is None:
        centroids = mesh.face_centroid[mesh.elem_faces]          # (ne, 4, 3)
        V = np.concatenate([centroids, np.ones(centroids.shape[:2] + (1,))], axis=2)
        cached = np.linalg.inv(V)
        mesh._space_cache["p1"] = cached
    return cached


def basis_gradients(mesh: Mesh) -> NDArrayF:
    """(n_elems, 3, 4): constant gradient of the face-dof basis functions."""
    return p1_coefficients(mesh)[:, :3, :]


def flux_reconstruction_coefficients(mesh: Mesh) -> NDArrayF:
    """(n_elems, 4, 4) maps 4 face fluxes to [w1, w2, w3, s] with u = w + s*x.

    The normal component of w + s*x is constant on each face plane, so
    matching the four stored-orientation fluxes is a 4x4 solve per element.
    """
    cached = mesh._space_cache.get("rt0")
    if cached is None:
        nu = mesh.face_normal[mesh.elem_faces]                   # (ne, 4, 3)
        d = np.einsum("eli,eli->el", nu, mesh.face_centroid[mesh.elem_faces])
        V = np.concatenate([nu, d[:, :, None]], axis=2)
        cached = np.linalg.inv(V)
        mesh._space_cache["rt0"] = cached
    return cached


def broken_gradient(u: VelocityCRField, mesh: Mesh) -> NDArrayF:
    """(n_elems, 3, 3) with G[e, i, j] = d u_i / d x_j, constant per element."""
    coeff = np.einsum("elk,eki->eli", p1_coefficients(mesh), u.dofs[mesh.elem_faces])
    return coeff[:, :3, :].transpose(0, 2, 1)


def broken_divergence(u: VelocityCRField, mesh: Mesh) -> NDArrayF:
    return np.einsum("eii->e", broken_gradient(u, mesh))


def broken_curl(u: VelocityCRField, mesh: Mesh) -> NDArrayF:
    G = broken_gradient(u, mesh)
    return np.stack(
        [G[:, 2, 1] - G[:, 1, 2], G[:, 0, 2] - G[:, 2, 0], G[:, 1, 0] - G[:, 0, 1]],
        axis=1,
    )


def flux_reconstruction(flux: FaceFluxField, mesh: Mesh) -> tuple[NDArrayF, NDArrayF]:
    """Per-element (w, s) of the div-conforming field u = w + s*x."""
    coeff = np.einsum(
        "elk,ek->el", flux_reconstruction_coefficients(mesh), flux.values[mesh.elem_faces]
    )
    return coeff[:, :3], coeff[:, 3]


def eval_flux_reconstruction(flux: FaceFluxField, mesh: Mesh, pts: NDArrayF) -> NDArrayF:
    """Evaluate the reconstructed field at (n_elems, nq, 3) element points."""
    w, s = flux_reconstruction(flux, mesh)
    return w[:, None, :] + s[:, None, None] * pts


# ---------------------------------------------------------------------------
# Identity residuals.


def commuting_residual(field, mesh: Mesh, degree: int = 2) -> dict[str, float]:
    """Max-norm defects of the three interpolation/derivative identities.

    `field` must provide `__call__(pts)` and `jacobian(pts)`.  For fields with
    polynomial degree <= `degree` the residuals are at rounding level.
    """
    interp = interpolate_v(field, mesh, degree=degree)

    def div_f(pts):
        return np.einsum("pii->p", field.jacobian(pts))

    def curl_f(pts):
        J = field.jacobian(pts)
        return np.stack(
            [J[:, 2, 1] - J[:, 1, 2], J[:, 0, 2] - J[:, 2, 0], J[:, 1, 0] - J[:, 0, 1]],
            axis=1,
        )

    div_mean = cell_means(div_f, mesh, degree)
    curl_mean = cell_means(curl_f, mesh, degree)

    res_div = np.abs(broken_divergence(interp, mesh) - div_mean).max()
    res_curl = np.abs(broken_curl(interp, mesh) - curl_mean).max()

    # Face-averaged normal fluxes of the field itself.
    pts, w = face_quad_points(mesh, degree)
    vals = np.asarray(field(pts.reshape(-1, 3))).reshape(pts.shape[0], -1, 3)
    fluxes = np.einsum("q,fqi,fi->f", w, vals, mesh.face_normal)
    div_flux = (
        np.einsum(
            "el,el,el->e",
            mesh.elem_face_sign,
            mesh.face_area[mesh.elem_faces],
            fluxes[mesh.elem_faces],
        )
        / mesh.elem_volume
    )
    res_flux = np.abs(div_flux - div_mean).max()

    return {"div": float(res_div), "curl": float(res_curl), "flux_div": float(res_flux)}


def orthogonality_residual(u: VelocityCRField, field, mesh: Mesh, degree: int = 2) -> float:
    """Integral of grad_h u : grad_h(interp(field) - field) over the mesh.

    Vanishes for every dof field u because the face average of the
    interpolation error is zero on every face while grad_h u has constant
    normal derivative there.
    """
    Gu = broken_gradient(u, mesh)
    Gi = broken_gradient(interpolate_v(field, mesh, degree=degree), mesh)
    pts, w = elem_quad_points(mesh, degree)
    J = field.jacobian(pts.reshape(-1, 3)).reshape(pts.shape[0], -1, 3, 3)
    Gf = np.einsum("q,eqij->eij", w, J)
    return float(np.einsum("e,eij,eij->", mesh.elem_volume, Gu, Gi - Gf))


def interpolation_errors(field, mesh: Mesh, degree: int = 6) -> tuple[float, float]:
    """(L2 error, broken-H1 seminorm error) of the face-average interpolant."""
    interp = interpolate_v(field, mesh, degree=degree)
    coeff = np.einsum("elk,eki->eli", p1_coefficients(mesh), interp.dofs[mesh.elem_faces])
    a, d = coeff[:, :3, :], coeff[:, 3, :]
    pts, w = elem_quad_points(mesh, degree)
    interp_vals = np.einsum("eqj,eji->eqi", pts, a) + d[:, None, :]
    vals = np.asarray(field(pts.reshape(-1, 3))).reshape(pts.shape[0], -1, 3)
    err2 = np.einsum("q,eqi->e", w, (interp_vals - vals) ** 2)
    l2 = np.sqrt(np.sum(mesh.elem_volume * err2))

    G = broken_gradient(interp, mesh)
    J = field.jacobian(pts.reshape(-1, 3)).reshape(pts.shape[0], -1, 3, 3)
    dif = G[:, None, :, :] - J
    h1 = np.sqrt(np.sum(mesh.elem_volume * np.einsum("q,eqij->e", w, dif**2)))
    return float(l2), float(h1)


# ---------------------------------------------------------------------------
# Smooth test fields with exact Jacobians.

_MONO_POWERS = np.array(
    [
        [0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1],
        [2, 0, 0], [0, 2, 0], [0, 0, 2], [1, 1, 0], [1, 0, 1], [0, 1, 1],
    ]
)


@dataclass
class PolynomialField:
    """Vector field with trivariate polynomial components of degree <= 2.

    Coefficients are (3, 10) in the monomial basis
    1, x, y, z, x^2, y^2, z^2, xy, xz, yz.
    """

    coeffs: NDArrayF

    @classmethod
    def random(cls, rng: np.random.Generator, scale: float = 1.0) -> "PolynomialField":
        return cls(rng.uniform(-scale, scale, size=(3, 10)))

    def __call__(self, pts: NDArrayF) -> NDArrayF:
        pts = np.atleast_2d(pts)
        mono = np.prod(pts[:, None, :] ** _MONO_POWERS[None, :, :], axis=2)
        return mono @ self.coeffs.T

    def jacobian(self, pts: NDArrayF) -> NDArrayF:
        pts = np.atleast_2d(pts)
        x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
        zero = np.zeros_like(x)
        one = np.ones_like(x)
        dmono = np.stack(
            [
                np.stack([zero, one, zero, zero, 2 * x, zero, zero, y, z, zero], axis=1),
                np.stack([zero, zero, one, zero, zero, 2 * y, zero, x, zero, z], axis=1),
                np.stack([zero, zero, zero, one, zero, zero, 2 * z, zero, x, y], axis=1),
            ],
            axis=1,
        )  # (npts, 3 deriv, 10)
        return np.einsum("pdm,im->pid", dmono, self.coeffs)


@dataclass
class SineField:
    """amplitude * (sin(k pi x) sin(k pi y) sin(k pi z)) in every component."""

    k: float = 1.0
    amplitude: float = 1.0

    def __call__(self, pts: NDArrayF) -> NDArrayF:
        pts = np.atleast_2d(pts)
        s = np.sin(self.k * np.pi * pts)
        val = self.amplitude * s.prod(axis=1)
        return np.repeat(val[:, None], 3, axis=1)

    def jacobian(self, pts: NDArrayF) -> NDArrayF:
        pts = np.atleast_2d(pts)
        kp = self.k * np.pi
        s = np.sin(kp * pts)
        c = np.cos(kp * pts)
        grad = np.stack(
            [
                kp * c[:, 0] * s[:, 1] * s[:, 2],
                kp * s[:, 0] * c[:, 1] * s[:, 2],
                kp * s[:, 0] * s[:, 1] * c[:, 2],
            ],
            axis=1,
        )
        return self.amplitude * np.repeat(grad[:, None, :], 3, axis=1)


@dataclass
class ScalarPolynomial:
    """Scalar trivariate polynomial of degree <= 2, same monomial basis."""

    coeffs: NDArrayF  # (10,)

    @classmethod
    def random(cls, rng: np.random.Generator, scale: float = 1.0) -> "ScalarPolynomial":
        return cls(rng.uniform(-scale, scale, size=10))

    def __call__(self, pts: NDArrayF) -> NDArrayF:
        pts = np.atleast_2d(pts)
        mono = np.prod(pts[:, None, :] ** _MONO_POWERS[None, :, :], axis=2)
        return mono @ self.coeffs

    def gradient(self, pts: NDArrayF) -> NDArrayF:
        pts = np.atleast_2d(pts)
        x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
        zero = np.zeros_like(x)
        one = np.ones_like(x)
        dmono = np.stack(
            [
                np.stack([zero, one, zero, zero, 2 * x, zero, zero, y, z, zero], axis=1),
                np.stack([zero, zero, one, zero, zero, 2 * y, zero, x, zero, z], axis=1),
                np.stack([zero, zero, zero, one, zero, zero, 2 * z, zero, x, y], axis=1),
            ],
            axis=1,
        )
        return np.einsum("pdm,m->pd", dmono, self.coeffs)

"""Fully implicit coupled scheme for isentropic compressible Navier-Stokes.

Unknowns per time step are one density per element and one velocity vector
per interior face (no-slip walls fix boundary face dofs to zero).  The
density satisfies a finite-volume balance with upwind mass fluxes, the
velocity a nonconforming piecewise-linear momentum balance where convected
momentum is upwinded with the same mass flux and carried by elementwise mean
velocities.  Both equations add a face jump penalty on the density scaled by
h^(1-epsilon); the analysis behind the scheme needs epsilon > 1/6.

Continuity row of element E (residual form, interior faces only):

    |E| (rho_E - rho_E^prev) / dt
      + sum_faces |f| (outward upwind mass flux)
      - h^(1-eps) sum_faces |f| (rho_neighbor - rho_E)  = 0

Momentum rows are tested with the face-dof basis.  Because density and mean
velocity are elementwise constant, every volume term reduces exactly: the
integral of a constant against a basis function over an element is |E|/4
times the constant, so no quadrature appears anywhere in the assembly.

`residual` and `jacobian` take a continuation weight alpha in [0, 1] that
scales convection, pressure and both stabilization terms; time terms and
viscous diffusion are never scaled.  alpha = 1 is the scheme itself, and the
residual is affine in alpha.  At alpha = 0 the equations decouple: the
density equation returns the previous density and the momentum equation is a
symmetric positive definite solve, which gives the solver an exactly
solvable start for continuation.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh, NDArrayF, build_box_mesh
from .spaces import (
    ScalarQField,
    VelocityCRField,
    apply_bc,
    basis_gradients,
    broken_gradient,
    cell_means,
    element_average,
    elem_quad_points,
    face_quad_points,
    interpolate_v,
)

if TYPE_CHECKING:
    from .solver import HomotopySettings, StepDiagnostics


@dataclass(frozen=True)
class SchemeParams:
    """Physical and numerical parameters of the scheme.

    gamma is the pressure-law exponent, p = a rho^gamma; the compactness
    theory wants gamma > 3, smaller values only trigger a warning.  kappa is
    the mesh-dependent floor kappa*h added to the initial density; zero is
    accepted for strictly positive data.  dt = c * h is recomputed per mesh.
    """

    gamma: float = 3.5
    a: float = 1.0
    epsilon: float = 0.2
    kappa: float = 0.01
    c: float = 0.5
    newton_tol: float = 1e-9
    newton_max_iter: int = 50
    homotopy_steps: int = 10
    quad_volume: int = 2
    quad_face: int = 2

    def __post_init__(self):
        if self.gamma <= 1.0:
            raise ValueError(f"gamma must be > 1, got {self.gamma}")
        if self.gamma <= 3.0:
            warnings.warn(
                f"gamma = {self.gamma} <= 3: outside the range covered by the "
                "convergence theory",
                stacklevel=2,
            )
        if self.a <= 0.0:
            raise ValueError(f"pressure coefficient a must be > 0, got {self.a}")
        if self.epsilon <= 1.0 / 6.0:
            raise ValueError(
                f"epsilon must exceed 1/6 for the stabilization to control the "
                f"upwind error terms, got {self.epsilon}"
            )
        if self.epsilon >= 1.0:
            raise ValueError(f"epsilon must be < 1, got {self.epsilon}")
        if self.kappa < 0.0:
            raise ValueError(f"kappa must be >= 0, got {self.kappa}")
        if self.c <= 0.0:
            raise ValueError(f"time step factor c must be > 0, got {self.c}")
        if self.newton_tol <= 0.0 or self.newton_max_iter < 1:
            raise ValueError("invalid Newton settings")
        if self.homotopy_steps < 2:
            raise ValueError("homotopy_steps must be >= 2")

    def dt(self, mesh: Mesh) -> float:
        return self.c * mesh.h

    def h_power(self, mesh: Mesh) -> float:
        return mesh.h ** (1.0 - self.epsilon)


@dataclass
class State:
    """Discrete state at one time level."""

    rho: ScalarQField
    u: VelocityCRField
    k: int = 0
    t: float = 0.0

    def copy(self) -> "State":
        return State(self.rho.copy(), self.u.copy(), self.k, self.t)


@dataclass
class ResidualVector:
    """Residual split into continuity (per element) and momentum blocks.

    Momentum rows follow interior faces in face-index order, three components
    per face.  Summing the continuity block telescopes the flux and
    stabilization contributions away, leaving (mass - mass_prev) / dt.
    """

    continuity: NDArrayF          # (n_elems,)
    momentum: NDArrayF            # (n_interior_faces, 3)

    def ravel(self) -> NDArrayF:
        return np.concatenate([self.continuity, self.momentum.ravel()])

    def norm_inf(self) -> float:
        return float(np.abs(self.ravel()).max())


def pressure(rho, params: SchemeParams):
    """Isentropic pressure p = a rho^gamma."""
    return params.a * np.asarray(rho, dtype=float) ** params.gamma


def pressure_derivative(rho, params: SchemeParams):
    return params.a * params.gamma * np.asarray(rho, dtype=float) ** (params.gamma - 1.0)


def initial_state(rho0: Callable, m0: Callable, mesh: Mesh, params: SchemeParams) -> State:
    """Project initial data: elementwise mean density plus the kappa*h floor,
    and face averages of m0 / (rho0 + kappa*h) with no-slip dofs zeroed."""
    floor = params.kappa * mesh.h

    pts, _ = elem_quad_points(mesh, params.quad_volume)
    if np.asarray(rho0(pts.reshape(-1, 3))).min() < 0.0:
        raise ValueError("initial density is negative at a quadrature point")
    rho = ScalarQField(cell_means(rho0, mesh, params.quad_volume) + floor)

    fpts, _ = face_quad_points(mesh, params.quad_face)
    if np.asarray(rho0(fpts.reshape(-1, 3))).min() < 0.0:
        raise ValueError("initial density is negative at a quadrature point")

    def velocity(p):
        return np.asarray(m0(p), dtype=float) / (
            np.asarray(rho0(p), dtype=float) + floor
        )[:, None]

    u = apply_bc(interpolate_v(velocity, mesh, degree=params.quad_face))
    return State(rho=rho, u=u, k=0, t=0.0)


# ---------------------------------------------------------------------------
# Assembly.


def _interior(mesh: Mesh):
    cached = mesh._space_cache.get("interior")
    if cached is None:
        int_f = mesh.interior_faces
        slot = np.full(mesh.n_faces, -1, dtype=np.int64)
        slot[int_f] = np.arange(len(int_f))
        cached = (int_f, mesh.face_owner[int_f], mesh.face_neighbor[int_f], slot)
        mesh._space_cache["interior"] = cached
    return cached


def n_unknowns(mesh: Mesh) -> int:
    int_f, _, _, _ = _interior(mesh)
    return mesh.n_elems + 3 * len(int_f)


def pack(state: State, mesh: Mesh) -> NDArrayF:
    int_f, _, _, _ = _interior(mesh)
    return np.concatenate([state.rho.values, state.u.dofs[int_f].ravel()])


def unpack(x: NDArrayF, mesh: Mesh, k: int, t: float) -> State:
    int_f, _, _, _ = _interior(mesh)
    ne = mesh.n_elems
    dofs = np.zeros((mesh.n_faces, 3))
    dofs[int_f] = x[ne:].reshape(-1, 3)
    return State(
        rho=ScalarQField(x[:ne].copy()),
        u=VelocityCRField(dofs, mesh.is_boundary_face.copy()),
        k=k,
        t=t,
    )


def residual(
    prev: State, guess: State, params: SchemeParams, mesh: Mesh, alpha: float = 1.0
) -> ResidualVector:
    """Scheme residual at `guess`, with continuation weight `alpha`."""
    ne = mesh.n_elems
    dt = params.dt(mesh)
    hp = params.h_power(mesh)
    int_f, own, nbr, _ = _interior(mesh)

    rho = guess.rho.values
    rho_prev = prev.rho.values
    uhat = element_average(guess.u, mesh)
    uhat_prev = element_average(prev.u, mesh)
    vol = mesh.elem_volume

    flux = np.einsum("fi,fi->f", guess.u.dofs[int_f], mesh.face_normal[int_f])
    area = mesh.face_area[int_f]
    rho_m, rho_p = rho[own], rho[nbr]
    up = rho_m * np.maximum(flux, 0.0) + rho_p * np.minimum(flux, 0.0)

    # Continuity: time term unscaled, upwind flux and stabilization scaled.
    cont = vol * (rho - rho_prev) / dt
    scaled = np.zeros(ne)
    np.add.at(scaled, own, area * up)
    np.add.at(scaled, nbr, -area * up)
    jump = hp * area * (rho_p - rho_m)
    np.add.at(scaled, own, -jump)
    np.add.at(scaled, nbr, jump)
    cont = cont + alpha * scaled

    # Momentum, accumulated over all faces and restricted to interior ones.
    base = np.zeros((mesh.n_faces, 3))
    scaled_m = np.zeros((mesh.n_faces, 3))
    gb = basis_gradients(mesh)

    per_elem = (vol / (4.0 * dt))[:, None] * (
        rho[:, None] * uhat - rho_prev[:, None] * uhat_prev
    )
    np.add.at(base, mesh.elem_faces, per_elem[:, None, :])

    G = broken_gradient(guess.u, mesh)
    np.add.at(base, mesh.elem_faces, np.einsum("e,edk,ekl->eld", vol, G, gb))

    p_vol = pressure(rho, params) * vol
    np.add.at(scaled_m, mesh.elem_faces, -np.einsum("e,edl->eld", p_vol, gb))

    upm = (
        np.maximum(up, 0.0)[:, None] * uhat[own] + np.minimum(up, 0.0)[:, None] * uhat[nbr]
    )
    conv = 0.25 * area[:, None] * upm
    np.add.at(scaled_m, mesh.elem_faces[own], conv[:, None, :])
    np.add.at(scaled_m, mesh.elem_faces[nbr], -conv[:, None, :])

    stab = 0.25 * (hp * area * (rho_p - rho_m))[:, None] * 0.5 * (uhat[own] + uhat[nbr])
    np.add.at(scaled_m, mesh.elem_faces[own], -stab[:, None, :])
    np.add.at(scaled_m, mesh.elem_faces[nbr], stab[:, None, :])

    mom = base[int_f] + alpha * scaled_m[int_f]
    return ResidualVector(continuity=cont, momentum=mom)


def jacobian(
    prev: State, guess: State, params: SchemeParams, mesh: Mesh, alpha: float = 1.0
) -> sp.csr_matrix:
    """Exact Jacobian of `residual` in the packed unknown ordering.

    The kinks of x+ and x- use the one-sided convention d(x+)/dx = 1 for
    x > 0 else 0, and d(x-)/dx = 1 for x < 0 else 0, so the derivative at a
    kink is zero.  Away from sign changes of the fluxes the matrix is the
    classical derivative.
    """
    ne = mesh.n_elems
    dt = params.dt(mesh)
    hp = params.h_power(mesh)
    int_f, own, nbr, slot = _interior(mesh)
    ni = len(int_f)
    nun = ne + 3 * ni

    rho = guess.rho.values
    uhat = element_average(guess.u, mesh)
    vol = mesh.elem_volume
    gb = basis_gradients(mesh)

    flux = np.einsum("fi,fi->f", guess.u.dofs[int_f], mesh.face_normal[int_f])
    area = mesh.face_area[int_f]
    nu = mesh.face_normal[int_f]
    rho_m, rho_p = rho[own], rho[nbr]
    fp, fm = np.maximum(flux, 0.0), np.minimum(flux, 0.0)
    up = rho_m * fp + rho_p * fm
    upp, upn = np.maximum(up, 0.0), np.minimum(up, 0.0)
    dup_dflux = rho_m * (flux > 0.0) + rho_p * (flux < 0.0)
    # Upwind-selected mean velocity (zero exactly at the kink).
    wsel = (up > 0.0)[:, None] * uhat[own] + (up < 0.0)[:, None] * uhat[nbr]

    rows: list[NDArrayF] = []
    cols: list[NDArrayF] = []
    vals: list[NDArrayF] = []

    def add(r, c, v, m=None):
        shape = np.broadcast_shapes(np.shape(r), np.shape(c), np.shape(v))
        r = np.broadcast_to(r, shape)
        c = np.broadcast_to(c, shape)
        v = np.broadcast_to(v, shape)
        if m is not None:
            m = np.broadcast_to(m, shape)
            r, c, v = r[m], c[m], v[m]
        rows.append(np.asarray(r, dtype=np.int64).ravel())
        cols.append(np.asarray(c, dtype=np.int64).ravel())
        vals.append(np.asarray(v, dtype=float).ravel())

    d3 = np.arange(3)
    ucol_f = ne + 3 * slot[int_f]                                 # (ni,)

    # --- continuity wrt rho ---
    add(np.arange(ne), np.arange(ne), vol / dt)
    add(own, own, alpha * (area * fp + hp * area))
    add(own, nbr, alpha * (area * fm - hp * area))
    add(nbr, own, alpha * (-area * fp - hp * area))
    add(nbr, nbr, alpha * (-area * fm + hp * area))

    # --- continuity wrt u (through the face's own flux) ---
    dflux = (area * dup_dflux)[:, None] * nu                      # (ni, 3)
    add(own[:, None], ucol_f[:, None] + d3, alpha * dflux)
    add(nbr[:, None], ucol_f[:, None] + d3, -alpha * dflux)

    # --- momentum: element-local terms ---
    ef = mesh.elem_faces                                          # (ne, 4)
    ef_int = slot[ef] >= 0                                        # (ne, 4)
    row_ed = (ne + 3 * slot[ef])[:, :, None] + d3                 # (ne, 4, 3)
    mask_ed = ef_int[:, :, None]

    # time wrt rho: (vol/4dt) uhat_d
    add(row_ed, np.arange(ne)[:, None, None],
        (vol / (4.0 * dt))[:, None, None] * uhat[:, None, :], mask_ed)
    # pressure wrt rho
    dp_vol = pressure_derivative(rho, params) * vol
    add(row_ed, np.arange(ne)[:, None, None],
        -alpha * np.einsum("e,edl->eld", dp_vol, gb), mask_ed)
    # time and diffusion wrt u: face-pair blocks, diagonal in the component
    pair_row = row_ed[:, :, None, :]                              # (ne,4,1,3)
    pair_col = (ne + 3 * slot[ef])[:, None, :, None] + d3         # (ne,1,4,3)
    pair_mask = ef_int[:, :, None, None] & ef_int[:, None, :, None]
    add(pair_row, pair_col, (vol * rho / (16.0 * dt))[:, None, None, None], pair_mask)
    kpair = np.einsum("e,ekf,ekg->efg", vol, gb, gb)              # (ne,4,4)
    add(pair_row, pair_col, kpair[:, :, :, None], pair_mask)

    # --- momentum: face-coupled terms ---
    # Eight test faces per interior face (owner's four then neighbor's four);
    # the test-jump coefficient [vhat] of face g's basis is C8.
    G8 = np.concatenate([ef[own], ef[nbr]], axis=1)               # (ni, 8)
    C8 = np.concatenate([np.full(4, -0.25), np.full(4, 0.25)])
    g8_int = slot[G8] >= 0
    row8 = (ne + 3 * slot[G8])[:, :, None] + d3                   # (ni, 8, 3)
    mask8 = g8_int[:, :, None]

    # convection wrt rho: dR/drho_side = -A c_g (dup/drho_side) wsel_d
    coef = -area[:, None] * C8[None, :]                           # (ni, 8)
    for col_e, fpart in ((own, fp), (nbr, fm)):
        add(row8, col_e[:, None, None],
            alpha * coef[:, :, None] * fpart[:, None, None] * wsel[:, None, :], mask8)
    # stabilization wrt rho
    avg = 0.5 * (uhat[own] + uhat[nbr])
    scoef = (hp * area)[:, None] * C8[None, :]                    # (ni, 8)
    add(row8, own[:, None, None], -alpha * scoef[:, :, None] * avg[:, None, :], mask8)
    add(row8, nbr[:, None, None], alpha * scoef[:, :, None] * avg[:, None, :], mask8)

    # convection wrt the face's own flux dof: rows (g, d), cols (face, e)
    crow = row8[:, :, :, None]                                    # (ni,8,3,1)
    ccol = ucol_f[:, None, None, None] + d3                       # (ni,1,1,3)
    cval = alpha * np.einsum("ik,i,id,ie->ikde", coef, dup_dflux, wsel, nu)
    add(crow, ccol, cval, mask8[:, :, :, None])

    # convection wrt mean velocities: rows (g, d), cols (g', d)
    rowm = row8[:, :, None, :]                                    # (ni,8,1,3)
    for col_faces, uppart in ((ef[own], upp), (ef[nbr], upn)):
        colm = (ne + 3 * slot[col_faces])[:, None, :, None] + d3  # (ni,1,4,3)
        maskm = g8_int[:, :, None, None] & (slot[col_faces] >= 0)[:, None, :, None]
        add(rowm, colm,
            alpha * 0.25 * coef[:, :, None, None] * uppart[:, None, None, None], maskm)

    # stabilization wrt mean velocities: hp A (rho_nbr - rho_own) c_g / 8
    col8 = (ne + 3 * slot[G8])[:, None, :, None] + d3             # (ni,1,8,3)
    mask88 = g8_int[:, :, None, None] & g8_int[:, None, :, None]
    add(rowm, col8,
        alpha * 0.125 * (scoef * (rho_p - rho_m)[:, None])[:, :, None, None], mask88)

    J = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(nun, nun),
    )
    return J.tocsr()


# ---------------------------------------------------------------------------
# SPD building blocks shared with the solver.


def interior_stiffness(mesh: Mesh) -> sp.csr_matrix:
    """Scalar broken-gradient stiffness on interior face dofs, cached."""
    cached = mesh._space_cache.get("stiffness")
    if cached is None:
        gb = basis_gradients(mesh)
        kpair = np.einsum("e,ekf,ekg->efg", mesh.elem_volume, gb, gb)
        ef = mesh.elem_faces
        r = np.broadcast_to(ef[:, :, None], kpair.shape)
        c = np.broadcast_to(ef[:, None, :], kpair.shape)
        K = sp.coo_matrix(
            (kpair.ravel(), (r.ravel(), c.ravel())),
            shape=(mesh.n_faces, mesh.n_faces),
        ).tocsr()
        int_f = mesh.interior_faces
        cached = K[int_f][:, int_f]
        mesh._space_cache["stiffness"] = cached
    return cached


def interior_weighted_mass(mesh: Mesh, rho: NDArrayF) -> sp.csr_matrix:
    """Scalar matrix of sum_E |E| rho_E uhat_E vhat_E on interior face dofs."""
    w = mesh.elem_volume * rho / 16.0
    ef = mesh.elem_faces
    r = np.broadcast_to(ef[:, :, None], (mesh.n_elems, 4, 4))
    c = np.broadcast_to(ef[:, None, :], (mesh.n_elems, 4, 4))
    v = np.broadcast_to(w[:, None, None], (mesh.n_elems, 4, 4))
    M = sp.coo_matrix(
        (v.ravel(), (r.ravel(), c.ravel())), shape=(mesh.n_faces, mesh.n_faces)
    ).tocsr()
    int_f = mesh.interior_faces
    return M[int_f][:, int_f]


# ---------------------------------------------------------------------------
# Time stepping and full runs.


def time_step(
    prev: State,
    params: SchemeParams,
    mesh: Mesh,
    settings: "HomotopySettings | None" = None,
) -> tuple[State, "StepDiagnostics"]:
    """Advance one step of size c*h; raises StepFailure when no continuation
    schedule converges."""
    from . import solver

    return solver.homotopy_newton_solve(prev, params, mesh, settings)


def stationary_data(rho_bar: float = 1.0):
    def rho0(p):
        return np.full(np.atleast_2d(p).shape[0], rho_bar)

    def m0(p):
        return np.zeros((np.atleast_2d(p).shape[0], 3))

    return rho0, m0


def bump_data(rho_bar: float = 1.0, amp: float = 0.5, sigma: float = 0.15, center=(0.5, 0.5, 0.5)):
    """Gaussian density bump at rest."""
    ctr = np.asarray(center, dtype=float)

    def rho0(p):
        p = np.atleast_2d(p)
        r2 = np.sum((p - ctr) ** 2, axis=1)
        return rho_bar + amp * np.exp(-r2 / sigma**2)

    def m0(p):
        return np.zeros((np.atleast_2d(p).shape[0], 3))

    return rho0, m0


def shear_data(rho_bar: float = 1.0, amp: float = 0.5):
    """Uniform density with a sinusoidal shear momentum m_x = amp sin(2 pi y)."""

    def rho0(p):
        return np.full(np.atleast_2d(p).shape[0], rho_bar)

    def m0(p):
        p = np.atleast_2d(p)
        m = np.zeros((p.shape[0], 3))
        m[:, 0] = rho_bar * amp * np.sin(2.0 * np.pi * p[:, 1])
        return m

    return rho0, m0


PRESETS = {"stationary": stationary_data, "bump": bump_data, "shear": shear_data}


@dataclass
class RunResult:
    mesh: Mesh
    params: SchemeParams
    dt: float
    states: list
    rows: list          # one diagnostics dict per state, CSV column keys
    diagnostics: list   # per-step solver diagnostics (empty slot for step 0)


def make_initial_data(preset: str, rho_bar: float, amp: float, sigma: float, box_lo, box_hi):
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    if preset == "stationary":
        return stationary_data(rho_bar)
    if preset == "shear":
        return shear_data(rho_bar, amp)
    center = 0.5 * (np.asarray(box_lo, dtype=float) + np.asarray(box_hi, dtype=float))
    return bump_data(rho_bar, amp, sigma, center)


def run(
    mesh: Mesh,
    params: SchemeParams,
    rho0: Callable,
    m0: Callable,
    T: float | None = None,
    steps: int | None = None,
    settings: "HomotopySettings | None" = None,
    on_state: Callable | None = None,
) -> RunResult:
    """Run the scheme from projected initial data for `steps` steps, or until
    the piecewise-constant-in-time extension covers [0, T]."""
    from . import diagnostics as diag
    from . import solver

    dt = params.dt(mesh)
    if steps is None:
        if T is None:
            raise ValueError("provide either T or steps")
        if T <= 0.0:
            raise ValueError(f"T must be > 0, got {T}")
        steps = max(1, int(np.ceil(T / dt - 1e-9)))

    state = initial_state(rho0, m0, mesh, params)
    ledger0 = diag.energy_ledger(state, params, mesh)
    states = [state]
    step_diags: list = [None]
    rows = [diag.csv_row(0, 0.0, ledger0, 0.0, 0.0, 0, 0)]
    dissipation = 0.0
    e0 = ledger0.total

    for k in range(1, steps + 1):
        try:
            new, sd = solver.homotopy_newton_solve(state, params, mesh, settings)
        except solver.StepFailure as exc:
            exc.step = k
            raise
        ledger = diag.energy_ledger(new, params, mesh, prev=state)
        dissipation += dt * (ledger.grad_diss + ledger.d2 + ledger.d5)
        margin = e0 - (ledger.total + dissipation)
        slack = diag.positivity_slack(state, new, params, mesh)
        rows.append(
            diag.csv_row(k, new.t, ledger, margin, slack,
                         sd.newton_iters, sd.alpha_nodes_used)
        )
        states.append(new)
        step_diags.append(sd)
        if on_state is not None:
            on_state(new, rows[-1])
        state = new

    return RunResult(mesh=mesh, params=params, dt=dt, states=states, rows=rows,
                     diagnostics=step_diags)

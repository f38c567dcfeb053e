"""Tests for the energy ledger, structure checks, and refinement studies."""

import numpy as np
import pytest

from nsfemdg import diagnostics, io, scheme, solver
from nsfemdg.mesh import build_box_mesh
from nsfemdg.spaces import (
    PolynomialField,
    ScalarPolynomial,
    ScalarQField,
    SineField,
    VelocityCRField,
    apply_bc,
    broken_divergence,
    cell_means,
    element_average,
    interpolate_v,
)


def _random_state(mesh, rng, k=1, t=0.1, rho_scale=0.5, u_scale=0.4):
    """Admissible but otherwise arbitrary state: positive density, no-slip u."""
    rho = 1.0 + rho_scale * rng.uniform(size=len(mesh.tets))
    u = apply_bc(VelocityCRField(
        dofs=u_scale * rng.standard_normal((len(mesh.face_area), 3)),
        boundary_mask=mesh.face_neighbor < 0,
    ))
    return scheme.State(rho=ScalarQField(rho), u=u, k=k, t=t)


def _constant_velocity(mesh, vec):
    dofs = np.tile(np.asarray(vec, dtype=float), (len(mesh.face_area), 1))
    return VelocityCRField(dofs=dofs, boundary_mask=mesh.face_neighbor < 0)


# ---------------------------------------------------------------------------
# energy ledger


def test_energy_ledger_uniform_rest():
    mesh = build_box_mesh(2)
    params = scheme.SchemeParams(gamma=4.0, a=1.0)
    state = scheme.State(
        rho=ScalarQField(np.full(len(mesh.tets), 2.0)),
        u=_constant_velocity(mesh, (0.0, 0.0, 0.0)),
        k=0, t=0.0,
    )
    led = diagnostics.energy_ledger(state, params, mesh)
    assert led.mass == pytest.approx(2.0, abs=1e-14)
    assert led.kinetic == 0.0
    # internal energy density a rho^gamma / (gamma - 1) = 16 / 3 on the unit box
    assert led.internal == pytest.approx(16.0 / 3.0, rel=1e-14)
    assert led.grad_diss == 0.0
    assert led.d2 == 0.0
    assert led.d5 == 0.0
    assert led.min_rho == 2.0
    assert led.total == led.kinetic + led.internal


def test_energy_ledger_constant_velocity_kinetic():
    mesh = build_box_mesh(2)
    params = scheme.SchemeParams()
    state = scheme.State(
        rho=ScalarQField(np.full(len(mesh.tets), 2.0)),
        u=_constant_velocity(mesh, (1.0, 2.0, 3.0)),
        k=0, t=0.0,
    )
    led = diagnostics.energy_ledger(state, params, mesh)
    # 0.5 * rho * |u|^2 * |box| = 0.5 * 2 * 14
    assert led.kinetic == pytest.approx(14.0, rel=1e-13)
    assert led.grad_diss == pytest.approx(0.0, abs=1e-24)
    assert led.d2 == pytest.approx(0.0, abs=1e-24)


def test_energy_ledger_linear_velocity_grad_diss():
    mesh = build_box_mesh(2)
    params = scheme.SchemeParams()
    A = np.array([[0.3, -0.1, 0.2], [0.0, 0.4, -0.2], [0.1, 0.0, -0.5]])

    def u_fn(p):
        return np.atleast_2d(p) @ A.T

    state = scheme.State(
        rho=ScalarQField(np.ones(len(mesh.tets))),
        u=interpolate_v(u_fn, mesh),
        k=0, t=0.0,
    )
    led = diagnostics.energy_ledger(state, params, mesh)
    # interpolation reproduces linear fields, so the broken gradient is A
    # everywhere and the squared seminorm is ||A||_F^2 times the box volume.
    assert led.grad_diss == pytest.approx(np.sum(A**2), rel=1e-12)


def test_energy_ledger_d2_matches_hand_loop():
    mesh = build_box_mesh(2)
    params = scheme.SchemeParams()
    rng = np.random.default_rng(11)
    state = _random_state(mesh, rng)
    led = diagnostics.energy_ledger(state, params, mesh)

    uhat = element_average(state.u, mesh)
    rho = state.rho.values
    expected = 0.0
    for f in np.flatnonzero(mesh.face_neighbor >= 0):
        own, nbr = mesh.face_owner[f], mesh.face_neighbor[f]
        flux = float(state.u.dofs[f] @ mesh.face_normal[f])
        up = rho[own] * max(flux, 0.0) + rho[nbr] * min(flux, 0.0)
        jump2 = float(np.sum((uhat[nbr] - uhat[own]) ** 2))
        expected += 0.5 * mesh.face_area[f] * abs(up) * jump2
    assert led.d2 == pytest.approx(expected, rel=1e-13)
    assert led.d2 > 1e-6  # the random state actually exercises the sum


def test_energy_ledger_d5_matches_hand_loop():
    mesh = build_box_mesh(2)
    params = scheme.SchemeParams()
    rng = np.random.default_rng(12)
    prev = _random_state(mesh, rng, k=0, t=0.0)
    new = _random_state(mesh, rng, k=1, t=params.dt(mesh))
    led = diagnostics.energy_ledger(new, params, mesh, prev=prev)

    dt = params.dt(mesh)
    du = element_average(new.u, mesh) - element_average(prev.u, mesh)
    expected = float(
        np.sum(mesh.elem_volume * prev.rho.values * np.sum(du**2, axis=1))
    ) / (2.0 * dt)
    assert led.d5 == pytest.approx(expected, rel=1e-13)
    assert led.d5 > 1e-6


# ---------------------------------------------------------------------------
# positivity and renormalized continuity


def test_positivity_slack_hand_case():
    mesh = build_box_mesh(2)
    params = scheme.SchemeParams()
    s = np.array([0.4, -0.1, 0.3])

    def u_fn(p):
        return np.atleast_2d(p) * s

    prev = scheme.State(
        rho=ScalarQField(np.linspace(0.8, 1.2, len(mesh.tets))),
        u=_constant_velocity(mesh, (0, 0, 0)), k=0, t=0.0)
    new = scheme.State(
        rho=ScalarQField(np.linspace(0.9, 1.1, len(mesh.tets))),
        u=interpolate_v(u_fn, mesh), k=1, t=params.dt(mesh))

    # div u = 0.4 - 0.1 + 0.3 = 0.6 exactly, everywhere
    div = broken_divergence(new.u, mesh)
    assert np.allclose(div, 0.6, atol=1e-12)
    dt = params.dt(mesh)
    expected = 0.9 - 0.8 / (1.0 + dt * 0.6)
    assert diagnostics.positivity_slack(prev, new, params, mesh) == pytest.approx(
        expected, rel=1e-12)


def test_renormalized_margin_recompute():
    mesh = build_box_mesh(2)
    params = scheme.SchemeParams()
    rng = np.random.default_rng(13)
    prev = _random_state(mesh, rng, k=0, t=0.0)
    new = _random_state(mesh, rng, k=1, t=params.dt(mesh))

    lhs, rhs, margin = diagnostics.renormalized_margin(prev, new, params, mesh)
    dt = params.dt(mesh)
    vol = mesh.elem_volume
    lhs_ref = np.sum(vol * (new.rho.values**2 - prev.rho.values**2)) / (2 * dt)
    rhs_ref = -np.sum(vol * 0.5 * new.rho.values**2
                      * broken_divergence(new.u, mesh))
    assert lhs == pytest.approx(lhs_ref, rel=1e-13)
    assert rhs == pytest.approx(rhs_ref, rel=1e-13)
    assert margin == pytest.approx(rhs_ref - lhs_ref, abs=1e-12)


# ---------------------------------------------------------------------------
# transport identities


@pytest.mark.parametrize("n", [1, 2])
def test_transport_identities_arbitrary_state(n):
    mesh = build_box_mesh(n)
    rng = np.random.default_rng(100 + n)
    phi = ScalarPolynomial.random(rng)
    v = PolynomialField.random(rng)
    for trial in range(3):
        state = _random_state(mesh, rng, u_scale=0.6)
        res = diagnostics.transport_identity_residuals(state, mesh, phi, v, degree=4)
        assert res["continuity"] <= 1e-12
        assert res["momentum"] <= 1e-12


def test_transport_identity_has_teeth():
    # the identity must balance genuinely large parts, not compare zeros
    mesh = build_box_mesh(2)
    rng = np.random.default_rng(21)
    phi = ScalarPolynomial.random(rng)
    v = PolynomialField.random(rng)
    state = _random_state(mesh, rng, u_scale=0.6)
    lhs_c, vol_c, p1 = diagnostics.continuity_transport(state, mesh, phi, degree=4)
    lhs_m, vol_m, p2, p3, p4 = diagnostics.momentum_transport(state, mesh, v, degree=4)
    assert max(abs(lhs_c), abs(vol_c), abs(p1)) > 1e-4
    assert max(abs(lhs_m), abs(vol_m), abs(p2), abs(p3), abs(p4)) > 1e-4
    assert abs(lhs_c - (vol_c + p1)) <= 1e-12 * (1.0 + abs(lhs_c))
    assert abs(lhs_m - (vol_m + p2 + p3 + p4)) <= 1e-12 * (1.0 + abs(lhs_m))


def test_transport_constant_test_functions_vanish():
    mesh = build_box_mesh(1)
    rng = np.random.default_rng(22)
    state = _random_state(mesh, rng)

    phi = ScalarPolynomial(coeffs=np.r_[2.0, np.zeros(9)])
    v = PolynomialField(coeffs=np.zeros((3, 10)))
    v.coeffs[:, 0] = (1.0, -2.0, 0.5)

    lhs_c, vol_c, p1 = diagnostics.continuity_transport(state, mesh, phi)
    assert abs(lhs_c) < 1e-13 and abs(vol_c) < 1e-13 and abs(p1) < 1e-13
    lhs_m, vol_m, p2, p3, p4 = diagnostics.momentum_transport(state, mesh, v)
    for val in (lhs_m, vol_m, p2, p3, p4):
        assert abs(val) < 1e-12


# ---------------------------------------------------------------------------
# CSV row and trajectory integrals


def test_csv_row_matches_column_contract():
    led = diagnostics.EnergyLedger(mass=1.0, kinetic=0.5, internal=2.0,
                                   grad_diss=0.1, d2=0.01, d5=0.001, min_rho=0.9)
    row = diagnostics.csv_row(3, 0.75, led, 1e-12, 1e-6, 4, 2)
    assert tuple(row) == io.CSV_COLUMNS
    assert row["step"] == 3
    assert row["D2"] == 0.01
    assert row["D5"] == 0.001
    assert row["alpha_nodes_used"] == 2


def test_transport_defect_integrals_hand_loop():
    mesh = build_box_mesh(1)
    params = scheme.SchemeParams()
    rng = np.random.default_rng(31)
    dt = params.dt(mesh)
    states = [_random_state(mesh, rng, k=k, t=k * dt) for k in range(3)]
    result = scheme.RunResult(mesh=mesh, params=params, dt=dt,
                              states=states, rows=[], diagnostics=[])
    phi = ScalarPolynomial.random(rng)
    v = PolynomialField.random(rng)

    totals = diagnostics.transport_defect_integrals(result, phi, v, degree=4)
    expected = dict.fromkeys(("P1", "P2", "P3", "P4"), 0.0)
    for state in states[1:]:  # state k holds on ((k-1) dt, k dt]
        _, _, p1 = diagnostics.continuity_transport(state, mesh, phi, degree=4)
        _, _, p2, p3, p4 = diagnostics.momentum_transport(state, mesh, v, degree=4)
        for key, val in zip(("P1", "P2", "P3", "P4"), (p1, p2, p3, p4)):
            expected[key] += dt * abs(val)
    for key in expected:
        assert totals[key] == pytest.approx(expected[key], rel=1e-13)
        assert totals[key] > 0.0


# ---------------------------------------------------------------------------
# Cauchy differences on synthetic trajectories


def _const_result(mesh, dt, values):
    """Trajectory of spatially constant densities, one value per time level."""
    states = [
        scheme.State(rho=ScalarQField(np.full(len(mesh.tets), val)),
                     u=_constant_velocity(mesh, (0, 0, 0)), k=k, t=k * dt)
        for k, val in enumerate(values)
    ]
    return scheme.RunResult(mesh=mesh, params=scheme.SchemeParams(), dt=dt,
                            states=states, rows=[], diagnostics=[])


def test_cauchy_difference_constant_offset():
    coarse = _const_result(build_box_mesh(1), 0.5, [1.0, 1.0, 1.0])
    fine = _const_result(build_box_mesh(2), 0.25, [1.5] * 5)
    (diff,) = diagnostics.cauchy_differences([coarse, fine], T=1.0)
    # |difference| = 0.5 on the whole unit box for the whole unit interval
    assert diff == pytest.approx(0.5, rel=1e-13)


def test_cauchy_difference_piecewise_in_time():
    # coarse jumps to 2 on [0.5, 1); fine stays at 1: mismatch on half the time
    coarse = _const_result(build_box_mesh(1), 0.5, [1.0, 2.0, 4.0])
    fine = _const_result(build_box_mesh(2), 0.25, [1.0] * 5)
    (diff,) = diagnostics.cauchy_differences([coarse, fine], T=1.0)
    assert diff == pytest.approx(np.sqrt(0.5), rel=1e-12)


def test_cauchy_differences_pair_count():
    results = [
        _const_result(build_box_mesh(1), 0.5, [1.0, 1.0, 1.0]),
        _const_result(build_box_mesh(2), 0.25, [1.0] * 5),
        _const_result(build_box_mesh(4), 0.125, [1.0] * 9),
    ]
    diffs = diagnostics.cauchy_differences(results, T=1.0)
    assert len(diffs) == 2
    assert all(d == pytest.approx(0.0, abs=1e-14) for d in diffs)


def test_cauchy_differences_on_solver_runs_decrease():
    params = scheme.SchemeParams()
    rho0, m0 = scheme.bump_data(amp=0.3, sigma=0.2)
    T = 0.5
    results = [
        scheme.run(build_box_mesh(n), params, rho0, m0, T=T) for n in (1, 2)
    ]
    diffs = diagnostics.cauchy_differences(results, T)
    assert len(diffs) == 1
    assert diffs[0] > 0.0


# ---------------------------------------------------------------------------
# injected smooth data and refinement studies


def test_bump_flow_data_velocity_vanishes_on_boundary():
    data = diagnostics.bump_flow_data(box_lo=(0, -1, 2), box_hi=(2, 1, 3))
    _, u_fn = data(0.3)
    pts = np.array([
        [0.0, 0.0, 2.5], [2.0, 0.5, 2.2], [1.0, -1.0, 2.9],
        [1.5, 1.0, 2.1], [0.7, 0.3, 2.0], [0.2, -0.5, 3.0],
    ])
    assert np.max(np.abs(u_fn(pts))) < 1e-14


def test_bump_flow_data_center_drifts():
    data = diagnostics.bump_flow_data(drift=(0.2, 0.1, 0.05))
    rho0, _ = data(0.0)
    rho1, _ = data(1.0)
    assert rho0(np.array([[0.5, 0.5, 0.5]]))[0] > rho1(np.array([[0.5, 0.5, 0.5]]))[0]
    assert rho1(np.array([[0.7, 0.6, 0.55]]))[0] > rho0(np.array([[0.7, 0.6, 0.55]]))[0]


def test_p_decay_study_shapes_and_hand_check():
    rng = np.random.default_rng(7)
    phi = ScalarPolynomial.random(rng)
    v = PolynomialField.random(rng)
    data = diagnostics.bump_flow_data()
    params = scheme.SchemeParams()
    study = diagnostics.p_decay_study((1, 2), data, phi, v, T=0.4, params=params)

    assert [row["n"] for row in study["rows"]] == [1, 2]
    assert all(len(study["rates"][k]) == 1 for k in ("P1", "P2", "P3", "P4"))

    # recompute the n=1 row directly: h = sqrt(3), dt = c h, one sample at dt
    mesh = build_box_mesh(1)
    dt = params.dt(mesh)
    assert int(np.ceil(0.4 / dt - 1e-9)) == 1
    rho_fn, u_fn = data(dt)
    state = scheme.State(
        rho=ScalarQField(cell_means(rho_fn, mesh, 4)),
        u=apply_bc(interpolate_v(u_fn, mesh, degree=4)), k=1, t=dt)
    _, _, p1 = diagnostics.continuity_transport(state, mesh, phi, degree=4)
    _, _, p2, p3, p4 = diagnostics.momentum_transport(state, mesh, v, degree=4)
    row = study["rows"][0]
    for key, val in zip(("P1", "P2", "P3", "P4"), (p1, p2, p3, p4)):
        assert row[key] == pytest.approx(dt * abs(val), rel=1e-13)


def test_interpolation_rate_study_orders():
    study = diagnostics.interpolation_rate_study(SineField(), (2, 4))
    assert study["h"][0] == pytest.approx(2.0 * study["h"][1], rel=1e-12)
    assert study["l2"][0] > study["l2"][1]
    assert study["h1"][0] > study["h1"][1]
    assert 1.5 <= study["l2_order"] <= 2.5
    assert 0.5 <= study["h1_order"] <= 1.5

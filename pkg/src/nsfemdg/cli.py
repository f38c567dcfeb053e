"""Command-line entry point: time-stepping runs, invariant checks, studies.

Configuration comes from a plain-text ``key = value`` file (``#`` starts a
comment) and/or ``--key value`` flags; flags override file values and unknown
keys are rejected.  Exit codes: 0 success, 1 configuration error, 2 numerical
failure (a step that would not converge, or a failed invariant check).
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import diagnostics, oracles, scheme, solver
from .io import write_csv, write_table, write_vtk
from .mesh import build_box_mesh
from .spaces import (
    PolynomialField,
    ScalarPolynomial,
    ScalarQField,
    SineField,
    VelocityCRField,
    apply_bc,
    commuting_residual,
    element_average,
    orthogonality_residual,
)


class ConfigError(ValueError):
    """Invalid configuration file, flag, or value."""


_INT_KEYS = frozenset(
    {"n", "steps", "cadence", "newton_max_iter", "homotopy_steps", "quad_volume", "quad_face"}
)
_FLOAT_KEYS = frozenset(
    {"T", "gamma", "a", "epsilon", "kappa", "c", "newton_tol", "rho_bar", "amp", "sigma"}
)
_STR_KEYS = frozenset({"preset", "outdir", "kind"})
_STUDY_KINDS = ("rates", "cauchy", "pdecay")


@dataclass
class RunConfig:
    """Validated settings for one invocation; defaults match the scheme's."""

    n: int = 2
    box: tuple = (0.0, 0.0, 0.0, 1.0, 1.0, 1.0)
    T: float | None = None
    steps: int | None = None
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
    preset: str = "stationary"
    rho_bar: float = 1.0
    amp: float = 0.5
    sigma: float = 0.15
    outdir: str = "out"
    cadence: int = 1
    kind: str = "rates"
    ns: tuple = (2, 4, 8)

    def params(self) -> scheme.SchemeParams:
        try:
            return scheme.SchemeParams(
                gamma=self.gamma, a=self.a, epsilon=self.epsilon, kappa=self.kappa,
                c=self.c, newton_tol=self.newton_tol,
                newton_max_iter=self.newton_max_iter,
                homotopy_steps=self.homotopy_steps,
                quad_volume=self.quad_volume, quad_face=self.quad_face,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def mesh(self):
        return build_box_mesh(self.n, self.box[:3], self.box[3:])

    def validate(self) -> "RunConfig":
        if self.n < 1:
            raise ConfigError(f"n must be >= 1, got {self.n}")
        if len(self.box) != 6 or any(self.box[i] >= self.box[i + 3] for i in range(3)):
            raise ConfigError(f"box must be x0 y0 z0 x1 y1 z1 with x0 < x1 etc, got {self.box}")
        if self.T is not None and self.T <= 0.0:
            raise ConfigError(f"T must be > 0, got {self.T}")
        if self.steps is not None and self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")
        if self.cadence < 1:
            raise ConfigError(f"cadence must be >= 1, got {self.cadence}")
        if self.preset not in scheme.PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}; choose from {sorted(scheme.PRESETS)}")
        if self.kind not in _STUDY_KINDS:
            raise ConfigError(f"unknown study kind {self.kind!r}; choose from {_STUDY_KINDS}")
        if not self.ns or any(m < 1 for m in self.ns):
            raise ConfigError(f"ns must be positive integers, got {self.ns}")
        self.params()  # surfaces scheme parameter violations as config errors
        return self


def _convert(key: str, raw: str, where: str):
    known = _INT_KEYS | _FLOAT_KEYS | _STR_KEYS | {"box", "ns"}
    if key not in known:
        raise ConfigError(f"{where}: unknown key {key!r}")
    try:
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
        if key == "box":
            vals = tuple(float(t) for t in raw.replace(",", " ").split())
            if len(vals) != 6:
                raise ValueError("need 6 numbers")
            return vals
        if key == "ns":
            return tuple(int(t) for t in raw.replace(",", " ").split())
        return raw
    except ValueError as exc:
        raise ConfigError(f"{where}: invalid value {raw!r} for {key}: {exc}") from exc


def parse_config(path=None, overrides=()) -> RunConfig:
    """Build a RunConfig from an optional file plus ``(key, value)`` overrides."""
    values = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, raw = line.partition("=")
            if not sep:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            values[key.strip()] = _convert(key.strip(), raw.strip(), f"{path}:{lineno}")
    for key, raw in overrides:
        values[key] = _convert(key, raw, f"--{key}")
    return RunConfig(**values).validate()


# ---------------------------------------------------------------------------
# run


def cmd_run(cfg: RunConfig) -> int:
    mesh = cfg.mesh()
    params = cfg.params()
    rho0, m0 = scheme.make_initial_data(
        cfg.preset, cfg.rho_bar, cfg.amp, cfg.sigma, mesh.box_lo, mesh.box_hi
    )
    T, steps = cfg.T, cfg.steps
    if T is None and steps is None:
        steps = 10
    try:
        result = scheme.run(mesh, params, rho0, m0, T=T, steps=steps)
    except solver.StepFailure as exc:
        print(
            f"run failed at step {exc.step}: alpha={exc.alpha:g}, "
            f"{exc.iterations} iterations, residual {exc.residual_norm:.3e}",
            file=sys.stderr,
        )
        return 2

    outdir = Path(cfg.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    write_csv(outdir / "diagnostics.csv", result.rows)
    for state in result.states:
        if state.k % cfg.cadence == 0 or state.k == len(result.states) - 1:
            write_vtk(
                outdir / f"state_{state.k:04d}.vtk", mesh,
                density=state.rho.values,
                velocity=element_average(state.u, mesh),
            )
    first, last = result.rows[0], result.rows[-1]
    drift = abs(last["mass"] - first["mass"]) / abs(first["mass"])
    print(f"run: {len(result.states) - 1} steps on {mesh.n_elems} elements, dt={result.dt:.6g}")
    print(f"run: mass drift {drift:.3e}, final energy {last['kinetic'] + last['internal']:.9g}, "
          f"min_rho {last['min_rho']:.9g}")
    print(f"run: wrote {outdir / 'diagnostics.csv'}")
    return 0


# ---------------------------------------------------------------------------
# check


def _probe_state(mesh, params, rng) -> tuple:
    """A previous/current state pair with nonuniform density and admissible u."""
    rho0, m0 = scheme.bump_data(1.0, 0.4, 0.3, 0.5 * (mesh.box_lo + mesh.box_hi))
    prev = scheme.initial_state(rho0, m0, mesh, params)
    rho = prev.rho.values * (1.0 + 0.2 * rng.uniform(-1.0, 1.0, mesh.n_elems))
    dofs = 0.3 * rng.standard_normal((mesh.n_faces, 3))
    u = apply_bc(VelocityCRField(dofs, mesh.is_boundary_face.copy()))
    guess = scheme.State(rho=ScalarQField(rho), u=u, k=1, t=params.dt(mesh))
    return prev, guess


def _safe_jacobian_state(mesh, params, rng):
    """Probe pair whose interior normal fluxes all sit away from upwind kinks."""
    prev, guess = _probe_state(mesh, params, rng)
    dofs = guess.u.dofs.copy()
    for f in mesh.interior_faces:
        nu = mesh.face_normal[f]
        flux = float(dofs[f] @ nu)
        if abs(flux) < 0.01:
            target = 0.01 if flux >= 0.0 else -0.01
            dofs[f] += (target - flux) * nu
    u = VelocityCRField(dofs, mesh.is_boundary_face.copy())
    return prev, scheme.State(rho=guess.rho, u=u, k=guess.k, t=guess.t)


def cmd_check(cfg: RunConfig, corrupt: str | None = None) -> int:
    """Run the invariant suite on small fixed meshes; exit 0 only if all pass.

    `corrupt="flux-sign"` is a test hook that hands the reference assembly a
    velocity with flipped sign, which must make the equivalence checks fail.
    """
    params = cfg.params()
    rng = np.random.default_rng(20240831)
    results: list[tuple[str, float, float]] = []

    for n in (1, 2):
        mesh = build_box_mesh(n)
        worst = 0.0
        for _ in range(3):
            field = PolynomialField.random(rng)
            worst = max(worst, max(commuting_residual(field, mesh).values()))
        results.append((f"commuting identities n={n}", worst, 1e-12))

    mesh2 = build_box_mesh(2)
    u = apply_bc(VelocityCRField(rng.standard_normal((mesh2.n_faces, 3)),
                                 mesh2.is_boundary_face.copy()))
    worst = 0.0
    for _ in range(2):
        field = PolynomialField.random(rng)
        worst = max(worst, abs(orthogonality_residual(u, field, mesh2)))
    results.append(("gradient orthogonality n=2", worst, 1e-9))

    for n in (1, 2):
        mesh = build_box_mesh(n)
        prev, guess = _probe_state(mesh, params, rng)
        guess_ref = guess
        if corrupt == "flux-sign":
            guess_ref = scheme.State(
                rho=guess.rho,
                u=VelocityCRField(-guess.u.dofs, mesh.is_boundary_face.copy()),
                k=guess.k, t=guess.t,
            )
        res = scheme.residual(prev, guess, params, mesh)
        ref_cont = oracles.continuity_rows_reference(prev, guess_ref, params, mesh)
        ref_mom = oracles.momentum_rows_reference(prev, guess_ref, params, mesh)
        scale_c = 1.0 + np.abs(ref_cont).max()
        scale_m = 1.0 + np.abs(ref_mom).max()
        results.append((f"continuity vs reference n={n}",
                        float(np.abs(res.continuity - ref_cont).max()) / scale_c, 1e-13))
        results.append((f"momentum vs reference n={n}",
                        float(np.abs(res.momentum - ref_mom).max()) / scale_m, 1e-12))

    mesh1 = build_box_mesh(1)
    prev, guess = _safe_jacobian_state(mesh1, params, rng)
    J = scheme.jacobian(prev, guess, params, mesh1).toarray()
    J_fd = oracles.jacobian_fd(prev, guess, params, mesh1)
    results.append(("jacobian vs finite differences n=1",
                    float(np.abs(J - J_fd).max() / np.abs(J_fd).max()), 1e-5))

    prev, guess = _probe_state(mesh1, params, rng)
    worst = 0.0
    for degree_coeffs in (1, 4, 10):
        phi = ScalarPolynomial(np.concatenate([rng.uniform(-1, 1, degree_coeffs),
                                               np.zeros(10 - degree_coeffs)]))
        v = PolynomialField(np.concatenate([rng.uniform(-1, 1, (3, degree_coeffs)),
                                            np.zeros((3, 10 - degree_coeffs))], axis=1))
        res = diagnostics.transport_identity_residuals(guess, mesh1, phi, v, degree=2)
        worst = max(worst, res["continuity"], res["momentum"])
    results.append(("transport identities n=1", worst, 1e-10))

    ok = True
    for name, value, tol in results:
        passed = value <= tol
        ok = ok and passed
        print(f"check {name:<34} residual {value:9.3e}  tol {tol:7.1e}  "
              f"{'ok' if passed else 'FAIL'}")
    print(f"check: {'all passed' if ok else 'FAILURES detected'}")
    return 0 if ok else 2


# ---------------------------------------------------------------------------
# study


def _study_run(cfg: RunConfig, n: int, T: float):
    mesh = build_box_mesh(n, cfg.box[:3], cfg.box[3:])
    params = cfg.params()
    rho0, m0 = scheme.make_initial_data(
        cfg.preset if cfg.preset != "stationary" else "bump",
        cfg.rho_bar, cfg.amp, cfg.sigma, mesh.box_lo, mesh.box_hi,
    )
    return scheme.run(mesh, params, rho0, m0, T=T)


def cmd_study(cfg: RunConfig) -> int:
    outdir = Path(cfg.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    # The defect-decay study needs a longer window so even the coarsest mesh
    # sees several time samples; the Cauchy study keeps a short horizon to
    # bound the fine-mesh cost.
    T = cfg.T if cfg.T is not None else (0.5 if cfg.kind == "pdecay" else 0.25)

    if cfg.kind == "rates":
        study = diagnostics.interpolation_rate_study(
            SineField(), cfg.ns, cfg.box[:3], cfg.box[3:]
        )
        rows = list(zip(cfg.ns, study["h"], study["l2"], study["h1"]))
        write_table(outdir / "rates.csv", ("n", "h", "l2_error", "h1_error"), rows)
        for row in rows:
            print(f"study rates: n={row[0]} h={row[1]:.6g} l2={row[2]:.6e} h1={row[3]:.6e}")
        print(f"study rates: l2 order {study['l2_order']:.3f}, h1 order {study['h1_order']:.3f}")
        print(f"study rates: wrote {outdir / 'rates.csv'}")
        return 0

    if cfg.kind == "pdecay":
        rng = np.random.default_rng(7)
        phi = ScalarPolynomial.random(rng)
        v = PolynomialField.random(rng)
        data = diagnostics.bump_flow_data(box_lo=cfg.box[:3], box_hi=cfg.box[3:])
        study = diagnostics.p_decay_study(
            cfg.ns, data, phi, v, T=T, params=cfg.params(),
            box_lo=cfg.box[:3], box_hi=cfg.box[3:],
        )
        rows = [(r["n"], r["h"], r["P1"], r["P2"], r["P3"], r["P4"])
                for r in study["rows"]]
        write_table(outdir / "pdecay.csv", ("n", "h", "P1", "P2", "P3", "P4"), rows)
        for r in study["rows"]:
            print(f"study pdecay: n={r['n']} P1={r['P1']:.6e} P2={r['P2']:.6e} "
                  f"P3={r['P3']:.6e} P4={r['P4']:.6e}")
        for key in ("P1", "P2", "P3", "P4"):
            rates = " ".join(f"{x:.2f}" for x in study["rates"][key])
            print(f"study pdecay: {key} log2 rates {rates}")
        print(f"study pdecay: wrote {outdir / 'pdecay.csv'}")
        return 0

    try:
        runs = [_study_run(cfg, n, T) for n in cfg.ns]
    except solver.StepFailure as exc:
        print(f"study failed at step {exc.step}: alpha={exc.alpha:g}, "
              f"residual {exc.residual_norm:.3e}", file=sys.stderr)
        return 2

    diffs = diagnostics.cauchy_differences(runs, T)
    rows = [(a, b, d) for (a, b), d in zip(zip(cfg.ns[:-1], cfg.ns[1:]), diffs)]
    write_table(outdir / "cauchy.csv", ("n_coarse", "n_fine", "l2_spacetime_diff"), rows)
    for a, b, d in rows:
        print(f"study cauchy: n={a} vs n={b}: {d:.6e}")
    print(f"study cauchy: wrote {outdir / 'cauchy.csv'}")
    return 0


# ---------------------------------------------------------------------------
# argument handling


def _override_pairs(tokens: list[str]) -> list[tuple[str, str]]:
    pairs = []
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--"):
            raise ConfigError(f"expected --key value, got {tok!r}")
        key, sep, value = tok[2:].partition("=")
        if not sep:
            if i + 1 >= len(tokens):
                raise ConfigError(f"flag --{key} is missing a value")
            value = tokens[i + 1]
            i += 1
        pairs.append((key, value))
        i += 1
    return pairs


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="nsfemdg",
        description="Implicit FEM-DG solver for isentropic compressible flow "
                    "with a structure-property verification harness.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, doc in (
        ("run", "time-step a preset and write VTK/CSV output"),
        ("check", "run the invariant suite on small fixed meshes"),
        ("study", "refinement studies: rates, cauchy, pdecay"),
    ):
        p = sub.add_parser(name, help=doc)
        p.add_argument("--config", default=None, help="key = value configuration file")

    args, extra = parser.parse_known_args(argv)
    try:
        cfg = parse_config(args.config, _override_pairs(extra))
        if args.command == "run":
            return cmd_run(cfg)
        if args.command == "check":
            return cmd_check(cfg)
        return cmd_study(cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except (solver.StepFailure, solver.SolverError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

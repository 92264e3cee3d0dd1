"""Acceptance suite: one test per criterion, each printing a verdict line.

Run with `pytest -s -v tests/test_acceptance.py` to see the per-criterion
lines.  Sizes and tolerances are fixed here, not tuned at run time.
"""

import time

import numpy as np

from nsgalerkin.brackets import TangentField, double_bracket
from nsgalerkin.closure import determining_closure
from nsgalerkin.drift import SpectralState, quadratic_term
from nsgalerkin.ergodicity import lyapunov_check, mixing_probe
from nsgalerkin.lattice import Truncation, generator_oracle, is_generator_set
from nsgalerkin.sde import (
    SimulationConfig,
    default_noise,
    draw_for,
    ensemble_series,
    ou_variance,
    run_trajectory,
    state_digest,
    step,
)
from nsgalerkin.steering import STEPS_PER_INTERVAL, solve_steering

AXES = [(1, 0, 0), (0, 1, 0), (0, 0, 1)]
T1 = Truncation(1)
T2 = Truncation(2)


def report(num, name, ok, detail, elapsed, budget):
    status = "PASS" if ok and elapsed < budget else "FAIL"
    print(f"ACCEPTANCE {num:02d} {name}: {status} ({detail}; {elapsed:.1f}s < {budget:.0f}s)")
    assert ok, f"criterion {num} failed: {detail}"
    assert elapsed < budget, f"criterion {num} exceeded runtime budget ({elapsed:.1f}s)"


def random_single_mode_field(trunc, k, rng):
    e1, e2 = trunc.frame(k)
    a = rng.standard_normal(4)
    return TangentField.single_mode(trunc, k, vr=a[0] * e1 + a[1] * e2,
                                    vs=a[2] * e1 + a[3] * e2)


def test_01_energy_orthogonality():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1001)
    worst = 0.0
    for trunc in (T1, T2):
        coeffs = rng.standard_normal((500, trunc.n_canonical, 4))
        r = coeffs[:, :, 0:1] * trunc.frame_e1 + coeffs[:, :, 1:2] * trunc.frame_e2
        s = coeffs[:, :, 2:3] * trunc.frame_e1 + coeffs[:, :, 3:4] * trunc.frame_e2
        u = r + 1j * s
        E = quadratic_term(u, trunc)
        half = np.sum(np.conj(u) * E, axis=(1, 2))
        flux = np.abs(2j * half.imag)
        scale = np.sum(np.abs(u) ** 2, axis=(1, 2)) ** 1.5 * np.sqrt(3.0) * trunc.N
        worst = max(worst, float(np.max(flux / scale)))
    report(1, "energy-orthogonality", worst <= 1e-12,
           f"1000 states, max rel flux {worst:.2e} <= 1e-12", time.perf_counter() - t0, 5.0)


def test_02_bracket_closed_form_vs_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1002)
    n_pairs = 1000
    canon = T2.canonical
    fields = []
    uv = np.zeros((n_pairs, 62, 3), dtype=complex)
    uw = np.zeros((n_pairs, 62, 3), dtype=complex)
    for i in range(n_pairs):
        m = canon[rng.integers(len(canon))]
        n = canon[rng.integers(len(canon))]
        V = random_single_mode_field(T2, m, rng)
        W = random_single_mode_field(T2, n, rng)
        fields.append((V, W))
        uv[i] = V.coefficient_state().u
        uw[i] = W.coefficient_state().u
    # batched oracle: second difference of the quadratic term at unit step
    cross = quadratic_term(uv + uw, T2) - quadratic_term(uv, T2) - quadratic_term(uw, T2)
    oracle = -1j * cross
    worst = 0.0
    for i, (V, W) in enumerate(fields):
        closed = np.zeros((62, 3), dtype=complex)
        for k, (vr, vs) in double_bracket(V, W).components.items():
            closed[T2.slot(k)] = vr + 1j * vs
        worst = max(worst, float(np.max(np.abs(closed - oracle[i]))))
    report(2, "bracket-vs-oracle", worst <= 1e-10,
           f"1000 single-mode pairs at N=2, max diff {worst:.2e} <= 1e-10",
           time.perf_counter() - t0, 10.0)


def test_03_collinearity_annihilation():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1003)
    canon = T2.canonical
    n_pairs = 0
    all_zero = True
    for m in canon:
        for n in canon:
            if np.any(np.cross(m, n)):
                continue
            n_pairs += 1
            out = double_bracket(random_single_mode_field(T2, m, rng),
                                 random_single_mode_field(T2, n, rng))
            all_zero &= out.components == {}
    report(3, "collinearity-annihilation", all_zero and n_pairs > 0,
           f"{n_pairs} collinear canonical pairs in K_2, all exactly zero",
           time.perf_counter() - t0, 1.0)


def test_04_polarization_identity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1004)
    from nsgalerkin.brackets import double_bracket_oracle

    canon = T2.canonical
    worst = 0.0
    for _ in range(200):
        m = canon[rng.integers(len(canon))]
        n = canon[rng.integers(len(canon))]
        V = random_single_mode_field(T2, m, rng)
        W = random_single_mode_field(T2, n, rng)
        lhs = double_bracket(V, W)
        rhs = 0.5 * double_bracket_oracle(V + W, V + W)
        scale = max(lhs.max_norm(), 1.0)
        worst = max(worst, (lhs - rhs).max_norm() / scale)
    report(4, "polarization-identity", worst <= 1e-12,
           f"200 pairs, max rel deviation {worst:.2e} <= 1e-12",
           time.perf_counter() - t0, 2.0)


def test_05_working_example_all_cutoffs():
    t0 = time.perf_counter()
    expected = {1: 52, 2: 248, 3: 684}
    ok = True
    ranks = {}
    for N, target in expected.items():
        res = determining_closure(AXES, N)
        ranks[N] = res.total_rank
        ok &= res.is_determining and res.total_rank == target
    report(5, "working-example", ok,
           f"axes determining at N=1,2,3 with ranks {ranks}",
           time.perf_counter() - t0, 60.0)


def test_06_negative_controls():
    t0 = time.perf_counter()
    single = determining_closure([(1, 0, 0)], 1)
    even = determining_closure([(2, 0, 0), (0, 2, 0), (0, 0, 2)], 2)
    odd_blocked = all(
        d == 0 for k, d in even.per_mode_dims.items() if any(c % 2 for c in k)
    )
    even_reached = any(
        d > 0 for k, d in even.per_mode_dims.items() if not any(c % 2 for c in k)
    )
    ok = (not single.is_determining) and (not even.is_determining) \
        and odd_blocked and even_reached
    report(6, "negative-controls", ok,
           "single mode and even sublattice both non-determining, parity "
           "obstruction visible in per-mode dims", time.perf_counter() - t0, 10.0)


def test_07_generator_criterion_vs_enumeration():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1007)
    members = sorted(T2.full)
    n_agree, n_true = 0, 0
    for _ in range(200):
        size = int(rng.integers(3, 6))
        idx = rng.choice(len(members), size=size, replace=False)
        pts = [members[i] for i in idx]
        a = is_generator_set(pts)
        b = generator_oracle(pts, box=10)
        n_agree += a == b
        n_true += a
    report(7, "generator-criterion", n_agree == 200,
           f"gcd-of-minors agreed with box enumeration on 200/200 sets "
           f"({n_true} generators among them)", time.perf_counter() - t0, 30.0)


def test_08_lyapunov_bound():
    t0 = time.perf_counter()
    cfg = SimulationConfig(nu=1.0, dt=0.01, horizon=10.0, seed=1008, record_stride=20)
    spec = default_noise(T1, AXES, 0.5)
    plateau = spec.sigma_sq / 2.0
    st = SpectralState.random(T1, np.random.default_rng(18))
    init = SpectralState(T1, st.u * np.sqrt(5.0 * plateau / st.energy()), validate=False)
    rep = lyapunov_check(cfg, spec, init, ensemble=10_000)
    mean = np.array([s.mean_V for s in rep.samples])
    se = np.array([s.stderr for s in rep.samples])
    env = np.array([s.envelope for s in rep.samples])
    pointwise = bool(np.all(mean <= env + 3.0 * se))
    longrun = rep.long_run_mean <= plateau + 3.0 * rep.long_run_stderr
    ok = pointwise and longrun and rep.verdict == "pass"
    report(8, "lyapunov-bound", ok,
           f"10^4 trajectories, envelope margin min {np.min(env + 3 * se - mean):.3e}, "
           f"long-run {rep.long_run_mean:.3f} <= {plateau:.3f} + 3se",
           time.perf_counter() - t0, 300.0)


def test_09_mixing_shape():
    t0 = time.perf_counter()
    cfg = SimulationConfig(nu=1.0, dt=0.01, horizon=8.0, seed=1009, record_stride=10)
    spec = default_noise(T1, AXES, 0.5)
    initial_a = SpectralState.zero(T1)
    st = SpectralState.random(T1, np.random.default_rng(19))
    initial_b = SpectralState(T1, st.u * np.sqrt(10.0 / st.energy()), validate=False)
    est = mixing_probe(cfg, spec, initial_a, initial_b, ensemble=10_000)
    ok = est.hypothesis_ok and est.fit_ok and est.rho_ci95_low > 0 and est.held_out_ok
    report(9, "mixing-shape", ok,
           f"rho_hat {est.rho_hat:.3f} (95% lower bound {est.rho_ci95_low:.3f} > 0), "
           f"R^2 {est.r_squared:.3f}, held-out under envelope: {est.held_out_ok}",
           time.perf_counter() - t0, 600.0)


def test_10_controllability_witness():
    t0 = time.perf_counter()
    spec = default_noise(T1, AXES, 1.0)
    knots, T = 6, 1.0
    cfg = SimulationConfig(nu=1.0, dt=T / (knots - 1) / STEPS_PER_INTERVAL, horizon=T)
    rng = np.random.default_rng(1010)
    converged = 0
    worst_err = 0.0
    for case in range(20):
        pair = []
        for _ in range(2):
            st = SpectralState.random(T1, rng)
            pair.append(SpectralState(T1, st.u / np.sqrt(st.energy()), validate=False))
        res = solve_steering(pair[0], pair[1], T, knots, cfg, spec,
                             restart_seed=case)
        converged += res.converged
        worst_err = max(worst_err, res.terminal_error / res.tolerance)
    report(10, "controllability-witness", converged >= 18,
           f"{converged}/20 random pairs steered to tolerance "
           f"(worst error/tol {worst_err:.2f})", time.perf_counter() - t0, 600.0)


def test_11_integrator_contracts():
    t0 = time.perf_counter()
    cfg = SimulationConfig(nu=1.0, dt=0.01, horizon=1.0, seed=1011, record_stride=1)
    spec = default_noise(T1, AXES, 1.0)
    init = SpectralState.random(T1, np.random.default_rng(20))

    # divergence-free after every step, at the roundoff floor
    res = run_trajectory(init, cfg, spec)
    kf = T1.modes.astype(float)
    eps = np.finfo(float).eps
    worst_div, div_ok = 0.0, True
    for u in res.snapshots:
        scale = max(1.0, float(np.max(np.abs(u)))) * 3
        div = float(np.max(np.abs(np.einsum("ij,ij->i", kf, u.real))
                           + np.abs(np.einsum("ij,ij->i", kf, u.imag))))
        worst_div = max(worst_div, div)
        div_ok &= div <= 16 * eps * scale

    # deterministic replay, both per trajectory and step by step
    res2 = run_trajectory(init, cfg, spec)
    replay_ok = bool(np.array_equal(res.snapshots, res2.snapshots))
    digest = state_digest(init)
    st = init
    for n in range(20):
        st = step(st, cfg, spec, draw_for(cfg, spec, digest, 0, n))
    replay_ok &= bool(np.array_equal(st.u, res.snapshots[20]))

    # OU variance against the analytic law, one forced mode
    cfg_ou = SimulationConfig(nu=1.0, dt=0.005, horizon=1.0, seed=1111)
    spec_ou = default_noise(T1, [(0, 0, 1)], 1.0)
    slot = T1.slot((0, 0, 1))
    _, recs = ensemble_series(SpectralState.zero(T1), cfg_ou, spec_ou, 10_000,
                              lambda u: u[:, slot].copy(), stride=200)
    e1, _ = T1.frame((0, 0, 1))
    target = ou_variance(1.0, 1.0, 1.0)
    se = target * np.sqrt(2.0 / 9999)
    var_r = float((recs[-1].real @ e1).var(ddof=1))
    var_s = float((recs[-1].imag @ e1).var(ddof=1))
    ou_ok = abs(var_r - target) <= 3 * se and abs(var_s - target) <= 3 * se

    ok = div_ok and replay_ok and ou_ok
    report(11, "integrator-contracts", ok,
           f"max divergence {worst_div:.2e} (roundoff floor), replay bit-identical: "
           f"{replay_ok}, OU var {var_r:.4f}/{var_s:.4f} vs {target:.4f} (3se {3*se:.4f})",
           time.perf_counter() - t0, 120.0)

import json

import numpy as np
import pytest

from nsgalerkin.drift import (
    SpectralState,
    energy_flux,
    eval_drift,
    eval_drift_real,
    from_real_vector,
    project_divfree,
    quadratic_term,
    state_from_csv,
    state_from_json,
    state_to_csv,
    state_to_json,
    to_real_vector,
)
from nsgalerkin.lattice import Truncation

T1 = Truncation(1)
T2 = Truncation(2)


def flux_scale(state):
    return state.energy() ** 1.5 * np.sqrt(3.0) * state.truncation.N


def test_projection_examples():
    assert np.allclose(project_divfree((1, 0, 0), (1, 2, 3)), (0, 2, 3))
    assert np.allclose(project_divfree((2, -1, 3), (2, -1, 3)), (0, 0, 0), atol=1e-14)
    v = np.array([0.0, 3.0, 1.0])
    assert np.allclose(project_divfree((1, 0, 0), v), v)  # already orthogonal
    # idempotent
    w = project_divfree((2, 1, -1), (0.3, -1.2, 4.0))
    assert np.allclose(project_divfree((2, 1, -1), w), w, atol=1e-15)
    with pytest.raises(ValueError):
        project_divfree((0, 0, 0), (1.0, 0, 0))


def test_zero_state_zero_drift():
    ev = eval_drift(SpectralState.zero(T2), nu=0.3)
    assert not np.any(ev.total)


def test_single_mode_is_pure_decay():
    u = np.zeros((13, 3), dtype=complex)
    u[T1.slot((1, 0, 0))] = np.array([0, 1.5, 0]) + 1j * np.array([0, 0, -2.0])
    st = SpectralState(T1, u)
    ev = eval_drift(st, nu=0.7)
    assert not np.any(ev.quadratic)  # self-interaction vanishes exactly
    assert np.allclose(ev.total, -0.7 * u, atol=0)


def test_energy_orthogonality_random_states():
    rng = np.random.default_rng(100)
    for trunc in (T1, T2):
        for _ in range(100):
            st = SpectralState.random(trunc, rng)
            assert abs(energy_flux(st)) <= 1e-12 * flux_scale(st)


def test_complex_and_real_paths_agree():
    rng = np.random.default_rng(200)
    for trunc in (T1, T2):
        for _ in range(100):
            st = SpectralState.random(trunc, rng)
            nu = float(rng.uniform(0.1, 2.0))
            ev = eval_drift(st, nu)
            Fr, Fs = eval_drift_real(st, nu)
            scale = max(1.0, np.max(np.abs(ev.total)))
            assert np.max(np.abs(Fr - ev.total.real)) <= 1e-12 * scale
            assert np.max(np.abs(Fs - ev.total.imag)) <= 1e-12 * scale


def test_purely_real_state_structure():
    # with all s_k = 0, every quadratic term of F_r carries an s factor and
    # dies, while F_s keeps the r-product terms
    rng = np.random.default_rng(7)
    coeffs = rng.standard_normal((13, 4))
    coeffs[:, 2:] = 0.0
    st = SpectralState.from_frame_coeffs(T1, coeffs)
    Fr, Fs = eval_drift_real(st, nu=1.0)
    assert np.array_equal(Fr, -1.0 * T1.norms_sq[:, None] * st.r)
    assert np.max(np.abs(Fs + 1.0 * T1.norms_sq[:, None] * st.s)) > 1e-3


def test_real_negation_symmetry():
    # u -> -conj(u), i.e. r -> -r with s fixed, is a symmetry of the flow:
    # it negates F_r and preserves F_s
    rng = np.random.default_rng(8)
    st = SpectralState.random(T2, rng)
    flipped = SpectralState(T2, -np.conj(st.u), validate=False)
    Fr, Fs = eval_drift_real(st, nu=0.9)
    Gr, Gs = eval_drift_real(flipped, nu=0.9)
    assert np.array_equal(Gr, -Fr)
    assert np.array_equal(Gs, Fs)


def test_quadratic_homogeneity():
    rng = np.random.default_rng(9)
    st = SpectralState.random(T2, rng)
    lam = 1.7
    E1 = quadratic_term(st.u, T2)
    E2 = quadratic_term(lam * st.u, T2)
    assert np.max(np.abs(E2 - lam**2 * E1)) <= 1e-12 * max(1.0, np.max(np.abs(E2)))


def test_drift_is_divergence_free():
    rng = np.random.default_rng(10)
    st = SpectralState.random(T2, rng)
    ev = eval_drift(st, nu=1.0)
    kf = T2.modes.astype(float)
    div = np.abs(np.einsum("ij,ij->i", kf, ev.total.real)) + np.abs(
        np.einsum("ij,ij->i", kf, ev.total.imag)
    )
    assert np.max(div) <= 1e-12 * max(1.0, np.max(np.abs(ev.total)))


def test_csv_round_trip():
    rng = np.random.default_rng(11)
    st = SpectralState.random(T2, rng)
    again = state_from_csv(state_to_csv(st))
    assert again.truncation.N == 2
    assert np.array_equal(again.u, st.u)


def test_csv_rejects_bad_input():
    with pytest.raises(ValueError):
        state_from_csv("a,b,c\n1,2,3")
    st = SpectralState.random(T1, np.random.default_rng(0))
    text = state_to_csv(st)
    # drop one mode row: no longer a canonical half
    lines = text.strip().splitlines()
    with pytest.raises(ValueError):
        state_from_csv("\n".join(lines[:-1]))


def test_json_round_trip():
    rng = np.random.default_rng(12)
    st = SpectralState.random(T1, rng)
    text = state_to_json(st)
    payload = json.loads(text)
    assert payload["schema_version"] == 1
    again = state_from_json(text)
    assert np.array_equal(again.u, st.u)


def test_real_vector_layout_round_trip():
    rng = np.random.default_rng(13)
    st = SpectralState.random(T1, rng)
    x = to_real_vector(st)
    assert x.shape == (6 * 13,)
    again = from_real_vector(T1, x)
    assert np.array_equal(again.u, st.u)


def test_state_validation_flags_divergence():
    u = np.zeros((13, 3), dtype=complex)
    u[T1.slot((1, 0, 0))] = np.array([1.0, 0, 0])  # along k
    with pytest.raises(ValueError):
        SpectralState(T1, u)

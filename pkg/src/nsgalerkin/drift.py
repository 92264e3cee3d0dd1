"""Truncated Navier-Stokes drift in Fourier variables.

Per canonical mode k the complex velocity amplitude u_k = r_k + i s_k obeys

    du_k/dt = -nu |k|^2 u_k - i E_k(u),
    E_k(u)  = sum_{h+l=k, h,l in K_N} (k . u_h) P_k(u_l),

with P_k the projection on the plane orthogonal to k and u_{-k} = conj(u_k)
implied for the non-canonical half.  Two independent evaluation routes are
kept side by side:

* the complex convolution over the full index set K_N (`eval_drift`), and
* the real-variable form, where the K_N sum is split into three sums over
  canonical pairs only -- h+l=k, h-l=k, l-h=k -- with conjugates made
  explicit (`eval_drift_real`).

They must agree to roundoff; tests enforce this.  The quadratic term of the
real form couples (r, s) bilinearly in the r-equation and through r*r and
s*s products in the s-equation, which is what lets degenerate noise spread
through the mode lattice.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .lattice import Truncation, canonicalize

SCHEMA_VERSION = 1

CSV_HEADER = "k1,k2,k3,r1,r2,r3,s1,s2,s3"


def project_divfree(k, v):
    """Project a 3-vector on the plane orthogonal to the wavenumber k."""
    kv = np.asarray(k, dtype=float)
    nsq = kv @ kv
    if nsq == 0.0:
        raise ValueError("cannot project onto the complement of the zero mode")
    v = np.asarray(v)
    return v - ((v @ kv) / nsq) * kv


class SpectralState:
    """Complex velocity coefficients on the canonical half of K_N.

    `u` has shape (D, 3); mode order is the truncation's canonical order.
    Divergence-freeness k . u_k = 0 is expected to hold to roundoff.
    """

    def __init__(self, truncation: Truncation, u: np.ndarray, validate: bool = True):
        u = np.asarray(u, dtype=complex)
        if u.shape != (truncation.n_canonical, 3):
            raise ValueError(
                f"coefficient array has shape {u.shape}, expected "
                f"({truncation.n_canonical}, 3)"
            )
        if validate:
            div = np.abs(np.einsum("ij,ij->i", truncation.modes.astype(float), u))
            scale = max(1.0, float(np.max(np.abs(u)))) * truncation.N * 3
            if np.any(div > 1e-9 * scale):
                worst = int(np.argmax(div))
                raise ValueError(
                    f"mode {truncation.canonical[worst]} violates k.u_k = 0 "
                    f"(|k.u| = {div[worst]:.3e})"
                )
        self.truncation = truncation
        self.u = u

    # -- constructors -------------------------------------------------------

    @classmethod
    def zero(cls, truncation: Truncation) -> "SpectralState":
        return cls(truncation, np.zeros((truncation.n_canonical, 3), dtype=complex))

    @classmethod
    def from_frame_coeffs(cls, truncation: Truncation, coeffs: np.ndarray) -> "SpectralState":
        """Build a state from per-mode frame coordinates (a1, a2, b1, b2).

        r_k = a1 e1 + a2 e2 and s_k = b1 e1 + b2 e2, which keeps every mode
        in the constraint plane by construction.
        """
        coeffs = np.asarray(coeffs, dtype=float)
        r = coeffs[:, 0:1] * truncation.frame_e1 + coeffs[:, 1:2] * truncation.frame_e2
        s = coeffs[:, 2:3] * truncation.frame_e1 + coeffs[:, 3:4] * truncation.frame_e2
        return cls(truncation, r + 1j * s, validate=False)

    @classmethod
    def random(cls, truncation: Truncation, rng: np.random.Generator, scale: float = 1.0):
        coeffs = scale * rng.standard_normal((truncation.n_canonical, 4))
        return cls.from_frame_coeffs(truncation, coeffs)

    # -- views ---------------------------------------------------------------

    @property
    def r(self) -> np.ndarray:
        return self.u.real

    @property
    def s(self) -> np.ndarray:
        return self.u.imag

    def energy(self) -> float:
        """Kinetic energy sum_k (|r_k|^2 + |s_k|^2) over the canonical half."""
        return float(np.sum(np.abs(self.u) ** 2))

    def copy(self) -> "SpectralState":
        return SpectralState(self.truncation, self.u.copy(), validate=False)

    def divergence_max(self) -> float:
        """max_k |k . r_k| + |k . s_k|, the constraint violation."""
        kf = self.truncation.modes.astype(float)
        return float(
            np.max(
                np.abs(np.einsum("ij,ij->i", kf, self.r))
                + np.abs(np.einsum("ij,ij->i", kf, self.s))
            )
        )


# -- complex convolution path -------------------------------------------------


class _ConvTable:
    """Flattened pair list for E_k(u) = sum_{h+l=k} (k.u_h) P_k(u_l).

    h and l run over all of K_N; non-canonical modes are addressed as
    conjugates through an extended array [u, conj(u)].  Pairs are grouped by
    output slot for segment reduction.
    """

    def __init__(self, truncation: Truncation):
        D = truncation.n_canonical
        ext = {}
        for i, k in enumerate(truncation.canonical):
            ext[k] = i
            ext[(-k[0], -k[1], -k[2])] = D + i
        out, hs, ls = [], [], []
        members = sorted(truncation.full)
        for i, k in enumerate(truncation.canonical):
            for h in members:
                l = (k[0] - h[0], k[1] - h[1], k[2] - h[2])
                if l in truncation.full:
                    out.append(i)
                    hs.append(ext[h])
                    ls.append(ext[l])
        self.out = np.array(out)
        self.h_idx = np.array(hs)
        self.l_idx = np.array(ls)
        self.kvec = truncation.modes[self.out].astype(float)
        self.nsq = truncation.norms_sq[self.out]
        # group boundaries; every canonical slot owns at least one pair for
        # N >= 1, which reduceat requires
        slots, starts = np.unique(self.out, return_index=True)
        if len(slots) != D:
            raise AssertionError("convolution table has empty output groups")
        self.starts = starts
        self.n_pairs = len(out)


_conv_cache: dict[int, _ConvTable] = {}


def _conv_table(truncation: Truncation) -> _ConvTable:
    tab = _conv_cache.get(id(truncation))
    if tab is None:
        tab = _ConvTable(truncation)
        _conv_cache[id(truncation)] = tab
    return tab


def quadratic_term(u_batch: np.ndarray, truncation: Truncation) -> np.ndarray:
    """E_k(u) for a batch of states, shape (..., D, 3) complex.

    Batches are processed in small chunks with preallocated pair buffers;
    the computation is memory-bound, so keeping the gathered (chunk, P, 3)
    arrays near cache size dominates the flop count.
    """
    tab = _conv_table(truncation)
    u_batch = np.asarray(u_batch, dtype=complex)
    single = u_batch.ndim == 2
    if single:
        u_batch = u_batch[None]
    lead = u_batch.shape[:-2]
    flat = u_batch.reshape(-1, *u_batch.shape[-2:])
    chunk = max(1, int(6e4 // max(1, tab.n_pairs)))
    out = np.empty_like(flat)
    buf_h = np.empty((chunk, tab.n_pairs, 3), dtype=complex)
    buf_l = np.empty((chunk, tab.n_pairs, 3), dtype=complex)
    buf_t = np.empty((chunk, tab.n_pairs, 3), dtype=complex)
    for lo in range(0, flat.shape[0], chunk):
        hi = min(lo + chunk, flat.shape[0])
        m = hi - lo
        ue = np.concatenate([flat[lo:hi], np.conj(flat[lo:hi])], axis=1)
        uh, ul, tmp = buf_h[:m], buf_l[:m], buf_t[:m]
        np.take(ue, tab.h_idx, axis=1, out=uh)
        np.take(ue, tab.l_idx, axis=1, out=ul)
        kdot_h = np.einsum("bpc,pc->bp", uh, tab.kvec)
        kdot_l = np.einsum("bpc,pc->bp", ul, tab.kvec)
        kdot_l /= tab.nsq
        np.multiply(kdot_l[:, :, None], tab.kvec, out=tmp)
        ul -= tmp
        ul *= kdot_h[:, :, None]
        out[lo:hi] = np.add.reduceat(ul, tab.starts, axis=1)
    out = out.reshape(*lead, *u_batch.shape[-2:])
    return out[0] if single else out


@dataclass
class DriftEvaluation:
    """Drift split into its viscous and convolution parts.

    total drift = linear - i * quadratic, with linear = -nu |k|^2 u_k and
    quadratic = E_k(u).
    """

    linear: np.ndarray
    quadratic: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.linear - 1j * self.quadratic


def eval_drift(state: SpectralState, nu: float) -> DriftEvaluation:
    """Evaluate the truncated drift through the complex convolution."""
    if nu <= 0:
        raise ValueError("viscosity must be positive")
    trunc = state.truncation
    linear = -nu * trunc.norms_sq[:, None] * state.u
    quad = quadratic_term(state.u, trunc)
    return DriftEvaluation(linear=linear, quadratic=quad)


def energy_flux(state: SpectralState) -> complex:
    """sum over K_N of conj(u_k) . E_k(u); zero for every state.

    The non-canonical half contributes the negated conjugate of the
    canonical half, so the full-lattice sum is 2i Im(sum over the half).
    """
    E = quadratic_term(state.u, state.truncation)
    half = complex(np.sum(np.conj(state.u) * E))
    return 2j * half.imag


# -- real three-sum path ------------------------------------------------------


class _StarTable:
    """Pair lists for the three canonical-half sums of the real form.

    Records, per output mode k and canonical pair (h, l), the sign
    coefficients (alpha, beta, gamma, delta) of

        F_r += alpha (k.r_h) P_k(s_l) + beta  (k.s_h) P_k(r_l)
        F_s += gamma (k.r_h) P_k(r_l) + delta (k.s_h) P_k(s_l)

    for the sum kinds h+l=k: (+1,+1,-1,+1), h-l=k: (-1,+1,-1,-1) and
    l-h=k: (+1,-1,-1,-1).
    """

    _SIGNS = {
        "sum": (1.0, 1.0, -1.0, 1.0),
        "hminus": (-1.0, 1.0, -1.0, -1.0),
        "lminus": (1.0, -1.0, -1.0, -1.0),
    }

    def __init__(self, truncation: Truncation):
        canon = set(truncation.canonical)
        out, hs, ls, signs = [], [], [], []
        for i, k in enumerate(truncation.canonical):
            for j, h in enumerate(truncation.canonical):
                for kind, l in (
                    ("sum", (k[0] - h[0], k[1] - h[1], k[2] - h[2])),
                    ("hminus", (h[0] - k[0], h[1] - k[1], h[2] - k[2])),
                    ("lminus", (k[0] + h[0], k[1] + h[1], k[2] + h[2])),
                ):
                    if l in canon:
                        out.append(i)
                        hs.append(j)
                        ls.append(truncation.slot(l))
                        signs.append(self._SIGNS[kind])
        order = np.argsort(np.array(out), kind="stable")
        self.out = np.array(out)[order]
        self.h_idx = np.array(hs)[order]
        self.l_idx = np.array(ls)[order]
        self.signs = np.array(signs)[order]
        self.kvec = truncation.modes[self.out].astype(float)
        self.nsq = truncation.norms_sq[self.out]
        self.slots, self.starts = np.unique(self.out, return_index=True)


_star_cache: dict[int, _StarTable] = {}


def _star_table(truncation: Truncation) -> _StarTable:
    tab = _star_cache.get(id(truncation))
    if tab is None:
        tab = _StarTable(truncation)
        _star_cache[id(truncation)] = tab
    return tab


def eval_drift_real(state: SpectralState, nu: float) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate the drift from the real-variable three-sum form.

    Returns (F_r, F_s), each of shape (D, 3): the six real drift components
    per mode.  Regression oracle against `eval_drift`.
    """
    if nu <= 0:
        raise ValueError("viscosity must be positive")
    trunc = state.truncation
    tab = _star_table(trunc)
    r, s = state.r.copy(), state.s.copy()

    def gather_proj(x):
        xl = x[tab.l_idx]
        return xl - (np.einsum("pc,pc->p", xl, tab.kvec) / tab.nsq)[:, None] * tab.kvec

    kdot_r = np.einsum("pc,pc->p", r[tab.h_idx], tab.kvec)
    kdot_s = np.einsum("pc,pc->p", s[tab.h_idx], tab.kvec)
    pr, ps = gather_proj(r), gather_proj(s)
    a, b, g, d = tab.signs.T
    terms_r = (a * kdot_r)[:, None] * ps + (b * kdot_s)[:, None] * pr
    terms_s = (g * kdot_r)[:, None] * pr + (d * kdot_s)[:, None] * ps
    Fr = -nu * trunc.norms_sq[:, None] * r
    Fs = -nu * trunc.norms_sq[:, None] * s
    np.add.at(Fr, tab.slots, np.add.reduceat(terms_r, tab.starts, axis=0))
    np.add.at(Fs, tab.slots, np.add.reduceat(terms_s, tab.starts, axis=0))
    return Fr, Fs


# -- real coordinate layout ---------------------------------------------------
# Flattened state vector used by the Jacobian and steering code: mode slot i
# occupies entries [6i, 6i+3) for r_k and [6i+3, 6i+6) for s_k.


def to_real_vector(state: SpectralState) -> np.ndarray:
    x = np.empty(6 * state.truncation.n_canonical)
    x[0::6], x[1::6], x[2::6] = state.r[:, 0], state.r[:, 1], state.r[:, 2]
    x[3::6], x[4::6], x[5::6] = state.s[:, 0], state.s[:, 1], state.s[:, 2]
    return x


def from_real_vector(truncation: Truncation, x: np.ndarray) -> SpectralState:
    x = np.asarray(x, dtype=float)
    D = truncation.n_canonical
    r = np.stack([x[0::6], x[1::6], x[2::6]], axis=1)
    s = np.stack([x[3::6], x[4::6], x[5::6]], axis=1)
    if r.shape != (D, 3):
        raise ValueError("real vector has wrong length")
    return SpectralState(truncation, r + 1j * s, validate=False)


# -- serialization ------------------------------------------------------------


def state_to_csv(state: SpectralState) -> str:
    lines = [CSV_HEADER]
    for k, row_r, row_s in zip(state.truncation.canonical, state.r, state.s):
        vals = [repr(float(v)) for v in (*row_r, *row_s)]
        lines.append(",".join([str(k[0]), str(k[1]), str(k[2])] + vals))
    return "\n".join(lines) + "\n"


def state_from_csv(text: str) -> SpectralState:
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    if not lines or lines[0].strip() != CSV_HEADER:
        raise ValueError(f"bad CSV header, expected {CSV_HEADER!r}")
    rows = {}
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 9:
            raise ValueError(f"bad CSV row: {ln!r}")
        k = (int(parts[0]), int(parts[1]), int(parts[2]))
        rows[k] = [float(p) for p in parts[3:]]
    N = max(max(abs(c) for c in k) for k in rows)
    trunc = Truncation(N)
    if set(rows) != set(trunc.canonical):
        raise ValueError("CSV modes do not form the canonical half of any cut-off")
    u = np.zeros((trunc.n_canonical, 3), dtype=complex)
    for k, vals in rows.items():
        u[trunc.slot(k)] = np.array(vals[:3]) + 1j * np.array(vals[3:])
    return SpectralState(trunc, u, validate=False)


def state_to_json(state: SpectralState) -> str:
    payload = {
        "schema_version": SCHEMA_VERSION,
        "N": state.truncation.N,
        "modes": [
            {"k": list(k), "r": [float(v) for v in r], "s": [float(v) for v in s]}
            for k, r, s in zip(state.truncation.canonical, state.r, state.s)
        ],
    }
    return json.dumps(payload, indent=2)


def state_from_json(text: str) -> SpectralState:
    payload = json.loads(text)
    trunc = Truncation(int(payload["N"]))
    u = np.zeros((trunc.n_canonical, 3), dtype=complex)
    seen = set()
    for entry in payload["modes"]:
        k, _ = canonicalize(entry["k"])
        if tuple(entry["k"]) != k:
            raise ValueError(f"non-canonical mode {entry['k']} in JSON state")
        u[trunc.slot(k)] = np.array(entry["r"], dtype=float) + 1j * np.array(
            entry["s"], dtype=float
        )
        seen.add(k)
    if seen != set(trunc.canonical):
        raise ValueError("JSON state does not cover the canonical half")
    return SpectralState(trunc, u, validate=False)

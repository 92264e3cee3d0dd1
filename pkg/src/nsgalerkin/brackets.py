"""Iterated Lie brackets of the drift with constant vector fields.

For constant fields V supported at mode m and W at mode n, the double
bracket [[F0, V], W] of the quadratic drift F0 is again a constant field,
supported on the canonical representatives of {m+n, n-m, m-n} that lie
inside the cut-off.  The closed form couples the (r, s) coefficient pairs of
V and W through the symmetric expressions

    (a . kappa) P_kappa(b) + (b . kappa) P_kappa(a)

at each target kappa, with signs that differ between the sum and difference
targets.  Collinear m, n annihilate the bracket entirely.

Since F0 has polynomial degree two, the same object equals the second
directional derivative D^2 F0[V, W]; `double_bracket_oracle` computes it by
an exact second difference of the drift (step 1, no truncation error) and is
the independent check on the closed form.

The first derivatives of the drift are assembled in `drift_jacobian`; being
affine in the state they also furnish the quadratic-form tensor used by the
steering sensitivities (`DriftModel`).
"""

from __future__ import annotations

import json

import numpy as np

from .drift import SpectralState, quadratic_term
from .lattice import Mode, Truncation, canonicalize

FIELD_ORTHO_TOL = 1e-9


class TangentField:
    """Constant vector field on the state space, sparse over canonical modes.

    `components` maps a canonical mode to a pair (v_r, v_s) of real
    3-vectors: the coefficients of d/dr_k and d/ds_k.  Both must be
    orthogonal to k.
    """

    def __init__(self, truncation: Truncation, components: dict | None = None):
        self.truncation = truncation
        self.components: dict[Mode, tuple[np.ndarray, np.ndarray]] = {}
        if components:
            for k, (vr, vs) in components.items():
                self._set(k, vr, vs)

    def _set(self, k, vr, vs):
        k = tuple(int(c) for c in k)
        if k not in self.truncation.full:
            raise ValueError(f"mode {k} outside the cut-off")
        rep, flipped = canonicalize(k)
        if flipped:
            raise ValueError(f"mode {k} is not canonical (use {rep})")
        vr = np.zeros(3) if vr is None else np.asarray(vr, dtype=float)
        vs = np.zeros(3) if vs is None else np.asarray(vs, dtype=float)
        kf = np.array(k, dtype=float)
        scale = max(np.linalg.norm(vr), np.linalg.norm(vs), 1e-300)
        if abs(kf @ vr) > FIELD_ORTHO_TOL * scale * np.linalg.norm(kf) or abs(
            kf @ vs
        ) > FIELD_ORTHO_TOL * scale * np.linalg.norm(kf):
            raise ValueError(f"coefficients at {k} are not orthogonal to k")
        self.components[k] = (vr, vs)

    @classmethod
    def single_mode(cls, truncation, k, vr=None, vs=None) -> "TangentField":
        return cls(truncation, {tuple(int(c) for c in k): (vr, vs)})

    @property
    def support(self) -> list[Mode]:
        return sorted(self.components)

    def is_single_mode(self) -> bool:
        return len(self.components) == 1

    def coefficient_state(self) -> SpectralState:
        """The field's coefficients read as a point of the state space."""
        u = np.zeros((self.truncation.n_canonical, 3), dtype=complex)
        for k, (vr, vs) in self.components.items():
            u[self.truncation.slot(k)] = vr + 1j * vs
        return SpectralState(self.truncation, u, validate=False)

    def max_norm(self) -> float:
        if not self.components:
            return 0.0
        return max(
            max(np.max(np.abs(vr)), np.max(np.abs(vs)))
            for vr, vs in self.components.values()
        )

    def __add__(self, other: "TangentField") -> "TangentField":
        if other.truncation is not self.truncation:
            raise ValueError("fields live on different truncations")
        out = TangentField(self.truncation)
        for k in set(self.components) | set(other.components):
            ar, as_ = self.components.get(k, (np.zeros(3), np.zeros(3)))
            br, bs = other.components.get(k, (np.zeros(3), np.zeros(3)))
            out.components[k] = (ar + br, as_ + bs)
        return out

    def __rmul__(self, c: float) -> "TangentField":
        out = TangentField(self.truncation)
        for k, (vr, vs) in self.components.items():
            out.components[k] = (c * vr, c * vs)
        return out

    def __sub__(self, other):
        return self + (-1.0) * other

    def to_debug_json(self) -> str:
        return json.dumps(
            {
                "schema_version": 1,
                "N": self.truncation.N,
                "components": [
                    {"k": list(k), "dr": list(map(float, vr)), "ds": list(map(float, vs))}
                    for k, (vr, vs) in sorted(self.components.items())
                ],
            },
            indent=2,
        )


# -- closed form ---------------------------------------------------------------


def _sym(dots_a, proj_b, dots_b, proj_a):
    """(a.kappa) P(b) + (b.kappa) P(a), batched over source bases.

    dots_* have shape (A,)/(B,), proj_* shape (A,3)/(B,3); the result pairs
    every a with every b, shape (A, B, 3).
    """
    return dots_a[:, None, None] * proj_b[None, :, :] + dots_b[None, :, None] * proj_a[:, None, :]


def bracket_rows(m, n, vr, vs, wr, ws, truncation):
    """Raw double-bracket output rows for source coefficient batches.

    vr, vs: (A, 3) arrays of r/s coefficients at mode m; wr, ws: (B, 3) at
    mode n.  Returns {target canonical mode: (rows_r, rows_s)} with row
    arrays of shape (A*B, 3).  Collinear m, n give the empty map: the
    bracket vanishes identically for rationally dependent modes.
    """
    m = tuple(int(c) for c in m)
    n = tuple(int(c) for c in n)
    mi = np.array(m, dtype=np.int64)
    ni = np.array(n, dtype=np.int64)
    if not np.any(np.cross(mi, ni)):
        return {}
    vr, vs = np.atleast_2d(vr), np.atleast_2d(vs)
    wr, ws = np.atleast_2d(wr), np.atleast_2d(ws)
    A, B = vr.shape[0], wr.shape[0]

    def dots_and_proj(kappa):
        kf = kappa.astype(float)
        nsq = float(kappa @ kappa)
        res = []
        for arr in (vr, vs, wr, ws):
            d = arr @ kf
            res.append((d, arr - np.outer(d / nsq, kf)))
        return res  # [(d_vr, P vr), (d_vs, P vs), (d_wr, P wr), (d_ws, P ws)]

    out = {}
    k_sum = mi + ni
    if tuple(k_sum) in truncation.full:
        (dvr, pvr), (dvs, pvs), (dwr, pwr), (dws, pws) = dots_and_proj(k_sum)
        rows_r = _sym(dvr, pws, dws, pvr) + _sym(dvs, pwr, dwr, pvs)
        rows_s = _sym(dvs, pws, dws, pvs) - _sym(dvr, pwr, dwr, pvr)
        rep, flipped = canonicalize(k_sum)
        assert not flipped  # sums of canonical modes stay canonical
        out[rep] = (rows_r.reshape(A * B, 3), rows_s.reshape(A * B, 3))
    diff = ni - mi
    if np.any(diff) and tuple(diff) in truncation.full:
        rep, flipped = canonicalize(diff)
        if not flipped:
            # target h = n - m
            (dvr, pvr), (dvs, pvs), (dwr, pwr), (dws, pws) = dots_and_proj(diff)
            rows_r = _sym(dvr, pws, dws, pvr) - _sym(dvs, pwr, dwr, pvs)
            rows_s = -(_sym(dvr, pwr, dwr, pvr) + _sym(dvs, pws, dws, pvs))
        else:
            # target g = m - n carries the mirrored sign pattern
            g = -diff
            (dvr, pvr), (dvs, pvs), (dwr, pwr), (dws, pws) = dots_and_proj(g)
            rows_r = _sym(dvs, pwr, dwr, pvs) - _sym(dvr, pws, dws, pvr)
            rows_s = -(_sym(dvr, pwr, dwr, pvr) + _sym(dvs, pws, dws, pvs))
        out[rep] = (rows_r.reshape(A * B, 3), rows_s.reshape(A * B, 3))
    return out


def double_bracket(V: TangentField, W: TangentField) -> TangentField:
    """[[F0, V], W] for single-mode constant fields, in closed form."""
    if not V.is_single_mode() or not W.is_single_mode():
        raise ValueError(
            "closed-form bracket takes single-mode fields; expand composite "
            "inputs by bilinearity at the call site"
        )
    (m, (vr, vs)), = V.components.items()
    (n, (wr, ws)), = W.components.items()
    rows = bracket_rows(m, n, vr, vs, wr, ws, V.truncation)
    out = TangentField(V.truncation)
    for target, (rows_r, rows_s) in rows.items():
        out.components[target] = (rows_r[0].copy(), rows_s[0].copy())
    return out


def double_bracket_oracle(V: TangentField, W: TangentField) -> TangentField:
    """[[F0, V], W] as the exact second difference of the quadratic drift.

    The drift's nonlinear term is -i E(u); for quadratic maps the cross part
    E(v+w) - E(v) - E(w) equals the full second derivative contracted with
    (V, W), with no truncation error at unit step.  Composite supports are
    allowed.
    """
    trunc = V.truncation
    uv = V.coefficient_state().u
    uw = W.coefficient_state().u
    cross = (
        quadratic_term(uv + uw, trunc)
        - quadratic_term(uv, trunc)
        - quadratic_term(uw, trunc)
    )
    g = -1j * cross
    out = TangentField(trunc)
    for i, k in enumerate(trunc.canonical):
        if np.any(g[i] != 0):
            out.components[k] = (g[i].real.copy(), g[i].imag.copy())
    return out


def bracket_span(m, n, source_m, source_n, truncation):
    """Span of double-bracket outputs over two source subspaces.

    source_m, source_n are ModeSubspace instances at canonical modes m, n.
    Returns {target mode: ModeSubspace} holding, per reachable target, the
    span of all bracket outputs in the target's frame coordinates.
    """
    from .lattice import ModeSubspace

    if source_m.dim == 0 or source_n.dim == 0:
        return {}
    e1m, e2m = truncation.frame(m)
    e1n, e2n = truncation.frame(n)
    bm, bn = source_m.basis, source_n.basis
    vr = bm[:, 0:1] * e1m + bm[:, 1:2] * e2m
    vs = bm[:, 2:3] * e1m + bm[:, 3:4] * e2m
    wr = bn[:, 0:1] * e1n + bn[:, 1:2] * e2n
    ws = bn[:, 2:3] * e1n + bn[:, 3:4] * e2n
    spans = {}
    for target, (rows_r, rows_s) in bracket_rows(m, n, vr, vs, wr, ws, truncation).items():
        e1t, e2t = truncation.frame(target)
        cand = np.stack(
            [rows_r @ e1t, rows_r @ e2t, rows_s @ e1t, rows_s @ e2t], axis=1
        )
        sub = ModeSubspace(target)
        sub.absorb(cand)
        spans[target] = sub
    return spans


# -- drift Jacobian and quadratic model -----------------------------------------


def drift_jacobian(state: SpectralState, nu: float) -> np.ndarray:
    """First derivatives of the drift in the flat (r, s) layout.

    Entry (6i+c, 6j+d) is the derivative of drift component c of mode slot i
    with respect to coordinate d of mode slot j (c, d < 3: r components,
    otherwise s).  Coefficient lookups at k-m, m-k, m+k vanish outside the
    canonical half, mirroring the three-sum structure of the real drift.
    """
    trunc = state.truncation
    D = trunc.n_canonical
    r, s = state.r, state.s
    slot = {k: i for i, k in enumerate(trunc.canonical)}

    def lookup(arr, p):
        i = slot.get(p)
        return arr[i] if i is not None else np.zeros(3)

    J = np.zeros((6 * D, 6 * D))
    eye = np.eye(3)
    for i, k in enumerate(trunc.canonical):
        kf = np.array(k, dtype=float)
        nsq = float(kf @ kf)
        Pk2 = eye - 2.0 * np.outer(kf, kf) / nsq
        for j, mmode in enumerate(trunc.canonical):
            km = (k[0] - mmode[0], k[1] - mmode[1], k[2] - mmode[2])
            mk = (-km[0], -km[1], -km[2])
            mpk = (k[0] + mmode[0], k[1] + mmode[1], k[2] + mmode[2])
            s1 = lookup(s, km) - lookup(s, mk) + lookup(s, mpk)
            r1 = lookup(r, km) + lookup(r, mk) - lookup(r, mpk)
            r2 = lookup(r, km) + lookup(r, mk) + lookup(r, mpk)
            s2 = lookup(s, km) - lookup(s, mk) - lookup(s, mpk)
            rr = np.outer(s1, kf) + (kf @ s1) * Pk2
            rs = np.outer(r1, kf) + (kf @ r1) * Pk2
            sr = -(np.outer(r2, kf) + (kf @ r2) * Pk2)
            ss = np.outer(s2, kf) + (kf @ s2) * Pk2
            if i == j:
                rr = rr - nu * nsq * eye
                ss = ss - nu * nsq * eye
            J[6 * i : 6 * i + 3, 6 * j : 6 * j + 3] = rr
            J[6 * i : 6 * i + 3, 6 * j + 3 : 6 * j + 6] = rs
            J[6 * i + 3 : 6 * i + 6, 6 * j : 6 * j + 3] = sr
            J[6 * i + 3 : 6 * i + 6, 6 * j + 3 : 6 * j + 6] = ss
    return J


class DriftModel:
    """Drift and Jacobian as dense quadratic-form data, for fast shooting.

    F(x) = A0 x + q(x) with q homogeneous quadratic; J(x) = A0 + T x is
    affine, so T is recovered column by column from the Jacobian at basis
    points and q(x) = (1/2) (T x) x.  The dense tensor is only built for
    small truncations; larger ones fall back to direct assembly.
    """

    TENSOR_DIM_LIMIT = 240

    def __init__(self, truncation: Truncation, nu: float, disable_quadratic: bool = False):
        self.truncation = truncation
        self.nu = nu
        self.disable_quadratic = disable_quadratic
        D = truncation.n_canonical
        self.dim = 6 * D
        zero = SpectralState.zero(truncation)
        self.A0 = drift_jacobian(zero, nu)
        self._tensor = None
        if not disable_quadratic and self.dim <= self.TENSOR_DIM_LIMIT:
            from .drift import from_real_vector

            cols = []
            for c in range(self.dim):
                x = np.zeros(self.dim)
                x[c] = 1.0
                cols.append(drift_jacobian(from_real_vector(truncation, x), nu) - self.A0)
            self._tensor = np.stack(cols, axis=2).reshape(self.dim * self.dim, self.dim)

    def jac(self, x: np.ndarray) -> np.ndarray:
        if self.disable_quadratic:
            return self.A0
        if self._tensor is not None:
            return self.A0 + (self._tensor @ x).reshape(self.dim, self.dim)
        from .drift import from_real_vector

        return drift_jacobian(from_real_vector(self.truncation, x), self.nu)

    def f(self, x: np.ndarray) -> np.ndarray:
        if self.disable_quadratic:
            return self.A0 @ x
        return (self.A0 + 0.5 * (self.jac(x) - self.A0)) @ x

    def f_from_jac(self, J: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Drift from an already-computed Jacobian: F(x) = (A0 + J) x / 2."""
        if self.disable_quadratic:
            return self.A0 @ x
        return 0.5 * ((self.A0 + J) @ x)

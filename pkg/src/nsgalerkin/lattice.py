"""Integer-lattice bookkeeping for the spectral truncation.

The truncation keeps every nonzero wavenumber k in Z^3 with sup-norm
|k|_inf <= N (the set written K_N here).  Because the velocity coefficients
satisfy u_{-k} = conj(u_k), only half of K_N carries independent state.  The
canonical half consists of the k whose last nonzero coordinate, read in the
order (k3, k2, k1), is positive:

    k3 > 0,  or  k3 = 0 and k2 > 0,  or  k3 = k2 = 0 and k1 > 0.

That predicate is lexicographic positivity of (k3, k2, k1), so the canonical
half is closed under addition wherever the sum stays inside K_N, and
K_N = half  u  (-half) with empty intersection.  The number of canonical
modes is D = ((2N+1)^3 - 1) / 2.

Per canonical mode the 4 independent real degrees of freedom (2 for the real
part, 2 for the imaginary part, both planes orthogonal to k) are expressed in
a fixed orthonormal frame e1(k), e2(k) of the plane k-perp.  e1 is the
Gram-Schmidt image of the standard basis axis with the smallest |component
along k| (smallest axis index on ties); e2 = unit(k x e1).  Both are computed
from exact integer vectors (|k|^2 e_a - k_a k and its cross product with k),
so the float dot products k . e1 and k . e2 inherit exact integer
cancellations wherever the components pair up.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

Mode = tuple[int, int, int]

# Residual tolerance for "does this candidate enlarge the subspace",
# relative to the candidate's own norm.  Exact arithmetic is lost once the
# k-perp projections introduce rationals, so growth is decided at a fixed
# relative cut.
SUBSPACE_GROWTH_TOL = 1e-9


def is_canonical(k: Mode) -> bool:
    """Sign rule selecting one representative per conjugate pair {k, -k}."""
    k1, k2, k3 = k
    if k3 != 0:
        return k3 > 0
    if k2 != 0:
        return k2 > 0
    return k1 > 0


def canonicalize(k) -> tuple[Mode, bool]:
    """Map k to its canonical representative.

    Returns (rep, flipped) with flipped = True iff rep == -k.  Rejects the
    zero mode, which never carries state.
    """
    k = (int(k[0]), int(k[1]), int(k[2]))
    if k == (0, 0, 0):
        raise ValueError("the zero mode has no canonical representative")
    if is_canonical(k):
        return k, False
    return (-k[0], -k[1], -k[2]), True


def _frame(k: Mode) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal basis (e1, e2) of the plane orthogonal to k.

    Built by Gram-Schmidt on the standard axis with the smallest |k
    component| (lowest index on ties), scaled through integer vectors so the
    unnormalised generators are exact.
    """
    kv = np.array(k, dtype=np.int64)
    axis = int(np.argmin(np.abs(kv)))
    e_axis = np.zeros(3, dtype=np.int64)
    e_axis[axis] = 1
    nsq = int(kv @ kv)
    u1 = nsq * e_axis - kv[axis] * kv        # = |k|^2 P_k(e_axis), integer
    u2 = np.cross(kv, u1)                    # integer, orthogonal to k and u1
    e1 = u1 / np.linalg.norm(u1)
    e2 = u2 / np.linalg.norm(u2)
    return e1, e2


class Truncation:
    """The cut-off index set K_N together with its canonical half.

    Attributes
    ----------
    N : sup-norm cut-off (>= 1)
    canonical : list of canonical modes, lexicographically sorted
    full : frozenset of all modes of K_N
    n_canonical : D = ((2N+1)^3 - 1) / 2
    """

    def __init__(self, N: int):
        if not isinstance(N, (int, np.integer)) or N < 1:
            raise ValueError(f"cut-off N must be a positive integer, got {N!r}")
        self.N = int(N)
        rng = range(-self.N, self.N + 1)
        full = [k for k in itertools.product(rng, rng, rng) if k != (0, 0, 0)]
        self.full = frozenset(full)
        self.canonical = sorted(k for k in full if is_canonical(k))
        self.n_canonical = len(self.canonical)
        assert self.n_canonical == ((2 * self.N + 1) ** 3 - 1) // 2
        self._slot = {k: i for i, k in enumerate(self.canonical)}
        self.modes = np.array(self.canonical, dtype=np.int64)        # (D, 3)
        self.norms_sq = np.einsum("ij,ij->i", self.modes, self.modes).astype(float)
        self._frames = [_frame(k) for k in self.canonical]
        # e1/e2 stacked for vectorised synthesis, shape (D, 3)
        self.frame_e1 = np.array([f[0] for f in self._frames])
        self.frame_e2 = np.array([f[1] for f in self._frames])

    def __contains__(self, k) -> bool:
        return tuple(int(c) for c in k) in self.full

    def slot(self, k) -> int:
        """Position of a canonical mode in the storage order."""
        return self._slot[tuple(int(c) for c in k)]

    def frame(self, k) -> tuple[np.ndarray, np.ndarray]:
        """(e1, e2) for a canonical mode."""
        return self._frames[self.slot(k)]

    def __repr__(self):
        return f"Truncation(N={self.N}, modes={self.n_canonical})"


def build_truncation(N: int) -> Truncation:
    return Truncation(N)


def _det3(rows) -> int:
    (a, b, c), (d, e, f), (g, h, i) = rows
    return a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g)


def is_generator_set(indices) -> bool:
    """Whether a set of lattice points generates the whole group (Z^3, +).

    Criterion: the gcd over all 3x3 minors of the (#indices x 3) coordinate
    matrix equals 1.  Fewer than three points, or all minors zero, fail.
    """
    pts = [tuple(int(c) for c in k) for k in indices]
    if not pts:
        raise ValueError("empty index set")
    g = 0
    for rows in itertools.combinations(pts, 3):
        g = math.gcd(g, abs(_det3(rows)))
        if g == 1:
            return True
    return False


def _box_sums(pts: np.ndarray, box: int) -> np.ndarray:
    """All sums sum_i c_i pts[i] with each c_i in [-box, box]."""
    n = len(pts)
    r = np.arange(-box, box + 1, dtype=np.int64)
    grids = np.meshgrid(*([r] * n), indexing="ij")
    coeffs = np.stack([g.ravel() for g in grids], axis=1)
    return coeffs @ pts


def generator_oracle(indices, box: int = 10) -> bool:
    """Brute-force check that e1, e2, e3 lie in the integer span.

    Enumerates every combination with coefficients in [-box, box] per
    generator, split meet-in-the-middle: the box is partitioned into two
    coefficient blocks whose partial sums are matched through a hash set.
    Independent of the minor/gcd route; intended for small sets in tests.
    """
    pts = np.array([[int(c) for c in k] for k in indices], dtype=np.int64)
    n = len(pts)
    half = n // 2
    first = {tuple(row) for row in _box_sums(pts[:half], box)} if half else {(0, 0, 0)}
    second = _box_sums(pts[half:], box)
    for target in np.eye(3, dtype=np.int64):
        needed = target - second
        if not any(tuple(row) in first for row in needed):
            return False
    return True


@dataclass
class ModeSubspace:
    """A subspace of the 4 constant-field directions at one canonical mode.

    Coordinates (a1, a2, b1, b2) mean the field with real-part coefficient
    a1 e1(k) + a2 e2(k) and imaginary-part coefficient b1 e1(k) + b2 e2(k).
    The basis rows are kept orthonormal.
    """

    k: Mode
    basis: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    @classmethod
    def full(cls, k: Mode) -> "ModeSubspace":
        return cls(tuple(k), np.eye(4))

    def absorb(self, candidates: np.ndarray) -> bool:
        """Add whatever part of the candidate rows is new.

        A row counts as new when its residual after projecting out the
        current basis exceeds SUBSPACE_GROWTH_TOL relative to the row's own
        norm.  Returns True when the dimension grew.
        """
        grew = False
        for cand in np.atleast_2d(candidates):
            norm = np.linalg.norm(cand)
            if norm == 0.0 or self.dim == 4:
                continue
            resid = cand - self.basis.T @ (self.basis @ cand)
            # second pass keeps the basis orthonormal to working precision
            resid -= self.basis.T @ (self.basis @ resid)
            rnorm = np.linalg.norm(resid)
            if rnorm > SUBSPACE_GROWTH_TOL * norm:
                self.basis = np.vstack([self.basis, resid / rnorm])
                grew = True
        return grew

    def copy(self) -> "ModeSubspace":
        return ModeSubspace(self.k, self.basis.copy())

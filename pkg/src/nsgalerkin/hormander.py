"""Rank condition for the diffusion: do drift brackets span the state space.

The noise fields are constant, and every bracket the closure produces is
again a constant field, so the rank of the generated algebra is the same at
every point of the state space.  The check therefore reduces to summing the
per-mode subspace dimensions of the determining-set closure and comparing
with the full dimension 4 D; no evaluation grid is needed.  A debug mode
recomputes the rank numerically from the stacked basis vectors as a guard
against coordinate bugs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .brackets import TangentField
from .closure import ClosureResult, determining_closure
from .lattice import Mode, Truncation


@dataclass
class RankReport:
    dim_state: int
    achieved_rank: int
    per_mode_dims: dict[Mode, int]
    passed: bool
    # brackets of constant fields are constant, so the rank cannot vary
    # across the state space
    point_independent: bool = True
    numerical_rank: int | None = None
    closure: ClosureResult | None = field(default=None, repr=False)

    def to_json(self) -> str:
        return json.dumps(
            {
                "schema_version": 1,
                "dim_state": self.dim_state,
                "achieved_rank": self.achieved_rank,
                "passed": self.passed,
                "point_independent": self.point_independent,
                "numerical_rank": self.numerical_rank,
                "per_mode_dims": [
                    {"index": list(k), "dim": d} for k, d in sorted(self.per_mode_dims.items())
                ],
            },
            indent=2,
        )


def _embed_basis(truncation: Truncation, closure: ClosureResult) -> np.ndarray:
    """All closure basis fields as rows of flat (r, s) vectors."""
    rows = []
    for k in truncation.canonical:
        sub = closure.subspaces[k]
        if sub.dim == 0:
            continue
        e1, e2 = truncation.frame(k)
        i = truncation.slot(k)
        for a1, a2, b1, b2 in sub.basis:
            v = np.zeros(6 * truncation.n_canonical)
            v[6 * i : 6 * i + 3] = a1 * e1 + a2 * e2
            v[6 * i + 3 : 6 * i + 6] = b1 * e1 + b2 * e2
            rows.append(v)
    return np.array(rows) if rows else np.zeros((0, 6 * truncation.n_canonical))


def check_hormander(forced, N, debug: bool = False) -> RankReport:
    """Rank of the bracket-generated constant fields against dim U = 4 D."""
    closure = determining_closure(forced, N)
    trunc = closure.truncation
    dims = closure.per_mode_dims
    achieved = closure.total_rank
    report = RankReport(
        dim_state=4 * trunc.n_canonical,
        achieved_rank=achieved,
        per_mode_dims=dims,
        passed=achieved == 4 * trunc.n_canonical,
        closure=closure,
    )
    assert report.passed == closure.is_determining
    if debug:
        basis = _embed_basis(trunc, closure)
        if basis.shape[0]:
            svals = np.linalg.svd(basis, compute_uv=False)
            report.numerical_rank = int(np.sum(svals > 1e-8 * svals[0]))
        else:
            report.numerical_rank = 0
    return report


def noise_field_basis(spec) -> list[TangentField]:
    """Constant fields injected by the noise: one per column of q_r and q_s.

    The columns of each 3x3 noise matrix are the directions the Brownian
    increments push the mode along, and the structural assumptions demand
    that they span the whole 2-plane orthogonal to k for both the real and
    imaginary parts: any forced mode whose q_r or q_s has rank below 2 is
    rejected.
    """
    fields = []
    for k in spec.forced:
        qr, qs = spec.q_r[k], spec.q_s[k]
        for name, q in (("q_r", qr), ("q_s", qs)):
            svals = np.linalg.svd(q, compute_uv=False)
            if svals[1] <= 1e-10 * max(svals[0], 1e-300):
                raise ValueError(
                    f"{name} at forced mode {k} has rank < 2; a forced mode "
                    "must be fully forced in its 4 components"
                )
        for j in range(3):
            fields.append(TangentField.single_mode(spec.truncation, k, vr=qr[:, j]))
            fields.append(TangentField.single_mode(spec.truncation, k, vs=qs[:, j]))
    return fields

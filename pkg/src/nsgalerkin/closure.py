"""Fixpoint closure deciding whether a forced index set is determining.

Starting from full 4-dimensional subspaces at the forced modes, repeatedly
apply the double bracket across every pair of modes with nonzero subspaces
and absorb the output spans at the reachable targets m+n and +-(n-m).  The
forced set is determining for the cut-off when the fixpoint carries the full
4 dimensions at every canonical mode.

Propagating actual subspaces (rather than a set of reached indices) makes
the side conditions of the pairwise combination rule self-enforcing: equal
Euclidean norms automatically yield only the degenerate 2-dimensional span,
collinear pairs contribute nothing, and a mode reached along several paths
accumulates the union of the spans.

Sweeps are semi-naive: a pair is revisited only when one of its sources grew
during the previous sweep.  Within a sweep, bracket sources are read from a
start-of-sweep snapshot, so the sweep result is a union of spans and the
fixpoint does not depend on the pair iteration order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .brackets import bracket_span
from .lattice import Mode, ModeSubspace, Truncation, canonicalize


@dataclass
class ClosureResult:
    truncation: Truncation
    subspaces: dict[Mode, ModeSubspace]
    is_determining: bool
    generations: int

    @property
    def per_mode_dims(self) -> dict[Mode, int]:
        return {k: sub.dim for k, sub in self.subspaces.items()}

    @property
    def total_rank(self) -> int:
        return sum(sub.dim for sub in self.subspaces.values())

    def to_json(self) -> str:
        return json.dumps(
            {
                "schema_version": 1,
                "N": self.truncation.N,
                "is_determining": self.is_determining,
                "generations": self.generations,
                "modes": [
                    {
                        "index": list(k),
                        "dim": self.subspaces[k].dim,
                        "basis": [
                            [float(x) for x in row] for row in self.subspaces[k].basis
                        ],
                    }
                    for k in self.truncation.canonical
                ],
            },
            indent=2,
        )


def _pair_targets(m: Mode, n: Mode, truncation: Truncation) -> list[Mode]:
    ts = []
    ksum = (m[0] + n[0], m[1] + n[1], m[2] + n[2])
    if ksum in truncation.full:
        ts.append(ksum)  # sums of canonical modes are canonical
    diff = (n[0] - m[0], n[1] - m[1], n[2] - m[2])
    if diff != (0, 0, 0) and diff in truncation.full:
        ts.append(canonicalize(diff)[0])
    return ts


def determining_closure(forced, N, shuffle_seed: int | None = None) -> ClosureResult:
    """Run the subspace-propagation fixpoint for a forced index set.

    `forced` is a collection of indices inside the cut-off (canonical or
    not, conjugates are identified).  `shuffle_seed` randomises the pair
    visit order within each sweep; it exists so tests can confirm the
    fixpoint is order-independent.
    """
    trunc = N if isinstance(N, Truncation) else Truncation(N)
    outside = [tuple(int(c) for c in k) for k in forced]
    outside = [k for k in outside if k not in trunc.full]
    if outside:
        raise ValueError(f"forced indices outside the cut-off K_{trunc.N}: {sorted(outside)}")
    if not forced:
        raise ValueError("forced index set is empty")
    canon_forced = sorted({canonicalize(k)[0] for k in forced})

    subspaces = {k: ModeSubspace(k) for k in trunc.canonical}
    for k in canon_forced:
        subspaces[k] = ModeSubspace.full(k)

    rng = np.random.default_rng(shuffle_seed) if shuffle_seed is not None else None
    frontier = list(canon_forced)
    generations = 0
    max_sweeps = 4 * trunc.n_canonical
    while frontier:
        generations += 1
        if generations > max_sweeps:
            raise RuntimeError(
                f"closure did not reach a fixpoint within {max_sweeps} sweeps; "
                "subspace growth tolerance may be unstable for this input"
            )
        active = [k for k in trunc.canonical if subspaces[k].dim > 0]
        snapshot = {k: subspaces[k].copy() for k in active}
        fset = set(frontier)
        pairs = [
            (m, n)
            for i, m in enumerate(active)
            for n in active[i + 1 :]
            if m in fset or n in fset
        ]
        if rng is not None:
            perm = rng.permutation(len(pairs))
            pairs = [pairs[i] for i in perm]
        grew: set[Mode] = set()
        for m, n in pairs:
            targets = _pair_targets(m, n, trunc)
            if not targets or all(subspaces[t].dim == 4 for t in targets):
                continue
            for t, span in bracket_span(m, n, snapshot[m], snapshot[n], trunc).items():
                if subspaces[t].dim < 4 and subspaces[t].absorb(span.basis):
                    grew.add(t)
        frontier = sorted(grew)

    is_det = all(sub.dim == 4 for sub in subspaces.values())
    return ClosureResult(trunc, subspaces, is_det, generations)

"""Time stepping for the stochastically forced truncation.

The noise is degenerate: only the modes in the forced set receive Brownian
increments, pushed through per-mode 3x3 matrices q_r, q_s whose columns are
orthogonal to the mode (so increments stay divergence-free) and which, when
nonzero, have rank 2 (so a forced mode is forced in all four of its
components).  The total injected variance per unit time is

    sigma^2 = sum_k ||q_r_k||_F^2 + ||q_s_k||_F^2,

which is the constant appearing in the energy balance and in the dissipation
bound E[V] <= e^{-2 nu t} V(0) + sigma^2 / (2 nu).

Randomness is counter-based: the Gaussian block for (trajectory t, step n)
of an ensemble is row t of a Philox stream keyed by (seed, digest of the
initial state) with the step index in the counter.  Streams are
prefix-stable, so trajectory t draws the same numbers regardless of the
ensemble size, runs can be replayed bit-exactly, and no state is shared
between trajectories.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass

import numpy as np
from numpy.random import Generator, Philox

from .drift import SpectralState, quadratic_term
from .lattice import Mode, Truncation, canonicalize

SCHEMES = ("exponential_euler", "euler_maruyama")


class BlowUpError(RuntimeError):
    """Raised when a trajectory leaves the representable range.

    Signals that dt is too large for the current state magnitude.
    """

    def __init__(self, step: int, time: float):
        super().__init__(
            f"non-finite state at step {step} (t = {time:g}); "
            "the time step is too large for this trajectory"
        )
        self.step = step
        self.time = time


class NoiseSpec:
    """Forced index set with per-mode noise matrices q_r, q_s."""

    def __init__(self, truncation: Truncation, q_r: dict, q_s: dict):
        if set(q_r) != set(q_s):
            raise ValueError("q_r and q_s must cover the same forced modes")
        self.truncation = truncation
        self.q_r: dict[Mode, np.ndarray] = {}
        self.q_s: dict[Mode, np.ndarray] = {}
        for k in q_r:
            kt = tuple(int(c) for c in k)
            if kt not in truncation.full:
                raise ValueError(f"forced mode {kt} outside the cut-off")
            rep, flipped = canonicalize(kt)
            if flipped:
                raise ValueError(f"forced mode {kt} is not canonical (use {rep})")
            for name, q in (("q_r", q_r[k]), ("q_s", q_s[k])):
                q = np.asarray(q, dtype=float)
                if q.shape != (3, 3):
                    raise ValueError(f"{name} at {kt} must be 3x3")
                kf = np.array(kt, dtype=float)
                col_dot = np.abs(q.T @ kf)
                scale = max(np.linalg.norm(q), 1e-300) * np.linalg.norm(kf)
                if np.any(col_dot > 1e-12 * scale):
                    raise ValueError(
                        f"{name} at {kt} has a column with a component along k "
                        "(violates q^T k = 0)"
                    )
                svals = np.linalg.svd(q, compute_uv=False)
                if svals[1] <= 1e-10 * max(svals[0], 1e-300):
                    raise ValueError(
                        f"{name} at {kt} has rank < 2; a forced mode must be "
                        "fully forced (zero matrices cannot appear in the forced set)"
                    )
            self.q_r[kt] = np.asarray(q_r[k], dtype=float)
            self.q_s[kt] = np.asarray(q_s[k], dtype=float)
        self.forced = sorted(self.q_r)
        self.forced_slots = np.array([truncation.slot(k) for k in self.forced])

    @property
    def sigma_sq(self) -> float:
        return float(
            sum(np.sum(q**2) for q in self.q_r.values())
            + sum(np.sum(q**2) for q in self.q_s.values())
        )

    def scaled(self, factor: float) -> "NoiseSpec":
        return NoiseSpec(
            self.truncation,
            {k: factor * q for k, q in self.q_r.items()},
            {k: factor * q for k, q in self.q_s.items()},
        )


def default_noise(truncation: Truncation, forced, sigma0: float = 1.0) -> NoiseSpec:
    """q_r = q_s = sigma0 * P_k on every forced mode.

    The projection P_k = I - k k^T / |k|^2 satisfies both structural
    assumptions (columns orthogonal to k, rank 2) with a single amplitude.
    """
    q_r, q_s = {}, {}
    for k in forced:
        rep, _ = canonicalize(k)
        kf = np.array(rep, dtype=float)
        P = np.eye(3) - np.outer(kf, kf) / (kf @ kf)
        q_r[rep] = sigma0 * P
        q_s[rep] = sigma0 * P.copy()
    return NoiseSpec(truncation, q_r, q_s)


@dataclass
class SimulationConfig:
    nu: float
    dt: float
    horizon: float
    seed: int = 0
    scheme: str = "exponential_euler"
    ensemble: int = 1
    record_stride: int = 1

    def __post_init__(self):
        if self.nu <= 0 or self.dt <= 0 or self.horizon < 0:
            raise ValueError("nu and dt must be positive, horizon nonnegative")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}, pick one of {SCHEMES}")
        if not (0 <= int(self.seed) < 2**64):
            raise ValueError("seed must fit in an unsigned 64-bit integer")
        if self.ensemble < 1 or self.record_stride < 1:
            raise ValueError("ensemble and record_stride must be >= 1")

    def check_stability(self, truncation: Truncation):
        guard = self.dt * self.nu * truncation.N**2
        if guard > 1.0:
            raise ValueError(
                f"dt * nu * N^2 = {guard:.3g} > 1.0; refuse to integrate "
                "(stability guard)"
            )
        if guard > 0.5:
            warnings.warn(
                f"dt * nu * N^2 = {guard:.3g} > 0.5; viscous step is marginal",
                stacklevel=2,
            )

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))


@dataclass
class NoiseDraw:
    """Gaussian increments for one step, already scaled by sqrt(dt).

    xi_r and xi_s have one row per forced mode, in the spec's sorted order.
    """

    xi_r: np.ndarray
    xi_s: np.ndarray
    trajectory: int = 0
    step: int = 0


def state_digest(state: SpectralState) -> int:
    """64-bit digest of a state, used to key its ensemble's noise stream."""
    h = hashlib.sha256(np.ascontiguousarray(state.u).tobytes()).digest()
    return int.from_bytes(h[:8], "little")


def _stream(seed: int, digest: int, step: int) -> Generator:
    return Generator(Philox(key=[int(seed), int(digest)], counter=[0, 0, 0, int(step)]))


def gaussian_block(seed: int, digest: int, step: int, n_traj: int, width: int) -> np.ndarray:
    """Standard normals of shape (n_traj, width) for one step of an ensemble.

    Row t is the same for every n_traj > t (prefix stability of the
    underlying stream), which is what makes per-trajectory replay possible.
    """
    return _stream(seed, digest, step).standard_normal((n_traj, width))


def draw_for(cfg: SimulationConfig, spec: NoiseSpec, digest: int, trajectory: int, step: int) -> NoiseDraw:
    width = 6 * len(spec.forced)
    block = gaussian_block(cfg.seed, digest, step, trajectory + 1, width)
    vals = block[trajectory].reshape(len(spec.forced), 6) * np.sqrt(cfg.dt)
    return NoiseDraw(xi_r=vals[:, :3].copy(), xi_s=vals[:, 3:].copy(),
                     trajectory=trajectory, step=step)


def _reproject(u: np.ndarray, trunc: Truncation) -> np.ndarray:
    """Snap each mode back onto its constraint plane (frame synthesis)."""
    e1, e2 = trunc.frame_e1, trunc.frame_e2
    a1 = np.einsum("...dc,dc->...d", u, e1)
    a2 = np.einsum("...dc,dc->...d", u, e2)
    return a1[..., None] * e1 + a2[..., None] * e2


def _step_batch(u, cfg, spec, trunc, noise):
    """One step of the batched integrator; u has shape (T, D, 3) complex."""
    # overflow here is a blow-up in progress; the caller checks finiteness
    # right after the step
    with np.errstate(over="ignore", invalid="ignore"):
        quad = quadratic_term(u, trunc)
        if cfg.scheme == "exponential_euler":
            decay = np.exp(-cfg.nu * trunc.norms_sq * cfg.dt)[:, None]
            u_new = decay * (u + (-1j * quad) * cfg.dt + noise)
        else:
            drift = -cfg.nu * trunc.norms_sq[:, None] * u - 1j * quad
            u_new = u + drift * cfg.dt + noise
        return _reproject(u_new, trunc)


def _noise_increment(u_shape, spec, block, dt):
    """Map a (T, 6F) normal block to complex increments on the forced slots."""
    T = u_shape[0]
    noise = np.zeros(u_shape, dtype=complex)
    F = len(spec.forced)
    if F == 0:
        return noise
    vals = block.reshape(T, F, 6) * np.sqrt(dt)
    for f, k in enumerate(spec.forced):
        slot = spec.forced_slots[f]
        inc_r = vals[:, f, :3] @ spec.q_r[k].T
        inc_s = vals[:, f, 3:] @ spec.q_s[k].T
        noise[:, slot, :] = inc_r + 1j * inc_s
    return noise


def step(state: SpectralState, cfg: SimulationConfig, spec: NoiseSpec, draw: NoiseDraw) -> SpectralState:
    """Advance a single state by one step using an explicit noise draw."""
    trunc = state.truncation
    if spec.truncation is not trunc and spec.truncation.N != trunc.N:
        raise ValueError("noise spec and state live on different truncations")
    if draw.xi_r.shape != (len(spec.forced), 3) or draw.xi_s.shape != (len(spec.forced), 3):
        raise ValueError("noise draw shape does not match the forced set")
    cfg.check_stability(trunc)
    if not np.all(np.isfinite(state.u)):
        raise BlowUpError(draw.step, draw.step * cfg.dt)
    noise = np.zeros((1,) + state.u.shape, dtype=complex)
    for f, k in enumerate(spec.forced):
        slot = spec.forced_slots[f]
        # same operation orientation as the batched path, so a step-by-step
        # replay is bit-identical to run_trajectory
        noise[0, slot, :] = draw.xi_r[f][None] @ spec.q_r[k].T + 1j * (
            draw.xi_s[f][None] @ spec.q_s[k].T
        )
    u_new = _step_batch(state.u[None], cfg, spec, trunc, noise)[0]
    if not np.all(np.isfinite(u_new)):
        raise BlowUpError(draw.step + 1, (draw.step + 1) * cfg.dt)
    return SpectralState(trunc, u_new, validate=False)


@dataclass
class TrajectoryResult:
    truncation: Truncation
    times: np.ndarray
    snapshots: np.ndarray  # (n_records, D, 3) complex
    n_steps: int
    seed: int
    trajectory: int
    blew_up: bool = False

    def states(self) -> list[SpectralState]:
        return [SpectralState(self.truncation, u, validate=False) for u in self.snapshots]

    def energies(self) -> np.ndarray:
        return np.sum(np.abs(self.snapshots) ** 2, axis=(1, 2))

    def to_csv(self) -> str:
        """Snapshot series: the per-state CSV schema prefixed by a t column."""
        from .drift import CSV_HEADER

        lines = ["t," + CSV_HEADER]
        for t, u in zip(self.times, self.snapshots):
            for k, row in zip(self.truncation.canonical, u):
                vals = [repr(float(v)) for v in (*row.real, *row.imag)]
                lines.append(",".join([repr(float(t)), str(k[0]), str(k[1]), str(k[2])] + vals))
        return "\n".join(lines) + "\n"


def run_trajectory(initial: SpectralState, cfg: SimulationConfig, spec: NoiseSpec,
                   trajectory: int = 0) -> TrajectoryResult:
    """Integrate one trajectory; deterministic in (seed, trajectory id)."""
    trunc = initial.truncation
    cfg.check_stability(trunc)
    digest = state_digest(initial)
    u = initial.u.copy()
    times = [0.0]
    snaps = [u.copy()]
    width = 6 * len(spec.forced)
    for n in range(cfg.n_steps):
        if width:
            block = gaussian_block(cfg.seed, digest, n, trajectory + 1, width)[trajectory:]
        else:
            block = np.zeros((1, 0))
        noise = _noise_increment((1,) + u.shape, spec, block[:1], cfg.dt)
        u = _step_batch(u[None], cfg, spec, trunc, noise)[0]
        if not np.all(np.isfinite(u)):
            raise BlowUpError(n + 1, (n + 1) * cfg.dt)
        if (n + 1) % cfg.record_stride == 0 or n + 1 == cfg.n_steps:
            times.append((n + 1) * cfg.dt)
            snaps.append(u.copy())
    return TrajectoryResult(
        truncation=trunc,
        times=np.array(times),
        snapshots=np.array(snaps),
        n_steps=cfg.n_steps,
        seed=cfg.seed,
        trajectory=trajectory,
    )


def ensemble_series(initial: SpectralState, cfg: SimulationConfig, spec: NoiseSpec,
                    n_traj: int, reduce_fn, stride: int | None = None):
    """Evolve n_traj trajectories from one initial state, recording reductions.

    reduce_fn maps the batch (n_traj, D, 3) to whatever should be kept per
    record time.  Returns (times, [reduce outputs]).  All trajectories share
    the stream keyed by (seed, initial digest); trajectory t is row t.
    """
    trunc = initial.truncation
    cfg.check_stability(trunc)
    stride = stride or cfg.record_stride
    digest = state_digest(initial)
    u = np.broadcast_to(initial.u, (n_traj,) + initial.u.shape).copy()
    times = [0.0]
    records = [reduce_fn(u)]
    width = 6 * len(spec.forced)
    for n in range(cfg.n_steps):
        if width:
            block = gaussian_block(cfg.seed, digest, n, n_traj, width)
        else:
            block = np.zeros((n_traj, 0))
        noise = _noise_increment(u.shape, spec, block, cfg.dt)
        u = _step_batch(u, cfg, spec, trunc, noise)
        if not np.all(np.isfinite(u)):
            raise BlowUpError(n + 1, (n + 1) * cfg.dt)
        if (n + 1) % stride == 0 or n + 1 == cfg.n_steps:
            times.append((n + 1) * cfg.dt)
            records.append(reduce_fn(u))
    return np.array(times), records


def ou_variance(nu: float, ksq: float, t: float) -> float:
    """Stationary-approach variance of the linearised single-mode problem."""
    lam = nu * ksq
    return (1.0 - np.exp(-2.0 * lam * t)) / (2.0 * lam)

"""Run configuration: a single TOML file, validated before dispatch.

Top-level keys hold the shared physics and run parameters; optional
sections ([mixing], [steering], [support], [simulate], [closure]) hold the
per-subcommand knobs.  Unknown keys anywhere are rejected, and every value
is checked against the preconditions of the module that will consume it, so
a config that parses is a config that runs.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

import numpy as np

from .lattice import Truncation, canonicalize
from .sde import NoiseSpec, SimulationConfig, default_noise


class ConfigError(ValueError):
    pass


_TOP_KEYS = {
    "N", "nu", "dt", "horizon", "seed", "ensemble", "scheme", "record_stride",
    "forced", "sigma0", "q_r", "q_s",
}
_SECTION_KEYS = {
    "mixing": {"quadratics", "energy_a", "energy_b", "stride"},
    "steering": {"knots", "T", "scale", "pair_seed"},
    "support": {"coords", "half_width", "bins", "threshold", "stride"},
    "simulate": {"initial_energy", "initial_seed"},
    "closure": {"shuffle_seed"},
}

_DEFAULTS = {
    "N": 1,
    "nu": 1.0,
    "dt": 0.01,
    "horizon": 10.0,
    "seed": 0,
    "ensemble": 1000,
    "scheme": "exponential_euler",
    "record_stride": 10,
    "forced": [[1, 0, 0], [0, 1, 0], [0, 0, 1]],
    "sigma0": 0.5,
}

_SECTION_DEFAULTS = {
    "mixing": {"quadratics": 10, "energy_a": 0.0, "energy_b": 10.0, "stride": 0},
    "steering": {"knots": 6, "T": 1.0, "scale": 1.0, "pair_seed": 0},
    "support": {
        "coords": [[[1, 0, 0], "r", 1], [[0, 1, 0], "s", 0]],
        "half_width": 2.0,
        "bins": 9,
        "threshold": 0.95,
        "stride": 0,
    },
    "simulate": {"initial_energy": 1.0, "initial_seed": 1},
    "closure": {"shuffle_seed": -1},
}


@dataclass
class RunConfig:
    """Fully validated configuration; `raw` retains the resolved key tree."""

    truncation: Truncation
    sim: SimulationConfig
    spec: NoiseSpec
    forced: list
    sigma0: float
    mixing: dict = field(default_factory=dict)
    steering: dict = field(default_factory=dict)
    support: dict = field(default_factory=dict)
    simulate: dict = field(default_factory=dict)
    closure: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    def echo_toml(self) -> str:
        """Render the resolved configuration as a reloadable TOML document."""
        lines = ["# resolved run configuration (re-run with --config on this file)"]
        for key in ("N", "nu", "dt", "horizon", "seed", "ensemble", "scheme",
                    "record_stride", "sigma0"):
            lines.append(f"{key} = {_toml_value(self.raw[key])}")
        lines.append(f"forced = {_toml_value(self.raw['forced'])}")
        for key in ("q_r", "q_s"):
            if key in self.raw:
                entries = ", ".join(
                    f'"{name}" = {_toml_value(mat)}' for name, mat in self.raw[key].items()
                )
                lines.append(f"{key} = {{ {entries} }}")
        for section in ("mixing", "steering", "support", "simulate", "closure"):
            lines.append("")
            lines.append(f"[{section}]")
            for k, v in getattr(self, section).items():
                lines.append(f"{k} = {_toml_value(v)}")
        return "\n".join(lines) + "\n"


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, float):
        return repr(float(v))
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise ConfigError(f"cannot render config value {v!r}")


def _require(cond: bool, msg: str):
    if not cond:
        raise ConfigError(msg)


def parse_config(path: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Load, merge and validate a run configuration.

    `overrides` (flag values) take precedence over the file, which takes
    precedence over documented defaults.  Raises ConfigError with the
    offending key in the message.
    """
    data = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config syntax error in {path}: {exc}")

    sections = {}
    for name in _SECTION_KEYS:
        block = data.pop(name, {})
        _require(isinstance(block, dict), f"section [{name}] must be a table")
        unknown = set(block) - _SECTION_KEYS[name]
        _require(not unknown, f"unknown keys in [{name}]: {sorted(unknown)}")
        merged = dict(_SECTION_DEFAULTS[name])
        merged.update(block)
        sections[name] = merged

    unknown = set(data) - _TOP_KEYS
    _require(not unknown, f"unknown top-level keys: {sorted(unknown)}")
    top = dict(_DEFAULTS)
    top.update(data)
    if overrides:
        for k, v in overrides.items():
            if v is None:
                continue
            _require(k in _TOP_KEYS, f"unknown override key: {k}")
            top[k] = v

    _require(isinstance(top["N"], int) and top["N"] >= 1,
             f"N must be a positive integer, got {top['N']!r}")
    truncation = Truncation(top["N"])

    try:
        sim = SimulationConfig(
            nu=float(top["nu"]),
            dt=float(top["dt"]),
            horizon=float(top["horizon"]),
            seed=int(top["seed"]),
            scheme=str(top["scheme"]),
            ensemble=int(top["ensemble"]),
            record_stride=int(top["record_stride"]),
        )
    except ValueError as exc:
        raise ConfigError(str(exc))
    guard = sim.dt * sim.nu * truncation.N**2
    _require(
        guard <= 1.0,
        f"dt violates the stability guard: dt * nu * N^2 = {guard:.3g} > 1.0 "
        "(keep it at or below 0.5)",
    )

    forced_raw = top["forced"]
    _require(
        isinstance(forced_raw, list) and forced_raw
        and all(isinstance(k, list) and len(k) == 3 for k in forced_raw),
        "forced must be a nonempty list of integer triples",
    )
    forced = []
    for k in forced_raw:
        kt = tuple(int(c) for c in k)
        _require(kt != (0, 0, 0), "forced may not contain the zero mode")
        _require(
            kt in truncation.full,
            f"forced index {list(kt)} lies outside the cut-off K_{truncation.N} "
            f"(|k|_inf <= {truncation.N})",
        )
        forced.append(canonicalize(kt)[0])
    forced = sorted(set(forced))

    sigma0 = float(top["sigma0"])
    _require(sigma0 > 0, "sigma0 must be positive")
    if "q_r" in top or "q_s" in top:
        _require("q_r" in top and "q_s" in top, "q_r and q_s must be given together")
        try:
            q_r = {tuple(map(int, k.split(","))): np.array(v, dtype=float)
                   for k, v in top["q_r"].items()}
            q_s = {tuple(map(int, k.split(","))): np.array(v, dtype=float)
                   for k, v in top["q_s"].items()}
            spec = NoiseSpec(truncation, q_r, q_s)
        except ValueError as exc:
            raise ConfigError(f"bad noise matrices: {exc}")
        _require(
            sorted(spec.forced) == forced,
            "explicit q matrices must cover exactly the forced set",
        )
    else:
        spec = default_noise(truncation, forced, sigma0)

    st = sections["steering"]
    _require(st["knots"] >= 2, "steering.knots must be at least 2")
    _require(st["T"] > 0, "steering.T must be positive")
    sup = sections["support"]
    _require(2 <= len(sup["coords"]) <= 4, "support.coords needs 2 to 4 entries")
    for entry in sup["coords"]:
        _require(
            isinstance(entry, list) and len(entry) == 3 and entry[1] in ("r", "s")
            and int(entry[2]) in (0, 1, 2),
            f"bad support coordinate {entry!r}: expected [[k1,k2,k3], 'r'|'s', 0..2]",
        )
        kt = tuple(int(c) for c in entry[0])
        _require(kt in truncation.full, f"support coordinate mode {list(kt)} outside K_{truncation.N}")

    raw = dict(top)
    raw["forced"] = [list(k) for k in forced]
    return RunConfig(
        truncation=truncation,
        sim=sim,
        spec=spec,
        forced=forced,
        sigma0=sigma0,
        mixing=sections["mixing"],
        steering=sections["steering"],
        support=sections["support"],
        simulate=sections["simulate"],
        closure=sections["closure"],
        raw=raw,
    )

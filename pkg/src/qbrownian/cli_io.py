"""Command-line interface, run configuration and result serialization.

Usage::

    qbrownian <subcommand> [--config run.json] [--out DIR] [--seed N] [--initial FILE]

Configuration is JSON with the sections listed in :data:`SCHEMA`; missing
keys take their defaults and unknown keys are rejected.  Any key can be
overridden from the environment as ``QLBE_<SECTION>.<KEY>`` or, for shells
that reject dots in names, ``QLBE_<SECTION>_<KEY>`` (upper case), e.g.
``QLBE_PHYSICAL_BETA=2``.

Exit codes: 0 success, 1 failed validation or numerical failure, 2 bad
configuration or input.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
import time
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .core_model import (
    ConfigurationError,
    DensityMatrix,
    GasModel,
    MomentumDistribution,
    MomentumGrid,
    ParticleModel,
    PotentialSpec,
    pure_state_gaussian,
)

__all__ = ["ConfigError", "RunConfig", "SCHEMA", "parse_config", "run_subcommand", "main", "SUBCOMMANDS"]

SUBCOMMANDS = ("sfactor", "evolve", "unravel", "rates", "friction", "cl-evolve", "validate")
ENV_PREFIX = "QLBE_"


class ConfigError(ValueError):
    """Configuration does not satisfy the schema."""


# validators return the normalized value or raise ConfigError(constraint text)
def _number(v):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError("must be a number")
    if not math.isfinite(v):
        raise ConfigError("must be finite")
    return float(v)


def _positive(v):
    v = _number(v)
    if not v > 0.0:
        raise ConfigError("must be > 0")
    return v


def _nonnegative(v):
    v = _number(v)
    if v < 0.0:
        raise ConfigError("must be >= 0")
    return v


def _integer(lo, hi=None):
    def check(v):
        if isinstance(v, bool) or not isinstance(v, int):
            if isinstance(v, float) and v.is_integer():
                v = int(v)
            else:
                raise ConfigError("must be an integer")
        if v < lo:
            raise ConfigError(f"must be >= {lo}")
        if hi is not None and v > hi:
            raise ConfigError(f"must be <= {hi}")
        return int(v)

    return check


def _choice(*options):
    def check(v):
        if v not in options:
            raise ConfigError(f"must be one of {', '.join(map(str, options))}")
        return v

    return check


def _optional(check):
    def wrapped(v):
        return None if v is None else check(v)

    return wrapped


def _boolean(v):
    if not isinstance(v, bool):
        raise ConfigError("must be true or false")
    return v


def _text(v):
    if not isinstance(v, str) or not v:
        raise ConfigError("must be a non-empty string")
    return v


SCHEMA = {
    "physical": {
        "beta": (1.0, _positive),
        "gas_mass": (1.0, _positive),
        "particle_mass": (10.0, _positive),
        "n_gas": (0.1, _positive),
    },
    "potential": {
        "kind": ("gaussian", _choice("gaussian", "cutoff")),
        "g": (1.0, _nonnegative),
        "sigma": (1.0, _positive),
        "q_max": (None, _optional(_positive)),
    },
    "grid": {
        "dimension": (1, _choice(1, 3)),
        "spacing": (0.5, _positive),
        "half_extent": (40, _integer(1)),
    },
    "evolution": {
        "dt": (None, _optional(_positive)),
        "t_final": (1.0, _nonnegative),
        "record_every": (10, _integer(1)),
        "initial_center": (0.0, _number),
        "initial_width": (None, _optional(_positive)),
    },
    "monte_carlo": {
        "seed": (12345, _integer(0, 2**64 - 1)),
        "n_trajectories": (10000, _integer(1)),
        "t_final": (1.0, _nonnegative),
        "record_interval": (0.1, _positive),
        "initial_momentum": (0.0, _number),
    },
    "scattering": {
        "amplitude": ("born", _choice("born", "constant")),
        "f0": (1.0, _number),
        "n_points": (6, _integer(1)),
        "p_max": (None, _optional(_positive)),
    },
    "brownian": {
        "t_final": (None, _optional(_nonnegative)),
        "n_times": (51, _integer(2)),
        "initial_mean_x": (0.0, _number),
        "initial_mean_p": (None, _optional(_number)),
        "initial_var_x": (1.0, _positive),
        "initial_var_p": (None, _optional(_positive)),
        "field": (False, _boolean),
        "x_extent": (10.0, _positive),
        "x_points": (32, _integer(3)),
        "p_spacing": (None, _optional(_positive)),
    },
    "sfactor": {
        "n_energies": (41, _integer(2)),
    },
    "output": {
        "directory": ("qlbe_out", _text),
        "format": ("csv", _choice("csv", "json")),
    },
}


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration; ``values[section][key]``."""

    values: dict

    def __getitem__(self, section):
        return self.values[section]

    def to_dict(self) -> dict:
        return json.loads(json.dumps(self.values))

    def gas(self) -> GasModel:
        p = self.values["physical"]
        return GasModel(p["beta"], p["gas_mass"], p["n_gas"])

    def particle(self) -> ParticleModel:
        return ParticleModel(self.values["physical"]["particle_mass"])

    def potential(self) -> PotentialSpec:
        p = self.values["potential"]
        if p["kind"] == "gaussian":
            return PotentialSpec.gaussian(p["g"], p["sigma"])
        return PotentialSpec.cutoff_constant(p["g"], p["q_max"])

    def grid(self) -> MomentumGrid:
        g = self.values["grid"]
        return MomentumGrid(g["dimension"], g["spacing"], g["half_extent"])

    @property
    def seed(self) -> int:
        return self.values["monte_carlo"]["seed"]


def _env_overrides(env) -> dict:
    table = {}
    for s, keys in SCHEMA.items():
        for k in keys:
            table[f"{ENV_PREFIX}{s}.{k}".upper()] = (s, k)
            table[f"{ENV_PREFIX}{s}_{k}".upper()] = (s, k)
    out = {}
    for name, raw in sorted(env.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        if name not in table:
            raise ConfigError(f"environment override {name} does not name a configuration key")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        out[table[name]] = value
    return out


def parse_config(text: str | None, env=None) -> RunConfig:
    """Validate JSON text (``None`` or empty means all defaults) plus environment overrides."""
    if text is None or not text.strip():
        raw = {}
    else:
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    for section, body in raw.items():
        if section not in SCHEMA:
            raise ConfigError(f"unknown key {section!r}")
        if not isinstance(body, dict):
            raise ConfigError(f"{section} must be an object")
        for key in body:
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key '{section}.{key}'")
    overrides = _env_overrides(os.environ if env is None else env)
    values = {}
    for section, keys in SCHEMA.items():
        values[section] = {}
        for key, (default, check) in keys.items():
            value = raw.get(section, {}).get(key, default)
            value = overrides.get((section, key), value)
            try:
                values[section][key] = check(value)
            except ConfigError as exc:
                raise ConfigError(f"{section}.{key} {exc}") from None
    if values["potential"]["kind"] == "cutoff" and values["potential"]["q_max"] is None:
        raise ConfigError("potential.q_max must be > 0 when potential.kind is cutoff")
    return RunConfig(values)


# ---------------------------------------------------------------- output


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _table_text(columns, rows, fmt: str) -> str:
    if fmt == "csv":
        lines = [",".join(columns)]
        lines.extend(",".join(_fmt(v) for v in row) for row in rows)
        return "\n".join(lines) + "\n"
    body = {"columns": list(columns), "rows": [[json.loads(_fmt(v)) for v in row] for row in rows]}
    return json.dumps(body, indent=1) + "\n"


class _Writer:
    def __init__(self, directory: Path, fmt: str):
        self.directory = directory
        self.fmt = fmt
        self.written: list[str] = []

    def table(self, name: str, columns, rows, fmt: str | None = None) -> Path:
        fmt = fmt or self.fmt
        path = self.directory / f"{name}.{fmt}"
        _atomic_write(path, _table_text(columns, rows, fmt))
        self.written.append(path.name)
        return path

    def report(self, name: str, data: dict) -> Path:
        path = self.directory / f"{name}.json"
        _atomic_write(path, json.dumps(data, indent=2, sort_keys=True) + "\n")
        self.written.append(path.name)
        return path


# ---------------------------------------------------------------- state files


def read_state(path, grid: MomentumGrid):
    """Read a full ``(P_row, P_col, re, im)`` or diagonal ``(P, weight)`` CSV; returns ``(state, kind)``."""
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty state file")
    header = lines[0].strip()
    rows = [ln.split(",") for ln in lines[1:] if ln.strip()]
    try:
        data = np.array([[float(x) for x in r] for r in rows])
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None
    if header == "P_row,P_col,re,im":
        rho = np.zeros((grid.size, grid.size), dtype=complex)
        for pr, pc, re, im in data:
            rho[grid.index_of(pr), grid.index_of(pc)] = complex(re, im)
        return DensityMatrix(grid, rho), "full"
    if header == "P,weight":
        w = np.zeros(grid.size)
        for p, wt in data:
            w[grid.index_of(p)] = wt
        return MomentumDistribution(grid, w), "diagonal"
    raise ValueError(f"{path}: header must be 'P_row,P_col,re,im' or 'P,weight', got {header!r}")


def _state_rows(rho: DensityMatrix, kind: str):
    p = rho.grid.axis
    if kind == "diagonal":
        return ("P", "weight"), [(p[i], rho.entries[i, i].real) for i in range(p.size)]
    e = rho.entries
    return ("P_row", "P_col", "re", "im"), [
        (p[i], p[j], e[i, j].real, e[i, j].imag) for i in range(p.size) for j in range(p.size)
    ]


# ---------------------------------------------------------------- subcommands


def _cmd_sfactor(cfg: RunConfig, out: _Writer, args) -> int:
    from .structure_factor import detailed_balance_residual, energy_window, response_function, s_mb

    gas, grid = cfg.gas(), cfg.grid()
    rows = []
    for k in range(1, grid.half_extent + 1):
        q = k * grid.spacing
        lo, hi = energy_window(q, gas, tail=1e-12)
        for e in np.linspace(lo, hi, cfg["sfactor"]["n_energies"]):
            rows.append((q, e, s_mb(q, e, gas), response_function(q, e, gas), detailed_balance_residual(q, e, gas)))
    out.table("structure_factor", ("q", "e", "s", "chi_dd", "detailed_balance_residual"), rows)
    return 0


def _cmd_evolve(cfg: RunConfig, out: _Writer, args) -> int:
    from .qlbe_generator import EvolutionConfig, build_generator, evolve

    grid = cfg.grid()
    if grid.dimension != 1:
        raise ConfigError("grid.dimension must be 1 for density-matrix evolution")
    gas, particle, pot = cfg.gas(), cfg.particle(), cfg.potential()
    ev_cfg = cfg["evolution"]
    if args.initial:
        state, kind = read_state(args.initial, grid)
        rho0 = DensityMatrix.from_distribution(state) if kind == "diagonal" else state
    else:
        width = ev_cfg["initial_width"] or 0.5 * math.sqrt(particle.mass / gas.beta)
        rho0 = pure_state_gaussian(grid, ev_cfg["initial_center"], width)
        kind = "full"
    gen = build_generator(grid, gas, particle, pot)
    dt = ev_cfg["dt"]
    if dt is None:
        spread = float(gen.energies.max() - gen.energies.min())
        dt = min(gen.stable_dt(), 1.0 / spread if spread > 0.0 else math.inf, max(ev_cfg["t_final"], 1e-3))
    result = evolve(gen, rho0, EvolutionConfig(dt, ev_cfg["t_final"], ev_cfg["record_every"]))
    summary = [
        (t, s.trace, s.min_eigenvalue(), s.mean_momentum(), s.purity)
        for t, s in zip(result.times, result.states)
    ]
    out.table("evolution_summary", ("t", "trace", "min_eigenvalue", "mean_p", "purity"), summary)
    cols, rows = _state_rows(result.final, kind)
    out.table("state_final", cols, rows, fmt="csv")
    return 0


def _cmd_unravel(cfg: RunConfig, out: _Writer, args) -> int:
    from .jump_unraveling import TrajectoryConfig, run_ensemble

    grid = cfg.grid()
    gas, particle, pot = cfg.gas(), cfg.particle(), cfg.potential()
    mc = cfg["monte_carlo"]
    tcfg = TrajectoryConfig(cfg.seed, mc["n_trajectories"], mc["t_final"], mc["record_interval"])
    if args.initial:
        if grid.dimension != 1:
            raise ConfigError("--initial distributions are supported for grid.dimension 1")
        initial, kind = read_state(args.initial, grid)
        if kind != "diagonal":
            initial = MomentumDistribution(grid, initial.diagonal())
    elif grid.dimension == 1:
        k = int(round(mc["initial_momentum"] / grid.spacing))
        if abs(k) > grid.half_extent:
            raise ConfigError("monte_carlo.initial_momentum must lie inside the grid")
        initial = np.array([k * grid.spacing])
    else:
        initial = np.array([mc["initial_momentum"], 0.0, 0.0])
    stats = run_ensemble(tcfg, initial, gas, particle, pot, grid=grid)
    d = stats.dimension
    axes = ("px", "py", "pz")[:d]
    columns = ("t",) + tuple(f"mean_{a}" for a in axes) + ("var_p", "ke_mean") + tuple(f"se_mean_{a}" for a in axes) + ("se_var_p", "se_ke")
    rows = []
    for r, t in enumerate(stats.times):
        var = stats.variance[r].sum()
        se_var = math.sqrt(float((stats.se_variance[r] ** 2).sum()))
        rows.append((t, *stats.mean[r], var, stats.ke_mean[r], *stats.se_mean[r], se_var, stats.se_ke[r]))
    out.table("ensemble", columns, rows)
    w = stats.histogram.weights
    pts = stats.histogram.grid.points()
    nz = np.nonzero(w)[0]
    if d == 1:
        out.table("histogram", ("P", "weight"), [(pts[i], w[i]) for i in nz])
    else:
        out.table("histogram", ("px", "py", "pz", "weight"), [(*pts[i], w[i]) for i in nz])
    return 0


def _cmd_rates(cfg: RunConfig, out: _Writer, args) -> int:
    from .scattering_kernel import ScatteringAmplitude, born_amplitude_for, total_rate_born, total_rate_full

    gas, particle, pot = cfg.gas(), cfg.particle(), cfg.potential()
    sc = cfg["scattering"]
    if sc["amplitude"] == "born":
        if pot.kind != "gaussian":
            raise ConfigError("scattering.amplitude born requires potential.kind gaussian")
        amp = born_amplitude_for(pot, gas, particle)
    else:
        amp = ScatteringAmplitude.constant(sc["f0"])
    p_max = sc["p_max"] or 3.0 * math.sqrt(particle.mass / gas.beta)
    rows = []
    for p in np.linspace(0.0, p_max, sc["n_points"]):
        P = np.array([0.0, 0.0, p])
        full = total_rate_full(P, amp, gas, particle)
        born = total_rate_born(P, pot, gas, particle)
        rows.append((p, full, born, full / born if born > 0.0 else float("nan")))
    out.table("rates", ("p", "rate_full", "rate_born", "ratio"), rows)
    return 0


def _coefficients(cfg: RunConfig):
    from .brownian_limit import cl_coefficients, friction_eta

    gas, particle = cfg.gas(), cfg.particle()
    eta = friction_eta(gas, particle, cfg.potential())
    if eta <= 0.0:
        raise ConfigError("potential.g must be > 0 for a nonzero friction coefficient")
    return cl_coefficients(eta, gas, particle)


def _cmd_friction(cfg: RunConfig, out: _Writer, args) -> int:
    c = _coefficients(cfg)
    out.report("friction", {
        "eta": c.eta, "d_pp": c.d_pp, "d_xx": c.d_xx,
        "d_pp_times_d_xx": c.product, "eta_squared_over_16": c.eta**2 / 16.0,
    })
    return 0


def _cmd_cl_evolve(cfg: RunConfig, out: _Writer, args) -> int:
    from .brownian_limit import (
        WignerConfig, cl_moment_evolve, field_moments, gaussian_field, moments_to_stats, wigner_kramers_evolve,
    )

    gas, particle = cfg.gas(), cfg.particle()
    c = _coefficients(cfg)
    b = cfg["brownian"]
    width = math.sqrt(particle.mass / gas.beta)
    mx = b["initial_mean_x"]
    mp = width if b["initial_mean_p"] is None else b["initial_mean_p"]
    vx = b["initial_var_x"]
    vp = b["initial_var_p"] or width**2
    t_final = 5.0 / c.eta if b["t_final"] is None else b["t_final"]
    times = np.linspace(0.0, t_final, b["n_times"])
    y = cl_moment_evolve(c, particle, [mx, mp, vx + mx * mx, vp + mp * mp, mx * mp], times)
    stats = moments_to_stats(y)
    cols = ("t", "mean_x", "mean_p", "var_x", "var_p", "cov_xp")
    out.table("moments", cols, [(t, *s) for t, s in zip(times, stats)])
    if b["field"]:
        x = np.linspace(-b["x_extent"], b["x_extent"], b["x_points"], endpoint=False) + mx
        dp = b["p_spacing"] or math.sqrt(vp) / 10.0
        n_p = int(math.ceil((abs(mp) + 6.0 * max(math.sqrt(vp), width)) / dp))
        p = dp * np.arange(-n_p, n_p + 1)
        f0 = gaussian_field(x, p, mean=(mx, mp), cov=((vx, 0.0), (0.0, vp)))
        pmax = float(np.abs(p).max())
        rate = pmax / particle.mass / f0.dx + c.eta * pmax / dp + 2.0 * c.d_pp / dp**2 + 2.0 * c.d_xx / f0.dx**2
        dt = 0.45 / rate
        n_steps = max(1, math.ceil(t_final / dt))
        every = max(1, n_steps // (b["n_times"] - 1))
        ts, fields = wigner_kramers_evolve(c, particle, f0, WignerConfig(dt, t_final, every))
        out.table("field_moments", cols, [(t, *field_moments(f)) for t, f in zip(ts, fields)])
        last = fields[-1]
        out.table("field_final", ("x", "p", "w"), [
            (last.x[i], last.p[j], last.values[i, j]) for i in range(last.x.size) for j in range(last.p.size)
        ])
    return 0


def _cmd_validate(cfg: RunConfig, out: _Writer, args) -> int:
    from .validation import run_suite

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        report = run_suite(cfg.seed)
    out.report("validation_report", report)
    return 0 if report["passed"] else 1


_COMMANDS = {
    "sfactor": _cmd_sfactor,
    "evolve": _cmd_evolve,
    "unravel": _cmd_unravel,
    "rates": _cmd_rates,
    "friction": _cmd_friction,
    "cl-evolve": _cmd_cl_evolve,
    "validate": _cmd_validate,
}


def run_subcommand(name: str, cfg: RunConfig, out_dir, initial=None) -> int:
    """Run one subcommand, write its artifacts and manifest; returns the exit code."""
    if name not in _COMMANDS:
        raise ConfigError(f"unknown subcommand {name!r}")
    writer = _Writer(Path(out_dir), cfg["output"]["format"])
    args = argparse.Namespace(initial=initial)
    start = time.perf_counter()
    code = _COMMANDS[name](cfg, writer, args)
    manifest = {
        "subcommand": name,
        "code_version": __version__,
        "kernel_backend": kernels.BACKEND,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "initial": None if initial is None else str(initial),
        "outputs": writer.written,
        "exit_code": code,
        "wall_time_seconds": time.perf_counter() - start,
    }
    _atomic_write(Path(out_dir) / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return code


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qbrownian", description="Quantum linear Boltzmann dynamics of a test particle in a gas.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="subcommand")
    helps = {
        "sfactor": "tabulate the structure factor and response function",
        "evolve": "evolve a density matrix under the lattice generator",
        "unravel": "Monte Carlo ensemble of momentum-jump trajectories",
        "rates": "total collision rates versus momentum",
        "friction": "friction and diffusion coefficients (JSON)",
        "cl-evolve": "Caldeira-Leggett moments, optionally the phase-space field",
        "validate": "run the invariant and oracle suite (JSON report)",
    }
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", type=Path, help="JSON configuration file (defaults if omitted)")
        p.add_argument("--out", type=Path, help="output directory (overrides output.directory)")
        p.add_argument("--seed", type=int, help="random seed (overrides monte_carlo.seed)")
        if name in ("evolve", "unravel"):
            p.add_argument("--initial", type=Path, help="initial state CSV: 'P_row,P_col,re,im' or 'P,weight'")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        text = args.config.read_text() if args.config else None
        cfg = parse_config(text)
        if args.seed is not None:
            values = cfg.to_dict()
            values["monte_carlo"]["seed"] = args.seed
            cfg = parse_config(json.dumps(values), env={})
        out_dir = args.out or Path(cfg["output"]["directory"])
        return run_subcommand(args.command, cfg, out_dir, getattr(args, "initial", None))
    except (ConfigError, ConfigurationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

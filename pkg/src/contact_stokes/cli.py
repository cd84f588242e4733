"""Command-line scenario runner.

Subcommands ``equilibrium``, ``simulate``, ``audit`` and ``probe-corner`` read
one INI-style config file and write CSV/JSON artifacts plus gnuplot scripts
into ``--out-dir``. Exit codes: 0 success, 2 invalid input, 3 solver failure.
"""
from __future__ import annotations

import argparse
import configparser
import json
import logging
import math
import os
import re
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .equilibrium import (
    EquilibriumError,
    PhysicalParams,
    QuadratureError,
    build_equilibrium,
    equilibrium_residual,
    export_profile_csv,
)
from .fem import MeshError, build_mesh
from .geometry import GeometryError
from .kernels import ResponseError, ResponseFunction, load_response_csv
from .norms import (
    CornerScenario,
    DiagnosticsReport,
    NormError,
    WeightedNormSpec,
    corner_probe,
    decay_fit,
    fractional_norm,
    functionals,
    weighted_norm,
)
from .solver import Simulation, SolverError, energy_audit, load_checkpoint, save_checkpoint

log = logging.getLogger("contact_stokes")

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_SOLVER = 3
THREADS_ENV = "CONTACT_STOKES_THREADS"


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- config


def _floats(text):
    return tuple(float(t) for t in text.replace(",", " ").split())


def _ints(text):
    return tuple(int(t) for t in text.replace(",", " ").split())


def _modes(text):
    out = []
    for item in text.replace(",", " ").split():
        k, _, a = item.partition(":")
        if not a:
            raise ValueError(f"mode entry {item!r} is not 'k:amplitude'")
        out.append((int(k), float(a)))
    return tuple(out)


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"{text!r} is not a boolean")


def _opt_float(text):
    return None if text.strip().lower() in ("", "none", "auto") else float(text)


def _str(text):
    return text.strip()


def _fmt(value):
    if value is None:
        return "auto"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return ", ".join(f"{k}:{a!r}" for k, a in value)
        return ", ".join(repr(v) if isinstance(v, float) else str(v) for v in value)
    return str(value)


def _opt(default, parse):
    return field(default=default, metadata={"parse": parse})


@dataclass(frozen=True)
class ParamsBlock:
    g: float = _opt(1.0, float)
    sigma: float = _opt(1.0, float)
    mu: float = _opt(1.0, float)
    beta: float = _opt(1.0, float)
    gamma_jump: float = _opt(0.5, float)
    ell: float = _opt(1.0, float)
    wall_height: float = _opt(10.0, float)
    m_top: float = _opt(2.0, float)
    response: str = _opt("linear", _str)
    kappa: float = _opt(1.0, float)
    sinh_a: float = _opt(1.0, float)
    sinh_b: float = _opt(1.0, float)
    response_table: str = _opt("", _str)


@dataclass(frozen=True)
class InitialBlock:
    modes: tuple = _opt(((1, 0.02),), _modes)
    amplitude_units: str = _opt("relative", _str)  # relative to min zeta0, or absolute
    profile: str = _opt("", _str)


@dataclass(frozen=True)
class MeshBlock:
    n_surface: int = _opt(16, int)
    depth: float = _opt(1.0, float)
    grading: float | None = _opt(None, _opt_float)
    n_samples: int = _opt(2049, int)


@dataclass(frozen=True)
class SteppingBlock:
    dt: float = _opt(0.01, float)
    t_end: float = _opt(1.0, float)
    newton_tol: float = _opt(1e-10, float)
    newton_maxit: int = _opt(10, int)
    picard: bool = _opt(False, _bool)
    checkpoint_every: int = _opt(100, int)
    snapshot_every: int = _opt(10, int)


@dataclass(frozen=True)
class DiagnosticsBlock:
    deltas: tuple = _opt((), _floats)  # empty: delta_omega + 0.2
    probe_levels: tuple = _opt((8, 16, 32, 64), _ints)
    probe_gamma_over_sigma: float = _opt(-math.sqrt(0.5), float)
    probe_amplitude: float = _opt(0.02, float)
    probe_mode: int = _opt(1, int)
    probe_patch_radius: float = _opt(0.25, float)
    probe_method: str = _opt("recovery", _str)


_SECTIONS = {
    "params": ParamsBlock,
    "initial": InitialBlock,
    "mesh": MeshBlock,
    "stepping": SteppingBlock,
    "diagnostics": DiagnosticsBlock,
}


@dataclass(frozen=True)
class ScenarioConfig:
    params: ParamsBlock = field(default_factory=ParamsBlock)
    initial: InitialBlock = field(default_factory=InitialBlock)
    mesh: MeshBlock = field(default_factory=MeshBlock)
    stepping: SteppingBlock = field(default_factory=SteppingBlock)
    diagnostics: DiagnosticsBlock = field(default_factory=DiagnosticsBlock)
    base_dir: Path = field(default=Path("."), compare=False)

    @classmethod
    def from_text(cls, text: str, source: str = "<config>", base_dir=".") -> "ScenarioConfig":
        lines = _key_lines(text)
        cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        try:
            cp.read_string(text, source=source)
        except configparser.Error as exc:
            lineno = getattr(exc, "lineno", None)
            msg = exc.message.splitlines()[0]
            if lineno is None and getattr(exc, "errors", None):
                lineno, bad = exc.errors[0]
                msg = f"cannot parse {bad.strip()}"
            where = f"{source}:{lineno}" if lineno else source
            raise ConfigError(f"{where}: {msg}") from None
        blocks = {}
        for name in cp.sections():
            if name not in _SECTIONS:
                raise ConfigError(f"{source}:{lines.get((name, None), '?')}: unknown section [{name}]")
        for name, klass in _SECTIONS.items():
            kw = {}
            known = {f.name: f for f in fields(klass)}
            if cp.has_section(name):
                for key, raw in cp.items(name):
                    line = lines.get((name, key), "?")
                    if key not in known:
                        raise ConfigError(f"{source}:{line}: unknown key '{key}' in [{name}]")
                    try:
                        kw[key] = known[key].metadata["parse"](raw)
                    except ValueError as exc:
                        raise ConfigError(f"{source}:{line}: [{name}] {key} = {raw!r}: {exc}") from None
            blocks[name] = klass(**kw)
        cfg = cls(**blocks, base_dir=Path(base_dir))
        cfg.validate(source, lines)
        return cfg

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
        return cls.from_text(text, source=str(path), base_dir=path.parent)

    def validate(self, source="<config>", lines=None) -> None:
        lines = lines or {}

        def fail(section, key, msg):
            raise ConfigError(f"{source}:{lines.get((section, key), '?')}: [{section}] {key}: {msg}")

        if self.params.response not in ("linear", "sinh", "tabulated"):
            fail("params", "response", "expected linear, sinh or tabulated")
        if self.params.response == "tabulated" and not self.params.response_table:
            fail("params", "response_table", "tabulated response needs a table path")
        if self.initial.amplitude_units not in ("relative", "absolute"):
            fail("initial", "amplitude_units", "expected relative or absolute")
        if self.mesh.n_surface < 8:
            fail("mesh", "n_surface", "must be >= 8")
        if not self.stepping.dt > 0:
            fail("stepping", "dt", "must be positive")
        if self.stepping.t_end < 0:
            fail("stepping", "t_end", "must be non-negative")
        if self.stepping.checkpoint_every < 1:
            fail("stepping", "checkpoint_every", "must be >= 1")
        if self.stepping.snapshot_every < 1:
            fail("stepping", "snapshot_every", "must be >= 1")
        if len(self.diagnostics.probe_levels) < 2:
            fail("diagnostics", "probe_levels", "need at least two refinement levels")
        if self.diagnostics.probe_method not in ("recovery", "element"):
            fail("diagnostics", "probe_method", "expected recovery or element")
        for m, _ in self.initial.modes:
            if m < 0:
                fail("initial", "modes", "mode numbers must be >= 0")

    def to_text(self) -> str:
        out = []
        for name in _SECTIONS:
            out.append(f"[{name}]")
            block = getattr(self, name)
            for f in fields(block):
                out.append(f"{f.name} = {_fmt(getattr(block, f.name))}")
            out.append("")
        return "\n".join(out)

    @property
    def n_steps(self) -> int:
        return int(round(self.stepping.t_end / self.stepping.dt))

    def response(self) -> ResponseFunction:
        p = self.params
        if p.response == "linear":
            return ResponseFunction.linear(p.kappa)
        if p.response == "sinh":
            return ResponseFunction.sinh(p.sinh_a, p.sinh_b)
        return load_response_csv(self.base_dir / p.response_table)

    def physical(self) -> PhysicalParams:
        p = self.params
        return PhysicalParams(
            g=p.g,
            sigma=p.sigma,
            mu=p.mu,
            beta=p.beta,
            gamma_jump=p.gamma_jump,
            ell=p.ell,
            wall_height=p.wall_height,
            m_top=p.m_top,
            response=self.response(),
        )

    def initial_eta(self, x, min_zeta0: float, weights):
        """Initial surface samples on ``x`` and the mean removed to make them zero-mass."""
        ell = self.params.ell
        ini = self.initial
        if ini.profile:
            data = np.loadtxt(self.base_dir / ini.profile, delimiter=",", comments="#", ndmin=2)
            if data.shape[1] < 2:
                raise ConfigError(f"{ini.profile}: profile needs columns x, eta")
            eta = np.interp(x, data[:, 0], data[:, 1])
        else:
            scale = min_zeta0 if ini.amplitude_units == "relative" else 1.0
            eta = np.zeros_like(x)
            for k, a in ini.modes:
                eta += a * scale * np.cos(k * np.pi * (x + ell) / (2.0 * ell))
        mean = float(weights @ eta) / (2.0 * ell)
        return eta - mean, mean


def _key_lines(text: str) -> dict:
    """Map ``(section, key)`` and ``(section, None)`` to 1-based line numbers."""
    out = {}
    section = None
    for i, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s or s[0] in "#;":
            continue
        m = re.match(r"\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip()
            out.setdefault((section, None), i)
            continue
        key = re.split(r"[=:]", s, maxsplit=1)[0].strip().lower()
        out.setdefault((section, key), i)
    return out


# ---------------------------------------------------------------- output


def _fmt17(v) -> str:
    return "%.17g" % v


def export_csv(report: DiagnosticsReport, path) -> None:
    """Header-documented CSV, fixed column order, 17 significant digits, LF endings."""
    cols = DiagnosticsReport.COLUMNS
    with open(path, "w", newline="\n") as fh:
        fh.write("# per-step diagnostics; balance_residual = |dE/dt + D| (backward difference)\n")
        fh.write("# E_parallel and D_surrogate use backward time differences over the newest states\n")
        fh.write(",".join(cols) + "\n")
        for row in report.rows():
            fh.write(",".join(_fmt17(v) for v in row) + "\n")


def read_csv(path) -> DiagnosticsReport:
    cols = DiagnosticsReport.COLUMNS
    with open(path) as fh:
        body = [ln for ln in fh.read().splitlines() if ln and not ln.startswith("#")]
    if not body or body[0].split(",") != list(cols):
        raise ValueError(f"{path}: unexpected header")
    data = np.array([[float(t) for t in ln.split(",")] for ln in body[1:]]).reshape(-1, len(cols))
    return DiagnosticsReport(**{c: data[:, i] for i, c in enumerate(cols)})


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(v if isinstance(v, str) else _fmt17(v) for v in row) + "\n")


def _write_json(path, obj) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(json.dumps(obj, indent=2, sort_keys=True, default=float) + "\n")


_PLOTS = {
    "energy.gp": (
        "diagnostics.csv",
        "set datafile separator ','\nset xlabel 't'\nset ylabel 'I(t) - I(zeta0)'\n"
        "set terminal pngcairo\nset output 'energy.png'\n"
        "plot 'diagnostics.csv' using 1:3 with lines title 'energy'\n",
    ),
    "decay.gp": (
        "diagnostics.csv",
        "set datafile separator ','\nset logscale y\nset xlabel 't'\nset ylabel 'E_parallel'\n"
        "set terminal pngcairo\nset output 'decay.png'\n"
        "plot 'diagnostics.csv' using 1:4 with lines title 'E_parallel'\n",
    ),
    "balance.gp": (
        "diagnostics.csv",
        "set datafile separator ','\nset logscale y\nset xlabel 't'\nset ylabel 'balance residual'\n"
        "set terminal pngcairo\nset output 'balance.png'\n"
        "plot 'diagnostics.csv' using 1:6 with lines title 'residual'\n",
    ),
    "surface.gp": (
        "surface.csv",
        "set datafile separator ','\nset xlabel 'x'\nset ylabel 'eta'\n"
        "set terminal pngcairo\nset output 'surface.png'\n"
        "plot for [i=0:*] 'surface.csv' index i using 3:4 with lines notitle\n",
    ),
}


def emit_plots(report_dir) -> list[Path]:
    """Write the four gnuplot scripts next to their CSVs; paths inside are relative."""
    report_dir = Path(report_dir)
    for name in sorted({csv for csv, _ in _PLOTS.values()}):
        if not (report_dir / name).is_file():
            raise FileNotFoundError(f"missing {name} in {report_dir}")
    out = []
    for script, (_, body) in _PLOTS.items():
        path = report_dir / script
        with open(path, "w", newline="\n") as fh:
            fh.write(body)
        out.append(path)
    return out


# ---------------------------------------------------------------- runs


def _equilibrium(cfg: ScenarioConfig):
    return build_equilibrium(cfg.physical(), n_samples=cfg.mesh.n_samples)


def _simulation(cfg: ScenarioConfig, eq):
    mesh = build_mesh(eq, cfg.mesh.n_surface, depth=cfg.mesh.depth, grading=cfg.mesh.grading)
    st = cfg.stepping
    return Simulation(eq, mesh, newton_tol=st.newton_tol, newton_maxit=st.newton_maxit, picard=st.picard)


def cmd_equilibrium(cfg: ScenarioConfig, out: Path, args) -> int:
    eq = _equilibrium(cfg)
    export_profile_csv(eq, out / "profile.csv")
    res = equilibrium_residual(eq)
    summary = {
        "C": eq.c_const,
        "P0": eq.p0,
        "M_min": eq.m_min,
        "omega": eq.omega,
        "theta_eq": eq.theta_eq,
        "delta_omega": eq.delta_omega,
        "min_zeta0": eq.min_zeta0,
        "young_residual": abs(math.cos(eq.theta_eq) + cfg.params.gamma_jump / cfg.params.sigma),
        **res,
    }
    _write_json(out / "equilibrium.json", summary)
    log.info("equilibrium: ode %.3e bc %.3e mass %.3e", res["ode_res"], res["bc_res"], res["mass_res"])
    return EXIT_OK


def _run(cfg: ScenarioConfig, out: Path | None, resume=None, dt=None):
    """Time loop shared by ``simulate`` and ``audit``; returns ``(sim, records, report, final)``."""
    eq = _equilibrium(cfg)
    sim = _simulation(cfg, eq)
    dt = cfg.stepping.dt if dt is None else dt
    n_steps = int(round(cfg.stepping.t_end / dt))
    x = sim.surface.x
    if resume is not None:
        state = load_checkpoint(resume)
        if state.eta.shape != x.shape:
            raise ConfigError(f"{resume}: checkpoint does not match the configured mesh")
    else:
        eta0, mean = cfg.initial_eta(x, eq.min_zeta0, sim.surface.weights)
        if mean != 0.0:
            log.info("initial perturbation: removed mean %.3e to enforce zero mass", mean)
        state = sim.initial_state(eta0)

    spec = WeightedNormSpec(k=2, delta=_deltas(cfg, eq)[0])
    records = [sim.initial_record(state)]
    rows = []
    snaps = [(state.step, state.time, state.eta)]
    ckpt_dir = None if out is None else out / "checkpoints"
    if ckpt_dir is not None:
        ckpt_dir.mkdir(exist_ok=True)
    start = state.step
    for _ in range(max(0, n_steps - start)):
        state, rec = sim.advance(state, dt)
        records.append(rec)
        if len(state.history) >= 3:
            f = functionals(state.history, sim, spec)
            resid = energy_audit(records[-2:])[0]
            rows.append((state.time, rec.mass, rec.energy, f["E_parallel"], f["D_full_surrogate"], resid))
        if state.step % cfg.stepping.snapshot_every == 0:
            snaps.append((state.step, state.time, state.eta))
        if ckpt_dir is not None and state.step % cfg.stepping.checkpoint_every == 0:
            save_checkpoint(ckpt_dir / f"state_{state.step:06d}.npz", state)
    if ckpt_dir is not None:
        save_checkpoint(ckpt_dir / "final.npz", state)

    cols = np.array(rows, dtype=float).reshape(-1, len(DiagnosticsReport.COLUMNS))
    prefix = None
    if resume is not None and out is not None and (out / "diagnostics.csv").is_file():
        old = read_csv(out / "diagnostics.csv")
        keep = old.time <= records[0].time * (1 + 1e-12)
        prefix = old.rows()[keep]
        cols = np.vstack([prefix, cols])
    report = DiagnosticsReport(*cols.T) if cols.size else DiagnosticsReport(*[np.zeros(0)] * 6)
    if report.time.size >= 10:
        try:
            report.decay = decay_fit(report.time, report.E_parallel)
        except NormError as exc:
            report.decay = {"error": str(exc)}
    report.weighted_table = _weighted_table(sim, state, cfg, eq)
    return sim, records, report, state, snaps


def _deltas(cfg, eq):
    if cfg.diagnostics.deltas:
        return list(cfg.diagnostics.deltas)
    return [min(0.99, eq.delta_omega + 0.2)]


def _weighted_table(sim, state, cfg, eq) -> dict:
    mesh = sim.mesh
    spts = mesh.nodes[mesh.surface_nodes]
    table = {}
    for d in _deltas(cfg, eq):
        table[f"{d!r}"] = {
            "u_W2": weighted_norm(mesh, state.u, WeightedNormSpec(2, d), kind="velocity"),
            "p_W1": weighted_norm(mesh, state.p, WeightedNormSpec(1, d), kind="p1"),
            "eta_W5/2": fractional_norm(state.eta, sim.surface.x, 2.5, d, spts),
        }
    return table


def cmd_simulate(cfg: ScenarioConfig, out: Path, args) -> int:
    sim, records, report, state, snaps = _run(cfg, out, resume=args.resume)
    report.validate()
    export_csv(report, out / "diagnostics.csv")
    x = sim.surface.x
    with open(out / "surface.csv", "w", newline="\n") as fh:
        fh.write("step,time,x,eta\n")
        for k, (step, t, eta) in enumerate(snaps):
            if k:
                fh.write("\n\n")  # gnuplot data-block separator
            for xi, v in zip(x, eta):
                fh.write(f"{step},{_fmt17(t)},{_fmt17(xi)},{_fmt17(v)}\n")
    summary = report.summary()
    summary["config"] = cfg.to_text()
    summary["max_newton_iterations"] = max(r.newton_iterations for r in records)
    _write_json(out / "summary.json", summary)
    emit_plots(out)
    lam = report.decay.get("lambda")
    log.info("simulate: %d steps, decay lambda %s", len(records) - 1, "n/a" if lam is None else f"{lam:.4g}")
    return EXIT_OK


def cmd_audit(cfg: ScenarioConfig, out: Path, args) -> int:
    series = {}
    for label, dt in (("dt", cfg.stepping.dt), ("dt/2", 0.5 * cfg.stepping.dt)):
        _, records, _, _, _ = _run(cfg, None, dt=dt)
        series[label] = (records, energy_audit(records))
    recs, res = series["dt"]
    _write_rows(out / "audit.csv", ("step", "time", "energy", "dissipation", "residual"), [
        (float(r.step), r.time, r.energy, sum(r.dissipation.values()), e) for r, e in zip(recs[1:], res)
    ])
    half = series["dt/2"][1]
    summary = {
        "max_residual": float(res.max(initial=0.0)),
        "max_residual_half_dt": float(half.max(initial=0.0)),
        "ratio": float(res.max() / half.max()) if res.size and half.max() > 0 else float("nan"),
        "energy_nonincreasing": bool(np.all(np.diff([r.energy for r in recs]) <= res + 1e-15)),
    }
    _write_json(out / "audit.json", summary)
    log.info("audit: max residual %.3e, dt-halving ratio %.3f", summary["max_residual"], summary["ratio"])
    return EXIT_OK


def cmd_probe(cfg: ScenarioConfig, out: Path, args) -> int:
    d = cfg.diagnostics
    sc = CornerScenario(
        gamma_over_sigma=d.probe_gamma_over_sigma,
        amplitude=d.probe_amplitude,
        mode=d.probe_mode,
        depth=cfg.mesh.depth,
        m_top=cfg.params.m_top,
        patch_radius=d.probe_patch_radius,
    )
    res = corner_probe(sc, deltas=list(d.deltas) or None, levels=d.probe_levels, method=d.probe_method)
    _write_rows(out / "probe.csv", ("n", "delta", "norm", "ratio"), [tuple(map(float, r)) for r in res["rows"]])
    _write_json(
        out / "probe.json",
        {"omega": res["omega"], "delta_omega": res["delta_omega"], "trend": {repr(k): v for k, v in res["trend"].items()}},
    )
    for k, v in res["trend"].items():
        log.info("probe: delta %.4f -> %s", k, v)
    return EXIT_OK


_COMMANDS = {
    "equilibrium": cmd_equilibrium,
    "simulate": cmd_simulate,
    "audit": cmd_audit,
    "probe-corner": cmd_probe,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="contact-stokes", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(_COMMANDS))
    ap.add_argument("--config", help="INI scenario file (defaults apply when omitted)")
    ap.add_argument("--out-dir", default=".", help="directory for artifacts")
    ap.add_argument("--threads", type=int, default=None, help=f"BLAS threads (env {THREADS_ENV} when unset)")
    ap.add_argument("--resume", default=None, help="checkpoint to continue from (simulate only)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def _threads(args):
    if args.threads is not None:
        return args.threads
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV}={env!r} is not an integer") from None
    return None


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = ScenarioConfig.load(args.config) if args.config else ScenarioConfig()
        threads = _threads(args)
        if threads is not None and threads < 1:
            raise ConfigError("thread count must be >= 1")
        if args.resume and args.command != "simulate":
            raise ConfigError("--resume applies to simulate only")
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with threadpool_limits(limits=threads):
            return _COMMANDS[args.command](cfg, out, args)
    except (ConfigError, EquilibriumError, ResponseError, MeshError, NormError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (SolverError, GeometryError, QuadratureError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())

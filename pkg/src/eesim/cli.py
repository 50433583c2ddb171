"""Experiment driver: JSON configs, named presets, output files and the ``eesim`` command."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .audit import identity_audit
from .background import CosmologyParams, derive_constants
from .diagnostics import (
    SpacetimeInterpolator, asymptotic_extract, constraint_residuals, energies, fit_rate, geodesic_integrate,
    norms, random_timelike_geodesics, z_ratio_bound,
)
from .evolution import ConfigError, EvolutionConfig, GuardThresholds, background_vector, evolve, save_checkpoint
from .grid import GridError, PeriodicGrid, save_fields
from .initial_data import InitialDataError, PerturbationSpec, background_state, normalized_perturbation, perturb_all
from .state import FIELD_NAMES

SCHEMA_VERSION = 1

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_GUARD = 0, 2, 3, 4


# =============================================================================
# Configuration
# =============================================================================

def _strict(cls, data, where):
    """Build dataclass ``cls`` from a dict, rejecting keys it does not declare."""
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    names = {f.name for f in fields(cls)}
    extra = set(data) - names
    if extra:
        raise ConfigError(f"{where}: unknown keys {sorted(extra)}")
    return cls(**data)


@dataclass
class DiagnosticsSettings:
    N: int = 3
    output_stride: int = 10
    gamma_delta: dict = field(default_factory=lambda: {"g00": [0.0, 0.0], "g0": [0.0, 0.0]})
    fit_window: list | None = None

    def __post_init__(self):
        if not isinstance(self.N, int) or self.N < 0:
            raise ConfigError("diagnostics.N must be a non-negative integer")
        if not isinstance(self.output_stride, int) or self.output_stride < 1:
            raise ConfigError("diagnostics.output_stride must be a positive integer")
        bad = set(self.gamma_delta) - {"g00", "g0"}
        if bad:
            raise ConfigError(f"diagnostics.gamma_delta: unknown blocks {sorted(bad)}")
        for k, v in self.gamma_delta.items():
            if len(v) != 2 or min(v) < 0:
                raise ConfigError(f"diagnostics.gamma_delta.{k} must be two non-negative numbers")
        if self.fit_window is not None and (len(self.fit_window) != 2 or self.fit_window[0] >= self.fit_window[1]):
            raise ConfigError("diagnostics.fit_window must be [t_start, t_end] with t_start < t_end")


EVOLUTION_KEYS = {"dt", "t_end", "guard_thresholds", "snapshot_stride", "dealias", "background_subtraction"}


@dataclass
class ExperimentConfig:
    """Everything a run needs; ``to_dict``/``from_dict`` round-trip through JSON."""

    preset: str = "custom"
    cosmology: CosmologyParams = field(default_factory=CosmologyParams)
    q_override: float | None = None
    grid_n: int = 16
    evolution: dict = field(default_factory=lambda: {"dt": 0.05, "t_end": 15.0})
    perturbations: list = field(default_factory=list)
    perturbation_norm: float | None = None
    diagnostics: DiagnosticsSettings = field(default_factory=DiagnosticsSettings)
    output_dir: str = "run"
    seed: int = 0

    def __post_init__(self):
        if not isinstance(self.grid_n, int) or self.grid_n < 4:
            raise ConfigError("grid_n must be an integer >= 4")
        extra = set(self.evolution) - EVOLUTION_KEYS
        if extra:
            raise ConfigError(f"evolution: unknown keys {sorted(extra)}")
        if self.diagnostics.N > self.grid_n // 3:
            raise ConfigError(f"diagnostics.N={self.diagnostics.N} exceeds the grid limit {self.grid_n // 3}")
        if self.perturbation_norm is not None and self.perturbation_norm < 0:
            raise ConfigError("perturbation_norm must be non-negative")
        self.evolution_config()        # validates dt, t_end and guards early

    def evolution_config(self) -> EvolutionConfig:
        ev = dict(self.evolution)
        if isinstance(ev.get("guard_thresholds"), dict):
            ev["guard_thresholds"] = _strict(GuardThresholds, ev["guard_thresholds"], "evolution.guard_thresholds")
        ev.setdefault("snapshot_stride", self.diagnostics.output_stride)
        return EvolutionConfig(output_stride=self.diagnostics.output_stride, **ev)

    def perturbation_specs(self) -> list:
        return [PerturbationSpec.from_dict(p) for p in self.perturbations]

    def to_dict(self) -> dict:
        return {
            "preset": self.preset, "cosmology": self.cosmology.to_dict(), "q_override": self.q_override,
            "grid_n": self.grid_n, "evolution": json.loads(json.dumps(self.evolution)),
            "perturbations": [dict(p) for p in self.perturbations], "perturbation_norm": self.perturbation_norm,
            "diagnostics": asdict(self.diagnostics), "output_dir": self.output_dir, "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        names = {f.name for f in fields(cls)}
        extra = set(d) - names
        if extra:
            raise ConfigError(f"config: unknown keys {sorted(extra)}")
        d = dict(d)
        if "cosmology" in d:
            try:
                d["cosmology"] = _strict(CosmologyParams, d["cosmology"], "cosmology")
            except (TypeError, ValueError) as exc:
                raise ConfigError(str(exc)) from exc
        if "diagnostics" in d:
            d["diagnostics"] = _strict(DiagnosticsSettings, d["diagnostics"], "diagnostics")
        for p in d.get("perturbations", []):
            try:
                PerturbationSpec.from_dict(p)
            except (InitialDataError, KeyError, TypeError) as exc:
                raise ConfigError(f"perturbation {p}: {exc}") from exc
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_json(Path(path).read_text())

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


ALL_BLOCKS = [
    {"amplitude": 1.0, "target": "g00", "mode": [1, 0, 0]},
    {"amplitude": 1.0, "target": "g0j", "mode": [0, 1, 0], "index": [1]},
    {"amplitude": 1.0, "target": "hjk", "mode": [0, 0, 1], "index": [1, 2]},
    {"amplitude": 1.0, "target": "phi_t", "mode": [1, 1, 0]},
    {"amplitude": 1.0, "target": "phi_j", "mode": [1, 0, 0], "index": [1]},
]


def preset(name: str) -> ExperimentConfig:
    """Named experiments; every field can still be overridden through a config file."""
    if name == "background-exactness":
        return ExperimentConfig(
            preset=name, grid_n=16,
            evolution={"dt": 1e-3, "t_end": 10.0, "background_subtraction": False, "snapshot_stride": 500},
            diagnostics=DiagnosticsSettings(N=3, output_stride=500), output_dir="runs/background-exactness")
    if name == "stability-subcritical":
        return ExperimentConfig(
            preset=name, grid_n=16, cosmology=CosmologyParams(sound_speed_sq=0.2),
            evolution={"dt": 0.05, "t_end": 25.0, "snapshot_stride": 5}, perturbations=[dict(p) for p in ALL_BLOCKS],
            perturbation_norm=1e-3, diagnostics=DiagnosticsSettings(N=3, output_stride=10),
            output_dir="runs/stability-subcritical")
    if name == "supercritical":
        return ExperimentConfig(
            preset=name, grid_n=16, cosmology=CosmologyParams(sound_speed_sq=0.45),
            evolution={"dt": 0.05, "t_end": 15.0}, perturbations=[dict(p) for p in ALL_BLOCKS],
            perturbation_norm=1e-3, diagnostics=DiagnosticsSettings(N=3, output_stride=10),
            output_dir="runs/supercritical")
    raise ConfigError(f"unknown preset {name!r}; choose from {PRESETS}")


PRESETS = ("background-exactness", "stability-subcritical", "supercritical")


# =============================================================================
# Running
# =============================================================================

NORM_COLUMNS = ["t", "S_g00", "S_g0", "S_h", "S_fluid", "S_total", "sup_g00", "sup_g0", "sup_h", "sup_fluid",
                "sup_total", "z_ratio"]
ENERGY_COLUMNS = ["t", "E_g00", "E_g0", "E_h", "E_fluid", "E_total", "discarded_fluid_term"]
CONSTRAINT_COLUMNS = ["t", "Q_up_L2", "Q_up_Linf", "Q_down_L2", "Q_down_Linf", "gauss_L2", "gauss_Linf",
                      "codazzi_L2", "codazzi_Linf", "curl_L2"]
SERIES_COLUMNS = ["t", "h_minus_ginf", "dt_h", "psi_minus_psiinf", "dphi_minus_dphiinf"]


def initial_state(cfg: ExperimentConfig):
    dc = derive_constants(cfg.cosmology, q_override=cfg.q_override)
    grid = PeriodicGrid(cfg.grid_n)
    state = background_state(dc, grid)
    specs = cfg.perturbation_specs()
    if specs:
        if cfg.perturbation_norm is not None:
            state, specs = normalized_perturbation(state, specs, dc, cfg.perturbation_norm, cfg.diagnostics.N)
        else:
            state = perturb_all(state, specs)
    return dc, state, specs


def monitor_hooks(dc, N, gamma_delta):
    prev = [None]

    def hook(st):
        nr = norms(st, dc, N, prev[0])
        prev[0] = nr
        en = energies(st, dc, N, gamma_delta)
        cr = constraint_residuals(st, dc)
        out = {"norms": nr.to_dict(), "energies": en.to_dict(), "constraints": cr.to_dict(),
               "z_ratio": z_ratio_bound(st, dc)}
        return out

    return [hook]


@dataclass
class RunResult:
    config: ExperimentConfig
    dc: object
    trajectory: object
    manifest: dict
    exit_code: int


def _write_csv(path: Path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([repr(float(r[c])) for c in columns])


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


PLOT_SCRIPT = '''"""Log-axis plots of norm and constraint decay for one run; needs matplotlib."""
import csv
import sys
from pathlib import Path

import matplotlib.pyplot as plt

run = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parent


def load(name):
    with open(run / name) as fh:
        rows = list(csv.DictReader(fh))
    return {k: [float(r[k]) for r in rows] for k in rows[0]} if rows else {}


norms = load("norms.csv")
cons = load("constraints.csv")
fig, (a, b) = plt.subplots(1, 2, figsize=(11, 4))
for key in ("S_g00", "S_g0", "S_h", "S_fluid", "S_total"):
    a.semilogy(norms["t"], [max(v, 1e-300) for v in norms[key]], label=key)
a.set_xlabel("t")
a.set_title("weighted norms")
a.legend()
for key in ("Q_down_L2", "gauss_L2", "codazzi_L2", "curl_L2"):
    b.semilogy(cons["t"], [max(v, 1e-300) for v in cons[key]], label=key)
b.set_xlabel("t")
b.set_title("constraint residuals")
b.legend()
fig.tight_layout()
fig.savefig(run / "decay.png", dpi=120)
'''


def run(cfg: ExperimentConfig, out: Path | None = None) -> RunResult:
    """Evolve one configuration and write its artifacts into ``out``."""
    out = Path(out if out is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    dc, state, specs = initial_state(cfg)
    evc = cfg.evolution_config()
    gd = {k: tuple(v) for k, v in cfg.diagnostics.gamma_delta.items()}
    traj = evolve(state, evc, dc, monitor_hooks(dc, cfg.diagnostics.N, gd))
    N = cfg.diagnostics.N

    recs = traj.records
    _write_csv(out / "norms.csv", NORM_COLUMNS, [dict(r["norms"], z_ratio=r["z_ratio"]) for r in recs])
    _write_csv(out / "energies.csv", ENERGY_COLUMNS, [r["energies"] for r in recs])
    _write_csv(out / "constraints.csv", CONSTRAINT_COLUMNS, [r["constraints"] for r in recs])
    (out / "plot_decay.py").write_text(PLOT_SCRIPT)
    save_checkpoint(out / "final_state.bin", traj.final_state, evc, dc)

    drift = 0.0
    for t, y in traj.snapshots:
        drift = max(drift, float(np.max(np.abs(y - background_vector(dc, t)[0]))))

    summary: dict = {"max_background_drift": drift}
    asym = None
    if traj.completed and len(traj.snapshots) >= 8:
        window = tuple(cfg.diagnostics.fit_window) if cfg.diagnostics.fit_window else None
        asym = asymptotic_extract(traj, dc, traj.grid, N=N, fit_window=window)
        a_json = asym.summary()
        a_json["qH"] = dc.q * dc.H
        (out / "asymptotics.json").write_text(json.dumps(a_json, indent=2, sort_keys=True))
        fields_out = {f"g_inf_{j + 1}{k + 1}": asym.g_inf[j, k] for j in range(3) for k in range(j, 3)}
        fields_out["psi_inf"] = asym.psi_inf
        fields_out.update({f"dphi_inf_{j + 1}": asym.dphi_inf[j] for j in range(3)})
        save_fields(out / "asymptotics_fields.bin", fields_out, asym.t_final)
        rows = []
        for i, (t, _) in enumerate(asym.series["h_minus_ginf"]):
            rows.append({"t": t, **{k: asym.series[k][i][1] for k in SERIES_COLUMNS[1:]}})
        _write_csv(out / "asymptotics_series.csv", SERIES_COLUMNS, rows)

    # Fluid-norm trend over the same tail window as the asymptotic fits.
    fluid_series = [(r["t"], r["norms"]["S_fluid"]) for r in recs]
    flags = {"subcritical": dc.subcritical}
    if len(fluid_series) >= 8 and all(v > 0 for _, v in fluid_series):
        T0, T1 = fluid_series[0][0], fluid_series[-1][0]
        fr = fit_rate(fluid_series, (T0 + 0.1 * (T1 - T0), T1))
        summary["fluid_norm_rate"] = fr.to_dict()
        flags["fluid_non_decay"] = bool(fr.rate <= 0.1 * dc.q * dc.H)
        flags["fluid_growth"] = bool(fr.rate < 0.0)
    summary["max_S_total"] = max((r["norms"]["S_total"] for r in recs), default=0.0)
    summary["initial_S_total"] = recs[0]["norms"]["S_total"] if recs else 0.0
    summary["max_discarded_fluid_term"] = max((r["energies"]["discarded_fluid_term"] for r in recs), default=0.0)
    summary["max_Q_down_L2"] = max((r["constraints"]["Q_down_L2"] for r in recs), default=0.0)
    summary["max_curl_L2"] = max((r["constraints"]["curl_L2"] for r in recs), default=0.0)
    if recs:
        summary["z_ratio_initial"] = recs[0]["z_ratio"]
        summary["z_ratio_max"] = max(r["z_ratio"] for r in recs)

    outputs = sorted(p.name for p in out.iterdir() if p.is_file() and p.name != "run-manifest.json")
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "package_version": __version__,
        "config": cfg.to_dict(),
        "config_hash": cfg.digest(),
        "derived_constants": dc.to_dict(),
        "scaled_perturbations": [s.to_dict() for s in specs],
        "termination": traj.termination.to_dict(),
        "summary": summary,
        "flags": flags,
        "outputs": {name: _sha256(out / name) for name in outputs},
    }
    manifest["content_hash"] = hashlib.sha256(json.dumps(manifest, sort_keys=True).encode()).hexdigest()
    (out / "run-manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    code = EXIT_OK if traj.completed else EXIT_GUARD
    return RunResult(cfg, dc, traj, manifest, code)


# =============================================================================
# Geodesics and rate refits
# =============================================================================

def geodesic_report(traj, dc, count: int, seed: int, affine_length: float | None = None, ds: float = 0.05,
                    max_speed: float = 0.3) -> dict:
    """Integrate ``count`` random timelike geodesics and summarise the completeness checks."""
    interp = SpacetimeInterpolator(traj, dc, traj.grid)
    rng = np.random.default_rng(seed)
    x0, u0 = random_timelike_geodesics(rng, count, interp, max_speed=max_speed)
    if affine_length is None:
        # Proper time lags coordinate time by at most the initial boost, so stay clear of the end.
        affine_length = (interp.t_max - interp.t_min) / float(np.max(u0[:, 0])) - 0.5
    res = geodesic_integrate(traj, x0, u0, affine_length, dc, ds=ds, interpolator=interp)
    s_cut = 20.0 / dc.H
    tail = res.length_tail_fraction(s_cut) if res.s[-1] > s_cut else None
    return {
        "count": count, "seed": seed, "affine_length": affine_length, "ds": ds,
        "min_u0": float(res.min_u0.min()),
        "max_u0_over_initial": float(np.max(res.max_u0 / res.u0_initial)),
        "max_norm_drift": float(res.norm_drift.max()),
        "tail_cut_s": s_cut,
        "max_tail_fraction": None if tail is None else float(np.max(tail)),
        "total_spatial_length_max": float(res.spatial_length[-1].max()),
    }


def refit_rates(run_dir: Path, window=None) -> dict:
    out = {}
    for name, cols in (("asymptotics_series.csv", SERIES_COLUMNS[1:]), ("norms.csv", ["S_total", "S_fluid"])):
        path = run_dir / name
        if not path.exists():
            continue
        with open(path) as fh:
            rows = list(csv.DictReader(fh))
        for c in cols:
            ser = [(float(r["t"]), float(r[c])) for r in rows]
            try:
                out[c] = fit_rate(ser, window).to_dict()
            except ValueError as exc:
                out[c] = {"error": str(exc)}
    return out


# =============================================================================
# Command line
# =============================================================================

def _load_config(args) -> ExperimentConfig:
    if args.config and args.preset:
        raise ConfigError("use either --config or --preset, not both")
    if args.config:
        cfg = ExperimentConfig.load(args.config)
    else:
        cfg = preset(args.preset[0] if isinstance(args.preset, list) else (args.preset or "stability-subcritical"))
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _run_one(cfg_dict: dict, out: str) -> tuple:
    res = run(ExperimentConfig.from_dict(cfg_dict), Path(out))
    return res.exit_code, res.manifest["termination"], res.manifest["flags"], res.manifest["summary"]


def _fail(code: int, kind: str, message: str, **extra) -> int:
    print(json.dumps({"error": kind, "message": message, **extra}), file=sys.stderr)
    return code


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="eesim", description="Expanding-universe Euler-Einstein perturbation runs.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, multi_preset=False):
        sp.add_argument("--config", help="JSON experiment config")
        if multi_preset:
            sp.add_argument("--preset", action="append", choices=PRESETS, help="named experiment (repeatable)")
        else:
            sp.add_argument("--preset", choices=PRESETS, help="named experiment")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--threads", type=int, default=1, help="worker processes for several presets")

    common(sub.add_parser("run", help="evolve a configuration and write CSV/JSON artifacts"), multi_preset=True)
    a = sub.add_parser("audit", help="compare decomposed and direct right-hand sides on random states")
    a.add_argument("--trials", type=int, default=10_000)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out", help="write audit.json here")
    a.add_argument("--threads", type=int, default=1)
    a.add_argument("--config", help="JSON experiment config (cosmology only is used)")
    a.add_argument("--preset", choices=PRESETS)
    g = sub.add_parser("geodesics", help="evolve, then integrate random timelike geodesics")
    common(g)
    g.add_argument("--count", type=int, default=20)
    g.add_argument("--affine-length", type=float, default=None)
    g.add_argument("--ds", type=float, default=0.05)
    r = sub.add_parser("rates", help="refit decay rates from an existing run directory")
    r.add_argument("--out", required=True, help="run directory")
    r.add_argument("--window", type=float, nargs=2, default=None)
    r.add_argument("--config")
    r.add_argument("--preset", choices=PRESETS)
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--threads", type=int, default=1)
    sub.add_parser("show-preset", help="print a preset as JSON").add_argument("name", choices=PRESETS)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "show-preset":
            print(preset(args.name).to_json())
            return EXIT_OK
        if args.command == "run":
            if args.preset and len(args.preset) > 1:
                if args.config:
                    raise ConfigError("use either --config or --preset, not both")
                base = Path(args.out or "runs")
                jobs = []
                for name in args.preset:
                    cfg = preset(name)
                    if args.seed is not None:
                        cfg.seed = args.seed
                    jobs.append((cfg.to_dict(), str(base / name)))
                with ProcessPoolExecutor(max_workers=max(1, args.threads)) as ex:
                    results = list(ex.map(_run_one, *zip(*jobs)))
                report = {name: {"exit": r[0], "termination": r[1], "flags": r[2]}
                          for name, r in zip(args.preset, results)}
                print(json.dumps(report, indent=2, sort_keys=True))
                return max(r[0] for r in results)
            cfg = _load_config(args)
            res = run(cfg, Path(args.out) if args.out else None)
            term = res.manifest["termination"]
            if res.exit_code != EXIT_OK:
                return _fail(res.exit_code, "guard", term["message"], breakdown_class=term["breakdown_class"],
                             t=term["t"])
            print(json.dumps({"termination": term, "flags": res.manifest["flags"],
                              "summary": res.manifest["summary"]}, indent=2, sort_keys=True))
            return EXIT_OK
        if args.command == "audit":
            cfg = _load_config(args) if (args.config or args.preset) else ExperimentConfig()
            dc = derive_constants(cfg.cosmology, q_override=cfg.q_override)
            rep = identity_audit(dc, seed=args.seed, trials=args.trials)
            text = json.dumps(rep.to_dict(), indent=2, sort_keys=True)
            if args.out:
                Path(args.out).mkdir(parents=True, exist_ok=True)
                (Path(args.out) / "audit.json").write_text(text)
            print(text)
            return EXIT_OK
        if args.command == "geodesics":
            cfg = _load_config(args)
            res = run(cfg, Path(args.out) if args.out else None)
            if res.exit_code != EXIT_OK:
                term = res.manifest["termination"]
                return _fail(res.exit_code, "guard", term["message"], breakdown_class=term["breakdown_class"])
            rep = geodesic_report(res.trajectory, res.dc, args.count, cfg.seed, args.affine_length, args.ds)
            out = Path(args.out or cfg.output_dir)
            (out / "geodesics.json").write_text(json.dumps(rep, indent=2, sort_keys=True))
            print(json.dumps(rep, indent=2, sort_keys=True))
            return EXIT_OK
        if args.command == "rates":
            rep = refit_rates(Path(args.out), tuple(args.window) if args.window else None)
            if not rep:
                return _fail(EXIT_IO, "io", f"no series files in {args.out}")
            (Path(args.out) / "rates.json").write_text(json.dumps(rep, indent=2, sort_keys=True))
            print(json.dumps(rep, indent=2, sort_keys=True))
            return EXIT_OK
    except (ConfigError, InitialDataError, GridError) as exc:
        return _fail(EXIT_CONFIG, "config", str(exc))
    except OSError as exc:
        return _fail(EXIT_IO, "io", str(exc))
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

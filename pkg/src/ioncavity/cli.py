"""Command-line front end.

Exit status: 0 success, 2 configuration or input error, 3 runtime or
numerical failure.
"""
from __future__ import annotations

import hashlib
import json
import math
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import click
import numpy as np

from . import __version__
from .params import CALIBRATION, ConfigError, SchemeConfig

EXIT_CONFIG = 2
EXIT_RUNTIME = 3


@dataclass
class RunManifest:
    command: str
    arguments: dict
    config_hash: str
    tool_version: str = __version__
    inputs: list[str] = field(default_factory=list)
    outputs: dict[str, str] = field(default_factory=dict)     # name -> sha256
    tolerances: dict = field(default_factory=dict)
    calibration: dict = field(default_factory=lambda: dict(CALIBRATION))
    wall_time_s: float = 0.0

    @property
    def run_hash(self) -> str:
        """Hash of everything except wall time; equal for idempotent reruns."""
        d = asdict(self)
        d.pop("wall_time_s")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def write(self, out_dir: Path) -> Path:
        d = asdict(self)
        d["run_hash"] = self.run_hash
        p = out_dir / "manifest.json"
        p.write_text(json.dumps(d, indent=1, sort_keys=True))
        return p


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _finish(manifest: RunManifest, out_dir: Path, files, t0: float) -> None:
    manifest.outputs = {p.name: _sha(p) for p in sorted(files, key=lambda p: p.name)}
    manifest.wall_time_s = time.perf_counter() - t0
    manifest.write(out_dir)


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _runtime_errors():
    from .correlations import GridInvariantError
    from .dynamics import FrameInconsistency, PositivityViolation
    from .hom import RangeError, ZeroDenominator
    from .lindblad import IntegratorFailure
    from .operators import DimensionOverflow
    return (IntegratorFailure, PositivityViolation, GridInvariantError, ZeroDenominator, RangeError,
            DimensionOverflow, FrameInconsistency, FloatingPointError, np.linalg.LinAlgError,
            ArithmeticError, RuntimeError)


def _guard(fn):
    """Map exceptions onto the exit-status contract."""
    import functools

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        from .clickstream import StreamError
        try:
            return fn(*args, **kwargs)
        except (ConfigError, StreamError) as exc:
            _fail(EXIT_CONFIG, str(exc))
        except _runtime_errors() as exc:
            _fail(EXIT_RUNTIME, f"{type(exc).__name__}: {exc}")
    return wrapper


def _load(config: str) -> SchemeConfig:
    from .config import load_config
    return load_config(config)


def _tolerances(cfg: SchemeConfig) -> dict:
    return {"rtol": cfg.rtol, "atol": cfg.atol, "n_points": cfg.n_points}


def _print_config(cfg: SchemeConfig) -> None:
    click.echo(json.dumps(cfg.to_dict(), indent=1, sort_keys=True))


@click.group()
@click.version_option(__version__, prog_name="ioncavity")
def main():
    """Ion-cavity single-photon source simulator and click-stream analyzer."""


@main.command()
@click.argument("config")
@click.option("-o", "--out", "out_dir", type=click.Path(file_okay=False), default="out_photon",
              show_default=True)
@click.option("--dry-run", is_flag=True, help="Validate and print the resolved config only.")
@_guard
def photon(config, out_dir, dry_run):
    """Photon temporal profile and emission probability."""
    from .dynamics import run_scheme, write_profile_csv, write_trajectory_csv
    cfg = _load(config)
    if dry_run:
        _print_config(cfg)
        return
    t0 = time.perf_counter()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rec = run_scheme(cfg)
    tr = rec.trajectory
    files = [out / "trajectory.csv", out / "profile.csv", out / "summary.json"]
    write_trajectory_csv(tr, files[0])
    write_profile_csv(rec.times, rec.profile, files[1])
    files[2].write_text(json.dumps({
        "p_emit": rec.p_emit,
        "final_populations": rec.final_populations,
        "detected_mode": tr.detected_mode.key,
        "trace_drift": tr.trace_drift,
        "hermiticity": tr.hermiticity,
        "min_eigenvalue": tr.min_eigenvalue,
        "config_hash": cfg.config_hash(),
    }, indent=1))
    man = RunManifest("photon", {"config": config}, cfg.config_hash(), inputs=[config],
                      tolerances=_tolerances(cfg))
    _finish(man, out, files, t0)
    click.echo(f"p_emit = {rec.p_emit:.6g}")


@main.command()
@click.argument("config")
@click.option("-o", "--out", "out_dir", type=click.Path(file_okay=False), default="out_hom",
              show_default=True)
@click.option("--phi", type=float, default=0.0, show_default=True, help="Polarization mismatch, degrees.")
@click.option("--window", "T", type=float, default=5.0, show_default=True, help="Window T, us.")
@click.option("--grid-n", type=int, default=None, help="Correlation grid size (default: n_points).")
@click.option("--bin-width", type=float, default=0.075, show_default=True, help="Histogram bin, us.")
@click.option("--dry-run", is_flag=True)
@_guard
def hom(config, out_dir, phi, T, grid_n, bin_width, dry_run):
    """Coherence grids, HOM histograms and visibility."""
    from .correlations import correlation_grid, emission_probability, write_grid_csv
    from .hom import (coincidence_density, hbt_g2_zero, tau_histogram, visibility,
                      windowed_visibility_curve, write_curve_csv, write_histogram_csv)
    cfg = _load(config)
    n = grid_n or cfg.n_points
    if n < 16:
        raise ConfigError("grid-n", "must be >= 16")
    if T <= 0:
        raise ConfigError("window", "must be > 0")
    if dry_run:
        _print_config(cfg)
        return
    t0 = time.perf_counter()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid = correlation_grid(cfg, n)
    density = coincidence_density(grid, math.radians(phi))
    V = visibility(density, T)
    files = write_grid_csv(grid, out)
    hist = tau_histogram(density, bin_width, min(T / 2, density.support))
    write_histogram_csv(hist, out / "histogram.csv")
    T_values = np.unique(np.concatenate([np.linspace(0.05, 2 * density.support, 100), [T]]))
    write_curve_csv(windowed_visibility_curve(density, T_values), out / "window_curve.csv")
    (out / "visibility.json").write_text(json.dumps({
        "visibility": V, "phi_deg": phi, "window_us": T, "grid_n": n,
        "p_emit": emission_probability(grid, cfg.params.cavity),
        "g2_zero": hbt_g2_zero(grid),
        "config_hash": cfg.config_hash(),
    }, indent=1))
    files += [out / "histogram.csv", out / "window_curve.csv", out / "visibility.json"]
    man = RunManifest("hom", {"config": config, "phi_deg": phi, "window_us": T, "grid_n": n,
                              "bin_width_us": bin_width}, cfg.config_hash(), inputs=[config],
                      tolerances=_tolerances(cfg) | {"grid_n": n})
    _finish(man, out, files, t0)
    click.echo(f"visibility = {V:.6g}")


def load_sweep_spec(path: str):
    """Sweep spec TOML: ``base`` (preset name, config path or inline table), axes and options."""
    from .config import config_from_dict, load_config, load_toml
    from .sweep import SweepSpec, desk_spec, gamma_ref
    data = load_toml(path)
    allowed = {"scheme", "base", "omega_values", "delta_values", "omega_mhz", "delta_mhz",
               "observables", "grid_n", "T", "phi_deg", "desk_grid"}
    for k in data:
        if k not in allowed:
            raise ConfigError(k, "unknown field")
    if "base" not in data:
        raise ConfigError("base", "required field missing")
    base = data["base"]
    if isinstance(base, dict):
        cfg = config_from_dict(base)
    else:
        ref = Path(path).parent / base
        cfg = load_config(ref if ref.exists() else base)
    if data.get("desk_grid", False):
        spec = desk_spec(cfg, grid_n=int(data.get("grid_n", 96)))
        om, de = spec.omega_values, spec.delta_values
    else:
        u = gamma_ref(cfg)
        om = _axis(data, "omega", u)
        de = _axis(data, "delta", u)
    spec = SweepSpec(
        scheme=data.get("scheme", cfg.params.scheme),
        omega_values=tuple(om), delta_values=tuple(de), base_config=cfg,
        observables=tuple(data.get("observables", ("P_emit", "V"))),
        grid_n=int(data.get("grid_n", 96)), T=float(data.get("T", 5.0)),
        phi=math.radians(float(data.get("phi_deg", 0.0))),
    )
    spec.validate()
    return spec


def _axis(data: dict, name: str, unit: float):
    if f"{name}_values" in data:
        vals = data[f"{name}_values"]
        scale = 1.0
    elif f"{name}_mhz" in data:
        vals = data[f"{name}_mhz"]
        scale = 2 * math.pi / unit
    else:
        raise ConfigError(f"{name}_values", "required field missing")
    if isinstance(vals, dict):
        try:
            vals = np.linspace(float(vals["start"]), float(vals["stop"]), int(vals["num"])).tolist()
        except (KeyError, TypeError, ValueError):
            raise ConfigError(f"{name}", "range table needs start, stop, num") from None
    if not isinstance(vals, list) or not all(isinstance(v, (int, float)) for v in vals):
        raise ConfigError(f"{name}_values", "expected a list of numbers")
    return [float(v) * scale for v in vals]


@main.command()
@click.argument("spec_path", metavar="SPEC")
@click.option("-o", "--out", "out_dir", type=click.Path(file_okay=False), default="out_sweep",
              show_default=True)
@click.option("--workers", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--resume/--no-resume", default=True, show_default=True)
@click.option("--dry-run", is_flag=True)
@_guard
def sweep(spec_path, out_dir, workers, resume, dry_run):
    """(Omega, Delta) grid of emission probability and visibility."""
    from .sweep import run_sweep
    spec = load_sweep_spec(spec_path)
    if dry_run:
        click.echo(json.dumps({"cells": len(spec.cells()), "config_hash": spec.config_hash(),
                               "base": spec.base_config.to_dict()}, indent=1, sort_keys=True))
        return
    t0 = time.perf_counter()
    out = Path(out_dir)
    res = run_sweep(spec, out, workers=workers, resume=resume,
                    progress=lambda k, n: click.echo(f"cell {k}/{n}", err=True))
    man = RunManifest("sweep", {"spec": spec_path, "grid_n": spec.grid_n, "T": spec.T, "phi": spec.phi},
                      spec.config_hash(), inputs=[spec_path],
                      tolerances=_tolerances(spec.base_config) | {"grid_n": spec.grid_n})
    _finish(man, out, [out / "sweep.csv", out / "sweep_summary.json"], t0)
    click.echo(f"{int(np.sum(res.status == 'ok'))} ok, {int(np.sum(res.status == 'failed'))} failed")


@main.command()
@click.argument("sd_csv", type=click.Path(exists=True, dir_okay=False))
@click.argument("dd_csv", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--out", "out_dir", type=click.Path(file_okay=False), default="out_dominance",
              show_default=True)
@_guard
def dominance(sd_csv, dd_csv, out_dir):
    """Efficiency envelope of two sweeps versus visibility threshold."""
    from .sweep import dominance_report, read_sweep_csv
    t0 = time.perf_counter()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rep = dominance_report(read_sweep_csv(sd_csv), read_sweep_csv(dd_csv))
    rep.write_csv(out / "dominance.csv")
    digest = hashlib.sha256(Path(sd_csv).read_bytes() + Path(dd_csv).read_bytes()).hexdigest()[:16]
    _finish(RunManifest("dominance", {"sd": sd_csv, "dd": dd_csv}, digest, inputs=[sd_csv, dd_csv]),
            out, [out / "dominance.csv"], t0)
    cex = rep.counterexamples
    click.echo(f"{len(rep.comparable)} comparable thresholds, {len(cex)} counterexamples")


@main.command()
@click.argument("streams", nargs=-1, required=True, type=click.Path(dir_okay=False))
@click.option("--mode", type=click.Choice(["hom", "hbt", "profile"]), required=True)
@click.option("-o", "--out", "out_dir", type=click.Path(file_okay=False), default="out_analyze",
              show_default=True)
@click.option("--bin", "bin_width", type=float, default=None,
              help="Bin width, us (default 0.075 for hom, 0.020 for profile).")
@click.option("--window", "T", type=float, default=5.0, show_default=True, help="Visibility window T, us.")
@click.option("--range", "max_tau", type=float, default=2.5, show_default=True, help="Max |tau|, us.")
@click.option("--fold-window", type=float, nargs=2, default=None, help="Profile phase range, us.")
@click.option("--cycle-period", type=float, default=None, help="Cycle period, us (default: from sync).")
@_guard
def analyze(streams, mode, out_dir, bin_width, T, max_tau, fold_window, cycle_period):
    """Histograms, visibility, g2(0) or profile from timestamp streams.

    hom: two streams (parallel, perpendicular); hbt: one stream; profile: one or more.
    """
    from .clickstream import (combine, cross_correlate, data_visibility, fold_profile, hbt_g2,
                              parse_events)
    from .hom import write_histogram_csv
    t0 = time.perf_counter()
    need = {"hom": 2, "hbt": 1}.get(mode)
    if need is not None and len(streams) != need:
        raise ConfigError("streams", f"mode {mode} takes {need} stream(s), got {len(streams)}")
    parsed = []
    for s in streams:
        try:
            parsed.append(parse_events(s, cycle_period=cycle_period))
        except OSError as exc:
            raise ConfigError(s, f"cannot read stream: {exc.strerror}") from None
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    if mode == "hom":
        b = bin_width or 0.075
        par, perp = (cross_correlate(st, b, max_tau) for st in parsed)
        write_histogram_csv(combine(par, perp), out / "histogram.csv")
        V, sV = data_visibility(par, perp, T)
        (out / "visibility.json").write_text(json.dumps(
            {"visibility": V, "sigma": sV, "window_us": T, "bin_us": b,
             "pairs_par": par.n_pairs, "pairs_perp": perp.n_pairs}, indent=1))
        files += [out / "histogram.csv", out / "visibility.json"]
        click.echo(f"visibility = {V:.6g} +- {sV:.2g}")
    elif mode == "hbt":
        r = hbt_g2(parsed[0], max_tau=max_tau)
        (out / "hbt.json").write_text(json.dumps(asdict(r), indent=1))
        files.append(out / "hbt.json")
        click.echo(f"g2(0) = {r.g2_zero:.6g} {'<' if r.upper_bound else '+-'} {r.error:.2g}")
    else:
        b = bin_width or 0.020
        for k, st in enumerate(parsed):
            prof = fold_profile(st, b, tuple(fold_window) if fold_window else None)
            p = out / ("profile.csv" if len(parsed) == 1 else f"profile_{k}.csv")
            prof.write_csv(p)
            files.append(p)
    digest = hashlib.sha256(b"".join(Path(s).read_bytes() for s in streams)).hexdigest()[:16]
    man = RunManifest("analyze", {"mode": mode, "bin_us": bin_width, "window_us": T, "range_us": max_tau},
                      digest, inputs=list(streams))
    _finish(man, out, files, t0)


@main.command()
@click.argument("config")
@click.option("-o", "--out", "out_dir", type=click.Path(file_okay=False), default="out_synth",
              show_default=True)
@click.option("--mode", type=click.Choice(["hom", "profile"]), default="hom", show_default=True)
@click.option("--events", type=click.IntRange(min=0), default=100_000, show_default=True,
              help="Trials per stream.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--background", type=float, default=0.0, show_default=True, help="Per detector, 1/us.")
@click.option("--efficiency", type=float, default=1.0, show_default=True)
@click.option("--phi", type=float, default=0.0, show_default=True, help="Mismatch for the parallel stream, deg.")
@click.option("--grid-n", type=int, default=None)
@_guard
def synth(config, out_dir, mode, events, seed, background, efficiency, phi, grid_n):
    """Seeded synthetic click streams from a simulated source."""
    from .clickstream import synth_clicks, write_events
    from .correlations import correlation_grid
    from .dynamics import run_scheme
    from .hom import coincidence_density
    cfg = _load(config)
    t0 = time.perf_counter()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    if mode == "profile":
        rec = run_scheme(cfg)
        st = synth_clicks((rec.times, rec.flux), events, background, efficiency, seed)
        write_events(st, out / "profile_stream.csv")
        files.append(out / "profile_stream.csv")
    else:
        dens = coincidence_density(correlation_grid(cfg, grid_n or cfg.n_points), math.radians(phi))
        for k, pol in enumerate(("par", "perp")):
            st = synth_clicks(dens, events, background, efficiency, seed + k, polarization=pol)
            p = out / f"{pol}_stream.csv"
            write_events(st, p)
            files.append(p)
    man = RunManifest("synth", {"mode": mode, "events": events, "seed": seed, "background": background,
                                "efficiency": efficiency, "phi_deg": phi},
                      cfg.config_hash(), inputs=[config], tolerances=_tolerances(cfg))
    _finish(man, out, files, t0)


if __name__ == "__main__":
    main()

"""Grids of (Rabi frequency, Raman detuning) evaluated cell by cell.

Each cell runs the full correlation pipeline with the cell's drive amplitude
and detuning substituted into a base configuration.  Finished cells are
appended to a journal file as they complete, so an interrupted sweep resumes
where it stopped; the final CSV is written in canonical cell order and is
therefore independent of scheduling.
"""
from __future__ import annotations

import csv
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .atom import mhz
from .correlations import correlation_grid, emission_probability
from .hom import coincidence_density, hbt_g2_zero, visibility
from .params import ConfigError, SchemeConfig

OBSERVABLES = ("P_emit", "V", "g2_zero")
CSV_COLUMNS = ["omega_rad_per_us", "delta_rad_per_us", "p_emit", "visibility", "status"]
JOURNAL_COLUMNS = ["i", "j"] + CSV_COLUMNS + ["g2_zero", "detail"]


def gamma_ref(cfg: SchemeConfig) -> float:
    """Axis unit: total P1/2 linewidth, rad/us."""
    return cfg.params.gamma_SP + cfg.params.gamma_DP


@dataclass(frozen=True)
class SweepSpec:
    scheme: str
    omega_values: tuple[float, ...]     # units of gamma_ref
    delta_values: tuple[float, ...]     # units of gamma_ref, signed
    base_config: SchemeConfig
    observables: tuple[str, ...] = ("P_emit", "V")
    grid_n: int = 96
    T: float = 5.0
    phi: float = 0.0

    def validate(self) -> None:
        if self.scheme != self.base_config.params.scheme:
            raise ConfigError("scheme", f"does not match base config ({self.base_config.params.scheme})")
        for name in ("omega_values", "delta_values"):
            vals = np.asarray(getattr(self, name), dtype=float)
            if vals.size == 0:
                raise ConfigError(name, "grid must be non-empty")
            if vals.size > 1 and not (np.all(np.diff(vals) > 0) or np.all(np.diff(vals) < 0)):
                raise ConfigError(name, "grid must be strictly monotone")
        if np.any(np.asarray(self.omega_values) < 0):
            raise ConfigError("omega_values", "Rabi frequencies must be >= 0")
        unknown = set(self.observables) - set(OBSERVABLES)
        if unknown or not self.observables:
            raise ConfigError("observables", f"must be a non-empty subset of {OBSERVABLES}")
        if self.grid_n < 16:
            raise ConfigError("grid_n", "must be >= 16")
        self.base_config.validate()

    @property
    def unit(self) -> float:
        return gamma_ref(self.base_config)

    def cells(self) -> list[tuple[int, int, float, float]]:
        u = self.unit
        return [(i, j, om * u, de * u)
                for i, om in enumerate(self.omega_values)
                for j, de in enumerate(self.delta_values)]

    def config_hash(self) -> str:
        import hashlib
        blob = json.dumps({
            "base": self.base_config.to_dict(),
            "omega": list(map(float, self.omega_values)),
            "delta": list(map(float, self.delta_values)),
            "observables": sorted(self.observables),
            "grid_n": self.grid_n, "T": self.T, "phi": self.phi,
        }, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def desk_spec(base: SchemeConfig, n_omega: int = 9, n_delta: int = 9, grid_n: int = 96) -> SweepSpec:
    """Default 9x9 desk-scale grid: Omega/2pi in [2, 20] MHz, |Delta|/2pi in [10, 60] MHz.

    The detuning sign follows the base configuration.
    """
    u = gamma_ref(base)
    sign = 1.0 if base.params.drive.detuning >= 0 else -1.0
    om = np.linspace(mhz(2.0), mhz(20.0), n_omega) / u
    de = sign * np.linspace(mhz(10.0), mhz(60.0), n_delta) / u
    return SweepSpec(base.params.scheme, tuple(om), tuple(de), base, ("P_emit", "V"), grid_n)


def evaluate_point(cfg: SchemeConfig, n: int, observables=("P_emit", "V"), T: float = 5.0,
                   phi: float = 0.0) -> dict[str, float]:
    """Observables of one configuration; the single-run path shared with the CLI."""
    need_g1 = "V" in observables
    need_g2 = "V" in observables or "g2_zero" in observables
    grid = correlation_grid(cfg, n, g1=need_g1, g2=need_g2)
    out = {"P_emit": emission_probability(grid, cfg.params.cavity)}
    if "V" in observables:
        out["V"] = visibility(coincidence_density(grid, phi), T)
    if "g2_zero" in observables:
        out["g2_zero"] = hbt_g2_zero(grid)
    return out


def _cell_config(spec: SweepSpec, omega: float, delta: float) -> SchemeConfig:
    return spec.base_config.with_updates(**{
        "params.drive.peak_rabi": omega, "params.drive.detuning": delta,
    })


def _run_cell(spec: SweepSpec, cell) -> dict:
    i, j, omega, delta = cell
    rec = {"i": i, "j": j, "omega": omega, "delta": delta,
           "P_emit": math.nan, "V": math.nan, "g2_zero": math.nan, "status": "ok", "detail": ""}
    try:
        vals = evaluate_point(_cell_config(spec, omega, delta), spec.grid_n, spec.observables,
                              spec.T, spec.phi)
        rec.update(vals)
        if not 0.0 <= rec["P_emit"] <= 1.0:
            raise ValueError(f"P_emit={rec['P_emit']!r} outside [0, 1]")
        if "V" in vals and not -1e-9 <= rec["V"] <= 1.0 + 1e-9:
            raise ValueError(f"V={rec['V']!r} outside [0, 1]")
    except Exception as exc:  # recorded per cell, never aborts the sweep
        rec.update(P_emit=math.nan, V=math.nan, g2_zero=math.nan, status="failed",
                   detail=f"{type(exc).__name__}: {exc}")
    return rec


@dataclass
class SweepResult:
    omega_values: np.ndarray            # rad/us
    delta_values: np.ndarray            # rad/us
    p_emit: np.ndarray                  # (n_omega, n_delta)
    visibility: np.ndarray
    g2_zero: np.ndarray
    status: np.ndarray                  # "ok" / "failed"
    diagnostics: dict[tuple[int, int], str] = field(default_factory=dict)
    config_hash: str = ""
    wall_time: float = 0.0
    gamma_ref: float = 1.0

    def ok_cells(self):
        for i in range(len(self.omega_values)):
            for j in range(len(self.delta_values)):
                if self.status[i, j] == "ok":
                    yield i, j

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for i, om in enumerate(self.omega_values):
                for j, de in enumerate(self.delta_values):
                    w.writerow([repr(float(om)), repr(float(de)), repr(float(self.p_emit[i, j])),
                                repr(float(self.visibility[i, j])), self.status[i, j]])

    def summary(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "gamma_ref_rad_per_us": self.gamma_ref,
            "omega_rad_per_us": [float(x) for x in self.omega_values],
            "delta_rad_per_us": [float(x) for x in self.delta_values],
            "omega_over_2pi_MHz": [float(x) / (2 * math.pi) for x in self.omega_values],
            "delta_over_2pi_MHz": [float(x) / (2 * math.pi) for x in self.delta_values],
            "n_ok": int(np.sum(self.status == "ok")),
            "n_failed": int(np.sum(self.status == "failed")),
            "failures": [{"i": i, "j": j, "detail": d} for (i, j), d in sorted(self.diagnostics.items())],
            "wall_time_s": self.wall_time,
        }


def _read_journal(path: Path) -> dict[tuple[int, int], dict]:
    done: dict[tuple[int, int], dict] = {}
    if not path.exists():
        return done
    text = path.read_text()
    lines = text.split("\n")
    # a record is complete only once its newline has been written
    complete = lines[:-1] if not text.endswith("\n") else lines
    for row in csv.DictReader(complete):
        try:
            key = (int(row["i"]), int(row["j"]))
            rec = {"i": key[0], "j": key[1], "omega": float(row["omega_rad_per_us"]),
                   "delta": float(row["delta_rad_per_us"]), "P_emit": float(row["p_emit"]),
                   "V": float(row["visibility"]), "g2_zero": float(row["g2_zero"]),
                   "status": row["status"], "detail": row["detail"]}
        except (TypeError, ValueError, KeyError):
            continue
        if rec["status"] in ("ok", "failed"):
            done[key] = rec
    return done


def _append(fh, rec: dict) -> None:
    row = [rec["i"], rec["j"], repr(float(rec["omega"])), repr(float(rec["delta"])),
           repr(float(rec["P_emit"])), repr(float(rec["V"])), rec["status"],
           repr(float(rec["g2_zero"])), rec["detail"].replace("\n", " ")]
    w = csv.writer(fh)
    w.writerow(row)
    fh.flush()
    os.fsync(fh.fileno())


def run_sweep(spec: SweepSpec, out_dir: str | Path | None = None, workers: int = 1,
              resume: bool = True, progress=None) -> SweepResult:
    """Evaluate every cell of ``spec``.

    With ``out_dir`` set, records are journaled to ``cells.journal.csv`` and
    the canonical ``sweep.csv`` / ``sweep_summary.json`` are written at the
    end.  ``resume`` reuses complete journal records with a matching hash.
    """
    spec.validate()
    t_start = time.perf_counter()
    chash = spec.config_hash()
    cells = spec.cells()
    done: dict[tuple[int, int], dict] = {}
    journal = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        jpath = out_dir / "cells.journal.csv"
        hpath = out_dir / "cells.journal.hash"
        if resume and hpath.exists() and hpath.read_text().strip() == chash:
            done = _read_journal(jpath)
        else:
            jpath.unlink(missing_ok=True)
        hpath.write_text(chash + "\n")
        if done:
            _rewrite_journal(jpath, done)
        new = not jpath.exists()
        journal = open(jpath, "a", newline="")
        if new:
            csv.writer(journal).writerow(JOURNAL_COLUMNS)
            journal.flush()
    todo = [c for c in cells if (c[0], c[1]) not in done]
    try:
        if workers <= 1 or len(todo) <= 1:
            for cell in todo:
                rec = _run_cell(spec, cell)
                done[(rec["i"], rec["j"])] = rec
                if journal:
                    _append(journal, rec)
                if progress:
                    progress(len(done), len(cells))
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futs = [pool.submit(_run_cell, spec, cell) for cell in todo]
                for fut in as_completed(futs):
                    rec = fut.result()
                    done[(rec["i"], rec["j"])] = rec
                    if journal:
                        _append(journal, rec)
                    if progress:
                        progress(len(done), len(cells))
    finally:
        if journal:
            journal.close()

    result = _assemble(spec, done, chash, time.perf_counter() - t_start)
    if out_dir is not None:
        result.write_csv(out_dir / "sweep.csv")
        (out_dir / "sweep_summary.json").write_text(json.dumps(result.summary(), indent=1))
    return result


def _rewrite_journal(path: Path, done: dict) -> None:
    # drop any truncated trailing record before appending
    tmp = path.with_suffix(".tmp")
    with open(tmp, "w", newline="") as fh:
        csv.writer(fh).writerow(JOURNAL_COLUMNS)
        for key in sorted(done):
            _append(fh, done[key])
    tmp.replace(path)


def _assemble(spec: SweepSpec, done: dict, chash: str, wall: float) -> SweepResult:
    u = spec.unit
    no, nd = len(spec.omega_values), len(spec.delta_values)
    P = np.full((no, nd), np.nan)
    V = np.full((no, nd), np.nan)
    G = np.full((no, nd), np.nan)
    S = np.full((no, nd), "failed", dtype=object)
    diag = {}
    for (i, j), rec in done.items():
        P[i, j], V[i, j], G[i, j], S[i, j] = rec["P_emit"], rec["V"], rec["g2_zero"], rec["status"]
        if rec["status"] == "failed":
            diag[(i, j)] = rec["detail"]
    return SweepResult(np.asarray(spec.omega_values, float) * u, np.asarray(spec.delta_values, float) * u,
                       P, V, G, S, diag, chash, wall, u)


def read_sweep_csv(path: str | Path) -> SweepResult:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    om_seen = list(dict.fromkeys(float(r["omega_rad_per_us"]) for r in rows))
    de_seen = list(dict.fromkeys(float(r["delta_rad_per_us"]) for r in rows))
    no, nd = len(om_seen), len(de_seen)
    P, V = np.full((no, nd), np.nan), np.full((no, nd), np.nan)
    S = np.full((no, nd), "failed", dtype=object)
    for r in rows:
        i, j = om_seen.index(float(r["omega_rad_per_us"])), de_seen.index(float(r["delta_rad_per_us"]))
        P[i, j], V[i, j], S[i, j] = float(r["p_emit"]), float(r["visibility"]), r["status"]
    return SweepResult(np.array(om_seen), np.array(de_seen), P, V, np.full((no, nd), np.nan), S)


@dataclass
class DominanceRow:
    threshold: float
    sd_max_p: float | None
    dd_max_p: float | None
    status: str             # "ok", "counterexample", "empty feasible set: SD|DD|both"


@dataclass
class DominanceReport:
    rows: list[DominanceRow]

    @property
    def counterexamples(self) -> list[float]:
        return [r.threshold for r in self.rows if r.status == "counterexample"]

    @property
    def comparable(self) -> list[DominanceRow]:
        return [r for r in self.rows if r.sd_max_p is not None and r.dd_max_p is not None]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["visibility_threshold", "sd_max_p_emit", "dd_max_p_emit", "status"])
            for r in self.rows:
                w.writerow([f"{r.threshold:.6g}",
                            "" if r.sd_max_p is None else repr(r.sd_max_p),
                            "" if r.dd_max_p is None else repr(r.dd_max_p), r.status])


def _envelope(res: SweepResult, v: float) -> float | None:
    best = None
    for i, j in res.ok_cells():
        if res.visibility[i, j] >= v:
            p = float(res.p_emit[i, j])
            best = p if best is None else max(best, p)
    return best


def dominance_report(sd: SweepResult, dd: SweepResult, thresholds=None) -> DominanceReport:
    """Best SD and DD emission probability at each visibility threshold."""
    if thresholds is None:
        thresholds = np.round(np.linspace(0.0, 1.0, 101), 10)
    rows = []
    for v in thresholds:
        a, b = _envelope(sd, v), _envelope(dd, v)
        if a is None and b is None:
            status = "empty feasible set: both"
        elif a is None:
            status = "empty feasible set: SD"
        elif b is None:
            status = "empty feasible set: DD"
        else:
            status = "counterexample" if a > b else "ok"
        rows.append(DominanceRow(float(v), a, b, status))
    return DominanceReport(rows)


def field_sensitivity(cfg: SchemeConfig, dB: float = 0.5, n: int = 64, T: float = 5.0) -> dict[str, float]:
    """Central-difference dV/dB and dP_emit/dB (per gauss) around cfg.params.B."""
    B = cfg.params.B
    lo_B = max(B - dB, 0.0)
    hi = evaluate_point(cfg.with_updates(**{"params.B": B + dB}), n, ("P_emit", "V"), T)
    lo = evaluate_point(cfg.with_updates(**{"params.B": lo_B}), n, ("P_emit", "V"), T)
    span = B + dB - lo_B
    return {"dV_dB": (hi["V"] - lo["V"]) / span, "dP_emit_dB": (hi["P_emit"] - lo["P_emit"]) / span}

"""Two-time coherence functions of the detected cavity mode.

G1[i, j] = <a^dag(t_i) a(t_j)> and G2[i, j] = <a^dag(t_i) a^dag(t_j) a(t_j) a(t_i)>,
computed with the quantum regression theorem from one batched propagation
(see :func:`ioncavity.lindblad.regression_sweep`).
"""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .atom import LEVELS, Pol
from .dynamics import (
    Trajectory, _trajectory, build_model, emitted_probability, initial_density, raman_path,
)
from .lindblad import LinearModel, regression_sweep, sandwich, trace_functional
from .operators import OperatorSet
from .params import CavityModeConfig, SchemeConfig

MIN_GRID = 16
HOM_GRID_WARN = 64


class GridInvariantError(AssertionError):
    pass


@dataclass
class CorrelationGrid:
    times: np.ndarray
    G1: np.ndarray | None
    G2: np.ndarray | None
    n_of_t: np.ndarray
    detected_mode: Pol | None = None
    config_hash: str = ""
    trajectory: Trajectory | None = field(default=None, repr=False)

    @property
    def spacing(self) -> float:
        return float(self.times[1] - self.times[0])

    def check(self, tol: float = 1e-8) -> None:
        """Raise if any stored matrix violates the coherence-function invariants."""
        n = self.n_of_t
        if np.min(n) < -1e-9:
            raise GridInvariantError(f"negative photon number {np.min(n):.3g}")
        if self.G1 is not None:
            G1 = self.G1
            if np.max(np.abs(G1 - G1.conj().T)) > tol:
                raise GridInvariantError("G1 is not Hermitian")
            if np.max(np.abs(np.diag(G1).imag)) > tol:
                raise GridInvariantError("G1 diagonal is not real")
            bound = np.outer(np.clip(n, 0, None), np.clip(n, 0, None)) * (1 + 1e-6) + 1e-18
            if np.any(np.abs(G1) ** 2 > bound):
                raise GridInvariantError("Cauchy-Schwarz bound violated")
        if self.G2 is not None:
            G2 = self.G2
            if np.max(np.abs(G2 - G2.T)) > tol:
                raise GridInvariantError("G2 is not symmetric")
            if np.min(G2) < -1e-9:
                raise GridInvariantError(f"negative G2 entry {np.min(G2):.3g}")


def coherence_functions(
    model: LinearModel,
    rho0: np.ndarray,
    times: np.ndarray,
    a,
    *,
    g1: bool = True,
    g2: bool = True,
    rho_observables=(),
    rtol: float = 1e-8,
    atol: float = 1e-10,
):
    """Regression-theorem G1/G2 of the mode with annihilator ``a`` for any linear model.

    Returns ``(G1, G2, n_of_t, sweep)``; unrequested matrices are None.
    """
    a = sp.csr_matrix(a)
    ad = a.conj().T.tocsr()
    eye = sp.identity(a.shape[0], format="csr")
    sources = []
    if g1:
        sources.append((sandwich(a, eye), trace_functional(ad, a.shape[0])))
    if g2:
        sources.append((sandwich(a, ad), trace_functional(ad @ a, a.shape[0])))
    obs = [trace_functional(ad @ a, a.shape[0])] + list(rho_observables)
    res = regression_sweep(model, rho0, times, sources, obs, rtol=rtol, atol=atol)
    G1 = G2 = None
    k = 0
    if g1:
        G1 = _fill_hermitian(res.records[k])
        k += 1
    if g2:
        G2 = _fill_symmetric(res.records[k].real)
    return G1, G2, res.rho_records[:, 0].real.copy(), res


def correlation_grid(
    cfg: SchemeConfig,
    n: int | None = None,
    *,
    g1: bool = True,
    g2: bool = True,
    ops: OperatorSet | None = None,
    mode: Pol | None = None,
    rho0: np.ndarray | None = None,
) -> CorrelationGrid:
    """G1 and/or G2 of the detected mode on a uniform ``n``-point grid over the window."""
    n = n or cfg.n_points
    if n < MIN_GRID:
        raise ValueError(f"grid size must be >= {MIN_GRID}")
    if g2 and cfg.params.cavity.fock_cutoff < 2:
        raise ValueError("G2 needs fock_cutoff >= 2")
    cfg = cfg.with_updates(n_points=n) if n != cfg.n_points else cfg
    model, ops = build_model(cfg, ops)
    mode = mode or raman_path(cfg).cavity_q
    if rho0 is None:
        rho0 = initial_density(cfg, ops)
    obs = [trace_functional(ops.projector[lvl], ops.dim) for lvl in LEVELS]
    obs += [trace_functional(ops.number[q], ops.dim) for q in ops.modes]
    G1, G2, n_of_t, res = coherence_functions(
        model, rho0, cfg.times, ops.a[mode], g1=g1, g2=g2, rho_observables=obs,
        rtol=cfg.rtol, atol=cfg.atol,
    )
    traj = _trajectory(cfg, ops, res.times, res.rho, res.rho_records[:, 1:], mode, res.n_steps)
    grid = CorrelationGrid(res.times, G1, G2, n_of_t, mode, cfg.config_hash(), traj)
    grid.check()
    return grid


def _fill_hermitian(R: np.ndarray) -> np.ndarray:
    # R[i, j] = <a^dag(t_j) a(t_i)> for j >= i
    upper = np.triu(np.nan_to_num(R))
    G = upper.conj()
    G = G + G.conj().T - np.diag(np.diag(G).real)
    np.fill_diagonal(G, np.diag(upper).real)
    return G


def _fill_symmetric(R: np.ndarray) -> np.ndarray:
    upper = np.triu(np.nan_to_num(R))
    return upper + upper.T - np.diag(np.diag(upper))


def g1_grid(cfg: SchemeConfig, n: int, for_hom: bool = False) -> CorrelationGrid:
    if for_hom and n < HOM_GRID_WARN:
        warnings.warn(f"grid too coarse for HOM assembly (n={n} < {HOM_GRID_WARN})", stacklevel=2)
    return correlation_grid(cfg, n, g1=True, g2=False)


def g2_grid(cfg: SchemeConfig, n: int) -> CorrelationGrid:
    return correlation_grid(cfg, n, g1=False, g2=True)


def emission_probability(grid: CorrelationGrid, cavity: CavityModeConfig, include_tail: bool = True) -> float:
    """Outcoupled photon probability from the grid's photon-number record.

    ``include_tail`` adds the photon still in the cavity at the window end,
    matching :func:`ioncavity.dynamics.run_scheme`.
    """
    if include_tail:
        return emitted_probability(grid.times, grid.n_of_t, cavity)
    return float(2.0 * cavity.kappa * cavity.outcoupling_fraction * np.trapezoid(grid.n_of_t, grid.times))


def write_grid_csv(grid: CorrelationGrid, directory: str | Path, prefix: str = "") -> list[Path]:
    directory = Path(directory)
    written = []
    if grid.G1 is not None:
        p = directory / f"{prefix}g1.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "j", "re", "im"])
            for (i, j), v in np.ndenumerate(grid.G1):
                w.writerow([i, j, f"{v.real:.12g}", f"{v.imag:.12g}"])
        written.append(p)
    if grid.G2 is not None:
        p = directory / f"{prefix}g2.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "j", "value"])
            for (i, j), v in np.ndenumerate(grid.G2):
                w.writerow([i, j, f"{v:.12g}"])
        written.append(p)
    meta = directory / f"{prefix}grid_meta.json"
    meta.write_text(json.dumps({
        "times_us": [float(t) for t in grid.times],
        "config_hash": grid.config_hash,
        "detected_mode": grid.detected_mode.key if grid.detected_mode is not None else None,
        "n_of_t": [float(x) for x in grid.n_of_t],
    }, indent=1))
    written.append(meta)
    return written


def read_grid_csv(directory: str | Path, prefix: str = "") -> CorrelationGrid:
    directory = Path(directory)
    meta = json.loads((directory / f"{prefix}grid_meta.json").read_text())
    times = np.asarray(meta["times_us"])
    n = len(times)
    G1 = G2 = None
    p1, p2 = directory / f"{prefix}g1.csv", directory / f"{prefix}g2.csv"
    if p1.exists():
        d = np.loadtxt(p1, delimiter=",", skiprows=1, ndmin=2)
        G1 = np.zeros((n, n), dtype=complex)
        G1[d[:, 0].astype(int), d[:, 1].astype(int)] = d[:, 2] + 1j * d[:, 3]
    if p2.exists():
        d = np.loadtxt(p2, delimiter=",", skiprows=1, ndmin=2)
        G2 = np.zeros((n, n))
        G2[d[:, 0].astype(int), d[:, 1].astype(int)] = d[:, 2]
    mode = Pol.parse(meta["detected_mode"]) if meta.get("detected_mode") else None
    return CorrelationGrid(times, G1, G2, np.asarray(meta["n_of_t"]), mode, meta["config_hash"])

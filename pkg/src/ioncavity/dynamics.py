"""Rotating-frame Hamiltonian, master-equation evolution and photon output."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import partial
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .atom import LEVELS, Level, Pol, Term, allowed_pairs, dipole_weight, levels_of, zeeman_shift
from .lindblad import LinearModel, dissipator, hamiltonian_superop, regression_sweep, trace_functional
from .operators import OperatorSet, build_operators
from .params import DrivePulse, SchemeConfig

TRACE_TOL = 1e-8
HERMITICITY_TOL = 1e-9
POSITIVITY_TOL = 1e-6


class FrameInconsistency(ValueError):
    pass


class PositivityViolation(RuntimeError):
    pass


def pulse_envelope(t, pulse: DrivePulse):
    """Rabi frequency envelope Omega(t) in rad/us (scalar or array ``t``)."""
    t = np.asarray(t, dtype=float)
    if pulse.shape == "gaussian":
        s = pulse.amplitude_sigma()
        out = pulse.peak_rabi * np.exp(-((t - pulse.center) ** 2) / (2.0 * s * s))
    else:
        inside = np.abs(t - pulse.center) <= 0.5 * pulse.width
        out = np.where(inside, pulse.peak_rabi, 0.0)
    return float(out) if out.ndim == 0 else out


def _scalar_envelope(pulse: DrivePulse):
    if pulse.shape == "gaussian":
        s2 = 2.0 * pulse.amplitude_sigma() ** 2
        c, peak = pulse.center, pulse.peak_rabi
        return lambda t: peak * math.exp(-((t - c) ** 2) / s2)
    half, c, peak = 0.5 * pulse.width, pulse.center, pulse.peak_rabi
    return lambda t: peak if abs(t - c) <= half else 0.0


@dataclass(frozen=True)
class RamanPath:
    intermediate: Level
    drive_q: Pol
    cavity_q: Pol


def raman_path(cfg: SchemeConfig) -> RamanPath:
    """Intermediate P sublevel, drive polarization and emitted cavity mode."""
    p = cfg.params
    amps = p.drive.polarization_amplitudes
    init, target = cfg.initial_state, cfg.target_state
    for up in levels_of(Term.P12):
        dq, cq = up.m - init.m, up.m - target.m
        if abs(dq) > 1 or abs(cq) > 1:
            continue
        dq, cq = Pol(int(dq)), Pol(int(cq))
        if abs(amps.get(dq, 0.0)) > 0 and cq in p.cavity.polarizations:
            return RamanPath(up, dq, cq)
    raise FrameInconsistency(
        f"no drive/cavity Raman path connects {init} to {target} with the configured polarizations"
    )


def frame_detunings(cfg: SchemeConfig) -> tuple[float, float]:
    """(laser, cavity) detunings from the zero-field atomic lines, rad/us.

    The cavity is set on two-photon resonance between the Zeeman-shifted
    initial and target states, plus ``cavity.detuning``.
    """
    p = cfg.params
    path = raman_path(cfg)
    z = partial(zeeman_shift, B=p.B)
    d_laser = p.drive.detuning
    if p.detuning_reference == "shifted":
        d_laser += z(path.intermediate) - z(cfg.initial_state)
    d_cav = d_laser + z(cfg.initial_state) - z(cfg.target_state) + p.cavity.detuning
    return d_laser, d_cav


def level_energies(cfg: SchemeConfig) -> tuple[dict[Level, float], float]:
    """Diagonal frame energies per level and the coefficient of each a^dag a."""
    p = cfg.params
    d_laser, d_cav = frame_detunings(cfg)
    E = {}
    for lvl in LEVELS:
        z = zeeman_shift(lvl, p.B)
        if lvl.term is Term.P12:
            E[lvl] = z - d_laser
        elif lvl.term is Term.D32 and p.scheme == "SD":
            E[lvl] = z - d_laser + d_cav
        else:
            E[lvl] = z
    photon = 0.0 if p.scheme == "SD" else d_cav - d_laser
    return E, photon


def hamiltonian_parts(cfg: SchemeConfig, ops: OperatorSet) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Return ``(H0, H1)`` with ``H(t) = H0 + Omega(t) * H1``."""
    p = cfg.params
    E, photon = level_energies(cfg)
    H0 = sp.csr_matrix((ops.dim, ops.dim), dtype=complex)
    for lvl, e in E.items():
        if e:
            H0 = H0 + e * ops.projector[lvl]
    if photon:
        for q in ops.modes:
            H0 = H0 + photon * ops.number[q]
    for up, lo, q in allowed_pairs(Term.P12, Term.D32):
        if q in ops.a and p.g0:
            s = ops.sigma[(up, lo)]
            term = p.g0 * dipole_weight(up, lo, q) * (ops.a[q].conj().T @ s)
            H0 = H0 + term + term.conj().T

    H1 = sp.csr_matrix((ops.dim, ops.dim), dtype=complex)
    amps = p.drive.polarization_amplitudes
    half = 0.5 if p.drive.rabi_convention == "half" else 1.0
    for up, lo, q in allowed_pairs(Term.P12, p.drive_lower_term):
        amp = complex(amps.get(q, 0.0))
        if amp == 0:
            continue
        raise_op = ops.sigma[(up, lo)].conj().T
        term = half * amp * dipole_weight(up, lo, q) * raise_op
        H1 = H1 + term + term.conj().T
    return H0.tocsr(), H1.tocsr()


def hamiltonian(t: float, cfg: SchemeConfig, ops: OperatorSet) -> sp.csr_matrix:
    H0, H1 = hamiltonian_parts(cfg, ops)
    return (H0 + pulse_envelope(t, cfg.params.drive) * H1).tocsr()


def initial_density(cfg: SchemeConfig, ops: OperatorSet) -> np.ndarray:
    f = cfg.params.prep_fidelity
    others = [lvl for lvl in levels_of(cfg.initial_state.term) if lvl != cfg.initial_state]
    rho = np.zeros((ops.dim, ops.dim), dtype=complex)
    vac = (0,) * len(ops.modes)
    i = ops.index(cfg.initial_state, *vac)
    rho[i, i] = f
    for lvl in others:
        j = ops.index(lvl, *vac)
        rho[j, j] = (1.0 - f) / len(others)
    return rho


def build_model(cfg: SchemeConfig, ops: OperatorSet | None = None) -> tuple[LinearModel, OperatorSet]:
    cfg.validate()
    ops = ops or build_operators(cfg.params, cfg.max_dim)
    H0, H1 = hamiltonian_parts(cfg, ops)
    L0 = (hamiltonian_superop(H0) + dissipator(ops.collapse_ops)).tocsr()
    L1 = hamiltonian_superop(H1)
    return LinearModel(ops.dim, L0, L1, _scalar_envelope(cfg.params.drive)), ops


@dataclass
class Trajectory:
    times: np.ndarray
    rho: np.ndarray
    populations: np.ndarray            # (n, 8) in LEVELS order
    photon_number: dict[Pol, np.ndarray]
    detected_mode: Pol
    flux: np.ndarray                   # outcoupled photons per us in the detected mode
    trace_drift: float
    hermiticity: float
    min_eigenvalue: float
    n_steps: int


def check_states(rho: np.ndarray) -> tuple[float, float, float]:
    """(trace drift, hermiticity residual, min eigenvalue) over a stack of density matrices."""
    tr = np.einsum("kii->k", rho)
    drift = float(np.max(np.abs(tr - 1.0)))
    herm = float(np.max(np.abs(rho - rho.conj().transpose(0, 2, 1))))
    sym = 0.5 * (rho + rho.conj().transpose(0, 2, 1))
    min_eig = float(np.min(np.linalg.eigvalsh(sym)))
    return drift, herm, min_eig


def evolve(cfg: SchemeConfig, ops: OperatorSet | None = None) -> Trajectory:
    model, ops = build_model(cfg, ops)
    rho0 = initial_density(cfg, ops)
    detected = raman_path(cfg).cavity_q
    obs = [trace_functional(ops.projector[lvl], ops.dim) for lvl in LEVELS]
    obs += [trace_functional(ops.number[q], ops.dim) for q in ops.modes]
    res = regression_sweep(model, rho0, cfg.times, rho_observables=obs, rtol=cfg.rtol, atol=cfg.atol)
    return _trajectory(cfg, ops, res.times, res.rho, res.rho_records, detected, res.n_steps)


def _trajectory(cfg, ops, times, rho, records, detected, n_steps) -> Trajectory:
    drift, herm, min_eig = check_states(rho)
    if min_eig < -POSITIVITY_TOL:
        raise PositivityViolation(f"density operator eigenvalue {min_eig:.3g} < -{POSITIVITY_TOL}")
    pops = records[:, : len(LEVELS)].real
    numbers = {q: records[:, len(LEVELS) + k].real for k, q in enumerate(ops.modes)}
    cav = cfg.params.cavity
    flux = 2.0 * cav.kappa * cav.outcoupling_fraction * numbers[detected]
    return Trajectory(times, rho, pops, numbers, detected, flux, drift, herm, min_eig, n_steps)


@dataclass
class PhotonRecord:
    times: np.ndarray
    flux: np.ndarray
    p_emit: float
    final_populations: dict[str, float]
    trajectory: Trajectory

    @property
    def profile(self) -> np.ndarray:
        """Flux normalized to unit area over the window."""
        area = np.trapezoid(self.flux, self.times)
        return self.flux / area if area > 0 else np.zeros_like(self.flux)


def emitted_probability(times, n_detected, cavity) -> float:
    """Outcoupled photon probability: in-window flux plus the cavity's residual decay."""
    n_detected = np.asarray(n_detected, dtype=float)
    in_window = 2.0 * cavity.kappa * np.trapezoid(n_detected, times)
    return float(cavity.outcoupling_fraction * (in_window + n_detected[-1]))


def run_scheme(cfg: SchemeConfig, ops: OperatorSet | None = None) -> PhotonRecord:
    traj = evolve(cfg, ops)
    p_emit = emitted_probability(traj.times, traj.photon_number[traj.detected_mode], cfg.params.cavity)
    final = {lvl.label: float(traj.populations[-1, i]) for i, lvl in enumerate(LEVELS)}
    return PhotonRecord(traj.times, traj.flux, p_emit, final, traj)


def write_trajectory_csv(traj: Trajectory, path: str | Path) -> None:
    header = ["t_us"] + [f"pop_{lvl.label}" for lvl in LEVELS]
    header += [f"n_{q.key}" for q in (Pol.SIGMA_PLUS, Pol.SIGMA_MINUS)] + ["flux_per_us"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k, t in enumerate(traj.times):
            row = [f"{t:.9g}"] + [f"{x:.12g}" for x in traj.populations[k]]
            for q in (Pol.SIGMA_PLUS, Pol.SIGMA_MINUS):
                n = traj.photon_number.get(q)
                row.append(f"{n[k]:.12g}" if n is not None else "0")
            row.append(f"{traj.flux[k]:.12g}")
            w.writerow(row)


def write_profile_csv(times, profile, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_us", "probability_density_per_us"])
        for t, p in zip(times, profile):
            w.writerow([f"{t:.9g}", f"{p:.12g}"])

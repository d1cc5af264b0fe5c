import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from scipy.optimize import curve_fit

from ioncavity.atom import LEVELS, Level, Pol, Term, mhz, zeeman_shift
from ioncavity.dynamics import (
    FrameInconsistency, _scalar_envelope, build_model, evolve, hamiltonian, hamiltonian_parts, level_energies,
    pulse_envelope, run_scheme, write_profile_csv, write_trajectory_csv,
)
from ioncavity.lindblad import LinearModel, hamiltonian_superop, regression_sweep, trace_functional
from ioncavity.operators import build_operators
from ioncavity.params import CavityModeConfig, DrivePulse, dd_paper, sd_paper
from oracles import cg_from_3j, rabi_population

MU_B = 1.399624  # MHz / G


# pulse envelope

def _pulse(**kw):
    base = dict(peak_rabi=mhz(11.0), detuning=0.0,
                polarization_amplitudes={Pol.PI: 1.0 + 0j}, center=1.25, width=0.45)
    base.update(kw)
    return DrivePulse(**base)


@pytest.mark.parametrize("conv", ["intensity_sigma", "amplitude_sigma", "intensity_fwhm"])
def test_pulse_peak(conv):
    p = _pulse(width_convention=conv)
    assert pulse_envelope(1.25, p) == pytest.approx(mhz(11.0), rel=1e-15)


def test_pulse_tail_values():
    # field sigma = width * sqrt(2) by default: amplitude at 5 widths is exp(-25/4)
    p = _pulse()
    for t in (1.25 - 5 * 0.45, 1.25 + 5 * 0.45):
        assert pulse_envelope(t, p) / p.peak_rabi == pytest.approx(math.exp(-6.25), rel=1e-12)
    # intensity-FWHM width gives a field sigma of width / sqrt(4 ln 2)
    q = _pulse(width_convention="intensity_fwhm")
    ratio = pulse_envelope(1.25 + 5 * 0.45, q) / q.peak_rabi
    assert ratio == pytest.approx(math.exp(-25 * 2 * math.log(2)), rel=1e-12)
    assert ratio < 2e-6
    r = _pulse(width_convention="amplitude_sigma")
    assert pulse_envelope(1.25 + 0.45, r) / r.peak_rabi == pytest.approx(math.exp(-0.5), rel=1e-12)


def test_flat_pulse():
    p = _pulse(shape="flat", width=1.0)
    t = np.array([0.0, 0.74, 0.76, 1.25, 1.74, 1.76, 2.5])
    assert list(pulse_envelope(t, p) / p.peak_rabi) == [0, 0, 1, 1, 1, 0, 0]


# Hamiltonian structure

@settings(max_examples=25, deadline=None)
@given(
    B=st.floats(0, 10), det=st.floats(-200, 200), rabi=st.floats(0, 120),
    theta=st.floats(0, math.pi / 2), phase=st.floats(-math.pi, math.pi), scheme=st.sampled_from(["SD", "DD"]),
)
def test_hamiltonian_hermitian(B, det, rabi, theta, phase, scheme):
    make = sd_paper if scheme == "SD" else dd_paper
    amps = ({Pol.PI: math.cos(theta) + 0j, Pol.SIGMA_PLUS: math.sin(theta) * complex(math.cos(phase), math.sin(phase))}
            if scheme == "SD" else
            {Pol.SIGMA_MINUS: math.cos(theta) + 0j, Pol.SIGMA_PLUS: math.sin(theta) * complex(math.cos(phase), math.sin(phase))})
    assume(math.sin(theta) > 1e-6)   # both Raman paths start on the sigma+ drive leg
    cfg = make(**{"params.B": B, "params.drive.detuning": det, "params.drive.peak_rabi": rabi,
                  "params.drive.polarization_amplitudes": amps})
    ops = build_operators(cfg.params)
    H = hamiltonian(1.1, cfg, ops).toarray()
    assert np.max(np.abs(H - H.conj().T)) < 1e-14


def test_couplings_off_is_diagonal_and_zero_on_initial_block():
    cfg = sd_paper(**{"params.g0": 0.0, "params.B": 0.0, "params.drive.detuning": 0.0,
                      "params.drive.peak_rabi": 0.0})
    ops = build_operators(cfg.params)
    H = hamiltonian(1.25, cfg, ops).toarray()
    assert np.count_nonzero(H - np.diag(np.diag(H))) == 0
    for n1 in range(3):
        for n2 in range(3):
            i = ops.index(cfg.initial_state, n1, n2)
            assert H[i, i] == 0.0


def test_lambda_block_matches_hand_built():
    cfg = sd_paper()
    p = cfg.params
    ops = build_operators(p)
    H = hamiltonian(p.drive.center, cfg, ops).toarray()
    S, P, D = Level(Term.S12, -0.5), Level(Term.P12, 0.5), Level(Term.D32, 1.5)
    idx = [ops.index(S, 0, 0), ops.index(P, 0, 0), ops.index(D, 0, 1)]
    block = H[np.ix_(idx, idx)]

    zS = mhz(2.0 * -0.5 * MU_B * p.B)
    zP = mhz(2.0 / 3.0 * 0.5 * MU_B * p.B)
    zD = mhz(0.8 * 1.5 * MU_B * p.B)
    dL = p.drive.detuning
    dC = dL + zS - zD
    w_drive = cg_from_3j(0.5, -0.5, 1, 1, 0.5, 0.5)
    w_cav = cg_from_3j(1.5, 1.5, 1, -1, 0.5, 0.5)
    amp = p.drive.polarization_amplitudes[Pol.SIGMA_PLUS]
    ref = np.array([
        [zS, 0.5 * p.drive.peak_rabi * np.conj(amp) * w_drive, 0],
        [0.5 * p.drive.peak_rabi * amp * w_drive, zP - dL, p.g0 * w_cav],
        [0, p.g0 * w_cav, zD - dL + dC],
    ])
    assert np.max(np.abs(block - ref)) < 1e-9
    # bare two-photon resonance: initial and target-plus-photon states are degenerate
    assert block[0, 0] == pytest.approx(block[2, 2], abs=1e-12)


def test_full_rabi_convention_doubles_drive():
    half = sd_paper()
    full = sd_paper(**{"params.drive.rabi_convention": "full"})
    ops = build_operators(half.params)
    _, H1h = hamiltonian_parts(half, ops)
    _, H1f = hamiltonian_parts(full, ops)
    assert abs(H1f - 2 * H1h).max() < 1e-15


def test_no_raman_path():
    cfg = sd_paper(**{"params.drive.polarization_amplitudes": {Pol.SIGMA_MINUS: 1.0 + 0j}})
    with pytest.raises(FrameInconsistency):
        evolve(cfg)


# closed-system oracles

def _coherent_model(cfg):
    ops = build_operators(cfg.params)
    H0, H1 = hamiltonian_parts(cfg, ops)
    model = LinearModel(ops.dim, hamiltonian_superop(H0), hamiltonian_superop(H1), _scalar_envelope(cfg.params.drive))
    return model, ops


def test_two_level_rabi():
    cfg = sd_paper(**{
        "params.g0": 0.0, "params.B": 0.0, "params.drive.detuning": 0.0,
        "params.drive.peak_rabi": mhz(2.0), "params.drive.shape": "flat", "params.drive.width": 5.0,
        "params.drive.polarization_amplitudes": {Pol.PI: 1.0 + 0j},
        "target_state": Level(Term.D32, 0.5),
    })
    model, ops = _coherent_model(cfg)
    rho0 = np.zeros((ops.dim, ops.dim), complex)
    i = ops.index(cfg.initial_state, 0, 0)
    rho0[i, i] = 1.0
    P = Level(Term.P12, -0.5)
    obs = [trace_functional(ops.projector[P], ops.dim)]
    res = regression_sweep(model, rho0, cfg.times, rho_observables=obs, rtol=1e-11, atol=1e-13)
    w = abs(cg_from_3j(0.5, -0.5, 1, 0, 0.5, -0.5))
    expected = rabi_population(mhz(2.0) * w, cfg.times)
    assert np.max(np.abs(res.rho_records[:, 0].real - expected)) < 1e-6


def test_vacuum_rabi():
    cfg = sd_paper(**{
        "params.B": 0.0, "params.drive.detuning": 0.0, "params.drive.peak_rabi": 0.0,
        "params.cavity": CavityModeConfig(polarizations=(Pol.SIGMA_MINUS,), fock_cutoff=1),
        "n_points": 401,
    })
    model, ops = _coherent_model(cfg)
    P = Level(Term.P12, 0.5)
    rho0 = np.zeros((ops.dim, ops.dim), complex)
    i = ops.index(P, 0)
    rho0[i, i] = 1.0
    obs = [trace_functional(ops.projector[P], ops.dim)]
    res = regression_sweep(model, rho0, cfg.times, rho_observables=obs, rtol=1e-11, atol=1e-13)
    pop = res.rho_records[:, 0].real
    w = cg_from_3j(1.5, 1.5, 1, -1, 0.5, 0.5)
    gw = cfg.params.g0 * abs(w)
    assert np.max(np.abs(pop - np.cos(gw * cfg.times) ** 2)) < 1e-6
    (fit,), _ = curve_fit(lambda t, f: np.cos(f * t) ** 2, cfg.times, pop, p0=[gw * 1.01])
    # population oscillates at 2 g0 |w|
    assert abs(fit / gw - 1.0) < 1e-6


def test_excitation_conserved_without_loss_or_drive():
    cfg = sd_paper(**{"params.drive.peak_rabi": 0.0})
    model, ops = _coherent_model(cfg)
    rho0 = np.zeros((ops.dim, ops.dim), complex)
    for lvl, pop in ((Level(Term.P12, 0.5), 0.7), (Level(Term.P12, -0.5), 0.3)):
        i = ops.index(lvl, 0, 0)
        rho0[i, i] = pop
    obs = [trace_functional(ops.projector[lvl], ops.dim) for lvl in LEVELS if lvl.term is Term.P12]
    obs += [trace_functional(ops.number[q], ops.dim) for q in ops.modes]
    res = regression_sweep(model, rho0, cfg.times, rho_observables=obs)
    total = res.rho_records.real.sum(axis=1)
    assert np.max(np.abs(total - 1.0)) < 1e-8


# open-system checks

def test_dark_state_is_stationary():
    cfg = sd_paper(**{"params.drive.peak_rabi": 0.0, "params.g0": 0.0})
    model, ops = build_model(cfg)
    rho0 = np.zeros((ops.dim, ops.dim), complex)
    i = ops.index(cfg.target_state, 0, 0)
    rho0[i, i] = 1.0
    res = regression_sweep(model, rho0, cfg.times)
    assert np.max(np.abs(res.rho - rho0[None])) < 1e-12


def test_no_coupling_no_photon():
    rec = run_scheme(sd_paper(**{"params.g0": 0.0}))
    assert rec.p_emit == 0.0


@pytest.fixture(scope="module")
def sd_run():
    return run_scheme(sd_paper())


def test_trajectory_invariants(sd_run):
    traj = sd_run.trajectory
    assert traj.trace_drift <= 1e-8
    assert traj.hermiticity <= 1e-9
    assert traj.min_eigenvalue >= -1e-6
    assert np.all(traj.populations >= -1e-9) and np.all(traj.populations <= 1 + 1e-9)
    assert np.allclose(traj.populations.sum(axis=1), 1.0, atol=1e-8)


def test_final_state_reports(sd_run):
    assert sum(sd_run.final_populations.values()) == pytest.approx(1.0, abs=1e-8)
    assert sd_run.final_populations["D32:+3/2"] > 0.0
    assert 0.0 < sd_run.p_emit < 1.0
    assert np.trapezoid(sd_run.profile, sd_run.times) == pytest.approx(1.0, rel=1e-12)


def test_tolerance_convergence(sd_run):
    tight = run_scheme(sd_paper(rtol=5e-9, atol=5e-11))
    assert abs(tight.p_emit / sd_run.p_emit - 1.0) < 1e-4


def test_csv_writers(sd_run, tmp_path):
    write_trajectory_csv(sd_run.trajectory, tmp_path / "traj.csv")
    write_profile_csv(sd_run.times, sd_run.profile, tmp_path / "prof.csv")
    data = np.loadtxt(tmp_path / "prof.csv", delimiter=",", skiprows=1)
    assert np.allclose(data[:, 1], sd_run.profile, rtol=1e-15)
    head = (tmp_path / "traj.csv").read_text().splitlines()[0]
    assert head.startswith("t_us")


def test_energies_follow_frame():
    cfg = dd_paper()
    E, photon = level_energies(cfg)
    assert photon != 0.0
    # DD: initial (D, no photon) degenerate with target plus one cavity photon
    assert E[cfg.initial_state] == pytest.approx(E[cfg.target_state] + photon, abs=1e-12)
    assert E[cfg.initial_state] == zeeman_shift(cfg.initial_state, cfg.params.B)

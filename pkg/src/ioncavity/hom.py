"""Two-photon interference of two identical, phase-randomized sources.

Detector coincidence density for photons meeting at a balanced beam splitter
with polarization mismatch ``phi``:

    p_perp(t1, t2) = G2(t1, t2)/2 + n(t1) n(t2)/2
    p_par(t1, t2)  = p_perp(t1, t2) - cos(phi)^2 |G1(t1, t2)|^2 / 2

Coincidence histograms are functions of the delay ``tau = t2 - t1``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .correlations import CorrelationGrid


class RangeError(ValueError):
    pass


class ZeroDenominator(ZeroDivisionError):
    pass


@dataclass
class CoincidenceDensity:
    times: np.ndarray
    p_par: np.ndarray
    p_perp: np.ndarray
    mismatch_angle: float = 0.0

    @property
    def spacing(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def support(self) -> float:
        return float(self.times[-1] - self.times[0])

    def lag_profiles(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(tau, C_par(tau), C_perp(tau)) sampled on the grid lags."""
        return (_lags(self.times), _diagonal_integrals(self.p_par, self.spacing),
                _diagonal_integrals(self.p_perp, self.spacing))


@dataclass
class CoincidenceHistogram:
    bin_edges: np.ndarray
    counts_par: np.ndarray
    counts_perp: np.ndarray
    err_par: np.ndarray
    err_perp: np.ndarray
    normalization: str = "perp_area_unity"

    @property
    def bin_width(self) -> float:
        return float(self.bin_edges[1] - self.bin_edges[0])

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])


def coincidence_density(grid: CorrelationGrid, phi: float = 0.0) -> CoincidenceDensity:
    if grid.G1 is None or grid.G2 is None:
        raise ValueError("grid needs both G1 and G2")
    n = grid.n_of_t
    p_perp = 0.5 * grid.G2 + 0.5 * np.outer(n, n)
    p_par = p_perp - 0.5 * math.cos(phi) ** 2 * np.abs(grid.G1) ** 2
    return CoincidenceDensity(grid.times.copy(), p_par, p_perp, phi)


def _lags(times: np.ndarray) -> np.ndarray:
    h = times[1] - times[0]
    n = len(times)
    return np.arange(-(n - 1), n) * h


def _diagonal_integrals(p: np.ndarray, h: float) -> np.ndarray:
    """C(tau_k) = int dt p(t, t + tau_k) by the trapezoid rule along each diagonal."""
    n = p.shape[0]
    out = np.empty(2 * n - 1)
    for k in range(-(n - 1), n):
        d = np.diagonal(p, offset=k)
        out[k + n - 1] = h * (d.sum() - 0.5 * (d[0] + d[-1])) if len(d) > 1 else 0.0
    return out


def _cumulative(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.concatenate([[0.0], np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(x))])


def _primitive(x: np.ndarray, y: np.ndarray, cum: np.ndarray, a) -> np.ndarray:
    """Integral of the piecewise-linear interpolant of ``y`` from x[0] to ``a``."""
    a = np.clip(np.asarray(a, dtype=float), x[0], x[-1])
    k = np.clip(np.searchsorted(x, a, side="right") - 1, 0, len(x) - 2)
    u = a - x[k]
    slope = (y[k + 1] - y[k]) / (x[k + 1] - x[k])
    return cum[k] + u * (y[k] + 0.5 * slope * u)


def interval_integral(x, y, a, b):
    """Exact integral of the linear interpolant of (x, y) over [a, b]."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    cum = _cumulative(x, y)
    return _primitive(x, y, cum, b) - _primitive(x, y, cum, a)


def _make_edges(bin_width: float, max_tau: float, align: str) -> np.ndarray:
    if align == "edge":
        k = int(math.floor(max_tau / bin_width + 1e-9))
        return np.arange(-k, k + 1) * bin_width
    if align == "center":
        k = int(math.floor((max_tau - bin_width / 2) / bin_width + 1e-9))
        return (np.arange(-k - 1, k + 1) + 0.5) * bin_width
    raise ValueError("align must be 'edge' or 'center'")


def tau_histogram(
    density: CoincidenceDensity,
    bin_width: float = 0.075,
    max_tau: float | None = None,
    normalization: str = "perp_area_unity",
    align: str = "edge",
) -> CoincidenceHistogram:
    """Bin-averaged C(tau) (per us) on bins of ``bin_width`` covering [-max_tau, max_tau].

    ``align='edge'`` puts a bin edge at tau = 0; ``'center'`` centres a bin on it.
    """
    support = density.support
    max_tau = support if max_tau is None else max_tau
    if max_tau > support + 1e-12:
        raise RangeError(f"range {max_tau} exceeds grid support {support}")
    if bin_width <= density.spacing:
        raise ValueError("bin width must exceed the grid spacing")
    edges = _make_edges(bin_width, max_tau, align)
    tau, c_par, c_perp = density.lag_profiles()
    area_par = np.diff(interval_integral(tau, c_par, tau[0], edges))
    area_perp = np.diff(interval_integral(tau, c_perp, tau[0], edges))
    if normalization == "perp_area_unity":
        total = area_perp.sum()
        if total <= 0:
            raise ZeroDenominator("perpendicular histogram has zero area")
        area_par, area_perp = area_par / total, area_perp / total
    elif normalization != "raw":
        raise ValueError("normalization must be 'perp_area_unity' or 'raw'")
    w = edges[1] - edges[0]
    zeros = np.zeros(len(edges) - 1)
    return CoincidenceHistogram(edges, area_par / w, area_perp / w, zeros, zeros.copy(), normalization)


def _window_areas(obj, T: float) -> tuple[float, float]:
    if isinstance(obj, CoincidenceDensity):
        if T / 2 > obj.support + 1e-12:
            raise RangeError(f"window T={T} exceeds grid support")
        tau, c_par, c_perp = obj.lag_profiles()
        return (float(interval_integral(tau, c_par, -T / 2, T / 2)),
                float(interval_integral(tau, c_perp, -T / 2, T / 2)))
    if isinstance(obj, CoincidenceHistogram):
        lo = np.clip(obj.bin_edges[:-1], -T / 2, T / 2)
        hi = np.clip(obj.bin_edges[1:], -T / 2, T / 2)
        overlap = np.clip(hi - lo, 0.0, None)
        return float(np.sum(obj.counts_par * overlap)), float(np.sum(obj.counts_perp * overlap))
    raise TypeError(f"cannot compute visibility from {type(obj).__name__}")


def visibility(obj, T: float = 5.0) -> float:
    """HOM visibility 1 - int C_par / int C_perp over |tau| <= T/2."""
    if T <= 0:
        raise ValueError("T must be > 0")
    par, perp = _window_areas(obj, T)
    if perp <= 0:
        raise ZeroDenominator("no perpendicular coincidences inside the window")
    return 1.0 - par / perp


def windowed_visibility_curve(
    density: CoincidenceDensity, T_values, rate_normalization: float = 1.0,
) -> list[tuple[float, float, float]]:
    """(T, V(T), coincidence probability with |tau| <= T/2) for ascending ``T_values``."""
    T_values = np.asarray(T_values, dtype=float)
    if np.any(T_values <= 0) or np.any(np.diff(T_values) <= 0):
        raise ValueError("T values must be positive and ascending")
    out = []
    for T in T_values:
        par, perp = _window_areas(density, min(T, 2 * density.support))
        if perp <= 0:
            raise ZeroDenominator(f"no perpendicular coincidences for T={T}")
        out.append((float(T), 1.0 - par / perp, perp * rate_normalization))
    return out


def _trapz_weights(times: np.ndarray) -> np.ndarray:
    h = np.diff(times)
    w = np.zeros_like(times)
    w[:-1] += h / 2
    w[1:] += h / 2
    return w


def hbt_g2_zero(grid: CorrelationGrid) -> float:
    """Pulsed g2(0) = int int G2 dt1 dt2 / (int n dt)^2."""
    if grid.G2 is None:
        raise ValueError("grid has no G2")
    w = _trapz_weights(grid.times)
    den = float(w @ grid.n_of_t) ** 2
    if den <= 0:
        raise ZeroDenominator("no photon in the window")
    return float(w @ grid.G2 @ w) / den


def interference_scaling(density: CoincidenceDensity, phi: float) -> CoincidenceDensity:
    """Same source, different mismatch angle (the interference term scales as cos^2)."""
    c0 = math.cos(density.mismatch_angle) ** 2
    if c0 == 0:
        raise ValueError("cannot rescale a fully distinguishable density")
    interference = (density.p_perp - density.p_par) / c0
    return CoincidenceDensity(density.times, density.p_perp - math.cos(phi) ** 2 * interference,
                              density.p_perp, phi)


@dataclass
class MismatchFit:
    phi: float
    visibility_raw: float
    visibility_corrected: float
    residual: float


def fit_mismatch_angle(measured: CoincidenceHistogram, density: CoincidenceDensity,
                       T: float = 5.0) -> MismatchFit:
    """Least-squares mismatch angle between a measured histogram pair and the model.

    Both histograms are normalized to unit perpendicular area; the parallel
    model is ``C_perp - cos^2(phi) I(tau)`` so the fit is linear in cos^2(phi).
    """
    model = tau_histogram(interference_scaling(density, 0.0), measured.bin_width,
                          float(measured.bin_edges[-1]), align=_alignment(measured))
    if len(model.counts_par) != len(measured.counts_par):
        raise ValueError("measured and simulated binning differ")
    meas_par = measured.counts_par / np.sum(measured.counts_perp * measured.bin_width)
    interference = model.counts_perp - model.counts_par
    target = model.counts_perp - meas_par
    sigma = measured.err_par / np.sum(measured.counts_perp * measured.bin_width)
    wts = 1.0 / np.where(sigma > 0, sigma, np.inf) ** 2 if np.any(sigma > 0) else np.ones_like(target)
    c = float(np.sum(wts * interference * target) / np.sum(wts * interference ** 2))
    c = min(max(c, 0.0), 1.0)
    phi = math.acos(math.sqrt(c))
    v_raw = visibility(measured, T)
    resid = float(np.sum(wts * (target - c * interference) ** 2))
    return MismatchFit(phi, v_raw, v_raw / c if c > 0 else float("nan"), resid)


def _alignment(h: CoincidenceHistogram) -> str:
    return "edge" if np.any(np.isclose(h.bin_edges, 0.0, atol=1e-12)) else "center"


def write_histogram_csv(hist: CoincidenceHistogram, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tau_us", "c_par", "c_perp", "err_par", "err_perp"])
        for row in zip(hist.centers, hist.counts_par, hist.counts_perp, hist.err_par, hist.err_perp):
            w.writerow([f"{x:.12g}" for x in row])


def read_histogram_csv(path: str | Path, normalization: str = "raw") -> CoincidenceHistogram:
    d = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    centers = d[:, 0]
    width = centers[1] - centers[0] if len(centers) > 1 else 1.0
    edges = np.concatenate([centers - width / 2, [centers[-1] + width / 2]])
    return CoincidenceHistogram(edges, d[:, 1], d[:, 2], d[:, 3], d[:, 4], normalization)


def write_curve_csv(curve, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["T_us", "visibility", "coincidence_probability"])
        for T, V, P in curve:
            w.writerow([f"{T:.9g}", f"{V:.12g}", f"{P:.12g}"])

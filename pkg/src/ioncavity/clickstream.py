"""Detector timestamp streams: parsing, folding, coincidence counting and synthesis.

Stream file format (text, one event per line)::

    # ioncavity-events v1
    # cycle_period_us=7.38 sync_divisor=256
    channel,timestamp_ps
    0,0
    1,1234567

``channel`` is a small integer resolved through the channel map (default
sync=0, det1=1, det2=2); ``timestamp_ps`` is a 64-bit integer in picoseconds.
Comment lines and the column header are optional.

A sync pulse marks the start of every ``sync_divisor``-th experimental cycle.
Each cycle opens with a photon-generation window; photons are timestamped by
their phase within the cycle.  Coincidences pair det1 and det2 clicks that
fall in the same cycle: the delay line has already brought the photon of the
previous trial into the window of the current one.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .hom import CoincidenceDensity, CoincidenceHistogram, ZeroDenominator, _window_areas

FORMAT_TAG = "ioncavity-events v1"
DEFAULT_CHANNELS = {"sync": 0, "det1": 1, "det2": 2}
DEFAULT_CYCLE_PERIOD = 7.38     # us
DEFAULT_SYNC_DIVISOR = 256
PS_PER_US = 1_000_000
# 84% one-sided Poisson upper limit for zero observed counts
ZERO_COUNT_UPPER = 1.841


class StreamError(ValueError):
    pass


@dataclass
class EventStream:
    channel: np.ndarray             # int, file order
    timestamp: np.ndarray           # int64 ps, file order
    channel_map: dict[str, int] = field(default_factory=lambda: dict(DEFAULT_CHANNELS))
    cycle_period: float | None = None   # us
    sync_divisor: int = DEFAULT_SYNC_DIVISOR

    def __len__(self) -> int:
        return len(self.timestamp)

    def times(self, name: str) -> np.ndarray:
        """Timestamps (ps) of one named channel, in order."""
        return self.timestamp[self.channel == self.channel_map[name]]

    @property
    def events(self) -> list[tuple[int, int]]:
        return list(zip(self.channel.tolist(), self.timestamp.tolist()))


def _sync_period(sync: np.ndarray, divisor: int) -> float:
    return float(np.median(np.diff(sync))) / divisor / PS_PER_US


def parse_events(source, channel_map: dict[str, int] | None = None, cycle_period: float | None = None,
                 sync_divisor: int | None = None, jitter: float = 1e-3) -> EventStream:
    """Read a stream from a path or an iterable of lines.

    ``cycle_period`` (us) and ``sync_divisor`` come from the arguments, else
    from a ``# cycle_period_us=... sync_divisor=...`` header line; a missing
    period is inferred from the sync channel.  ``jitter`` bounds the relative
    deviation of each sync interval from ``sync_divisor * cycle_period``.
    """
    cmap = dict(channel_map or DEFAULT_CHANNELS)
    known = set(cmap.values())
    lines = Path(source).read_text().splitlines() if isinstance(source, (str, Path)) else source
    chans: list[int] = []
    stamps: list[int] = []
    last: dict[int, int] = {}
    header: dict[str, str] = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if line.startswith("#"):
            header.update(_header_fields(line))
            continue
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        if parts == ["channel", "timestamp_ps"]:
            continue
        if len(parts) != 2:
            raise StreamError(f"malformed record at line {lineno}: {raw!r}")
        try:
            ch, ts = int(parts[0]), int(parts[1])
        except ValueError:
            raise StreamError(f"malformed record at line {lineno}: {raw!r}") from None
        if ts < 0 or ts >= 2 ** 63:
            raise StreamError(f"malformed record at line {lineno}: timestamp out of range")
        if ch not in known:
            raise StreamError(f"unknown channel {ch} at line {lineno}")
        if ts < last.get(ch, -1):
            raise StreamError(f"malformed record at line {lineno}: timestamp decreases on channel {ch}")
        last[ch] = ts
        chans.append(ch)
        stamps.append(ts)
    try:
        if cycle_period is None and "cycle_period_us" in header:
            cycle_period = float(header["cycle_period_us"])
        if sync_divisor is None:
            sync_divisor = int(header.get("sync_divisor", DEFAULT_SYNC_DIVISOR))
    except ValueError:
        raise StreamError(f"malformed header field: {header}") from None
    if sync_divisor < 1 or (cycle_period is not None and cycle_period <= 0):
        raise StreamError("cycle_period and sync_divisor must be positive")
    stream = EventStream(np.asarray(chans, dtype=np.int64), np.asarray(stamps, dtype=np.int64),
                         cmap, cycle_period, sync_divisor)
    sync = stream.times("sync") if "sync" in cmap else np.empty(0, np.int64)
    if len(sync) >= 2:
        inferred = _sync_period(sync, sync_divisor)
        if stream.cycle_period is None:
            stream.cycle_period = inferred
        expected = sync_divisor * stream.cycle_period * PS_PER_US
        dev = np.max(np.abs(np.diff(sync) - expected)) / expected
        if dev > jitter:
            raise StreamError(f"sync interval deviates from {sync_divisor} cycles by {dev:.3g} (> {jitter})")
    return stream


def _header_fields(line: str) -> dict[str, str]:
    out = {}
    for tok in line.lstrip("#").split():
        key, eq, val = tok.partition("=")
        if eq and key in ("cycle_period_us", "sync_divisor"):
            out[key] = val
    return out


def write_events(stream: EventStream, path: str | Path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(f"# {FORMAT_TAG}\n")
        if stream.cycle_period is not None:
            fh.write(f"# cycle_period_us={stream.cycle_period!r} sync_divisor={stream.sync_divisor}\n")
        fh.write("channel,timestamp_ps\n")
        fh.writelines(f"{c},{t}\n" for c, t in zip(stream.channel.tolist(), stream.timestamp.tolist()))


def _phase_reference(stream: EventStream):
    if stream.cycle_period is None:
        raise StreamError("no phase reference: no sync events and no cycle_period")
    sync = stream.times("sync") if "sync" in stream.channel_map else np.empty(0, np.int64)
    return sync, stream.cycle_period * PS_PER_US


def cycle_phase(stream: EventStream, t_ps: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(global cycle index, phase within the cycle in us) for timestamps ``t_ps``."""
    sync, period = _phase_reference(stream)
    t_ps = np.asarray(t_ps, dtype=np.int64)
    if len(sync):
        block = np.clip(np.searchsorted(sync, t_ps, side="right") - 1, 0, None)
        dt = (t_ps - sync[block]).astype(np.float64)
        k = np.floor(dt / period)
        cycle = block * stream.sync_divisor + k.astype(np.int64)
    else:
        dt = t_ps.astype(np.float64)
        k = np.floor(dt / period)
        cycle = k.astype(np.int64)
    return cycle, (dt - k * period) / PS_PER_US


@dataclass
class FoldedProfile:
    bin_edges: np.ndarray           # us; the last bin is truncated at the fold range
    density: np.ndarray             # per us, unit area
    counts: np.ndarray
    errors: np.ndarray              # Poisson, same units as density

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])

    def write_csv(self, path: str | Path) -> None:
        from .dynamics import write_profile_csv
        write_profile_csv(self.centers, self.density, path)


def fold_profile(stream: EventStream, bin: float = 0.020, window: tuple[float, float] | None = None,
                 channels=("det1", "det2")) -> FoldedProfile:
    """Histogram of detection phase modulo the cycle, normalized to unit area.

    ``window`` restricts the fold range (default: the whole cycle).  When the
    bin does not divide the range the last bin is truncated at the range end.
    """
    if bin <= 0:
        raise ValueError("bin must be > 0")
    _, period_ps = _phase_reference(stream)
    lo, hi = window if window is not None else (0.0, period_ps / PS_PER_US)
    t = np.concatenate([stream.times(c) for c in channels]) if channels else np.empty(0, np.int64)
    _, phase = cycle_phase(stream, t)
    n_full = int(math.floor((hi - lo) / bin + 1e-9))
    edges = lo + np.arange(n_full + 1) * bin
    if edges[-1] < hi - 1e-12:
        edges = np.append(edges, hi)
    counts, _ = np.histogram(phase, bins=edges)
    widths = np.diff(edges)
    total = counts.sum()
    if total == 0:
        zeros = np.zeros(len(widths))
        return FoldedProfile(edges, zeros, counts, zeros.copy())
    return FoldedProfile(edges, counts / (total * widths), counts, np.sqrt(counts) / (total * widths))


@dataclass
class CountHistogram:
    bin_edges: np.ndarray           # us, one edge at tau = 0
    counts: np.ndarray              # int
    n_pairs: int

    @property
    def errors(self) -> np.ndarray:
        return np.sqrt(self.counts)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])


def _same_cycle_pairs(c1: np.ndarray, c2: np.ndarray, offset: int = 0):
    """Index pairs (a, b) with c2[b] == c1[a] + offset; both inputs sorted."""
    target = c1 + offset
    lo = np.searchsorted(c2, target, side="left")
    hi = np.searchsorted(c2, target, side="right")
    n = hi - lo
    total = int(n.sum())
    a = np.repeat(np.arange(len(c1)), n)
    start = np.repeat(lo - np.concatenate([[0], np.cumsum(n)[:-1]]), n)
    b = start + np.arange(total)
    return a, b


def cross_correlate(stream: EventStream, bin: float = 0.075, max_tau: float = 2.5,
                    cycle_offset: int = 0) -> CountHistogram:
    """Counts of t_det2 - t_det1 over same-cycle pairs with |tau| <= max_tau.

    Bins are left-closed with an edge at tau = 0.  ``cycle_offset`` pairs
    det1 in cycle k with det2 in cycle k + offset (side peaks for HBT).
    """
    if bin <= 0 or max_tau <= 0:
        raise ValueError("bin and max_tau must be > 0")
    t1, t2 = stream.times("det1"), stream.times("det2")
    bin_ps = int(round(bin * PS_PER_US))
    k = int(math.ceil(max_tau / bin - 1e-9))
    edges = np.arange(-k, k + 1) * bin
    counts = np.zeros(2 * k, dtype=np.int64)
    if len(t1) == 0 or len(t2) == 0:
        return CountHistogram(edges, counts, 0)
    c1, _ = cycle_phase(stream, t1)
    c2, _ = cycle_phase(stream, t2)
    a, b = _same_cycle_pairs(c1, c2, cycle_offset)
    period_ps = int(round(stream.cycle_period * PS_PER_US))
    tau = t2[b] - t1[a] - cycle_offset * period_ps
    keep = np.abs(tau) <= int(round(max_tau * PS_PER_US))
    idx = np.floor_divide(tau[keep], bin_ps) + k
    idx = idx[(idx >= 0) & (idx < 2 * k)]
    np.add.at(counts, idx, 1)
    return CountHistogram(edges, counts, int(len(idx)))


def combine(par: CountHistogram, perp: CountHistogram) -> CoincidenceHistogram:
    """Pair two count histograms into the hom module's histogram type (raw counts)."""
    if len(par.bin_edges) != len(perp.bin_edges) or not np.allclose(par.bin_edges, perp.bin_edges):
        raise ValueError("inconsistent binning")
    return CoincidenceHistogram(par.bin_edges, par.counts.astype(float), perp.counts.astype(float),
                                par.errors, perp.errors, "raw")


def window_counts(hist: CountHistogram, T: float) -> float:
    """Counts with |tau| <= T/2; partially covered bins contribute pro rata."""
    lo = np.clip(hist.bin_edges[:-1], -T / 2, T / 2)
    hi = np.clip(hist.bin_edges[1:], -T / 2, T / 2)
    frac = np.clip(hi - lo, 0.0, None) / np.diff(hist.bin_edges)
    return float(np.sum(hist.counts * frac))


def data_visibility(par: CountHistogram, perp: CountHistogram, T: float = 5.0,
                    norm_par: float = 1.0, norm_perp: float = 1.0) -> tuple[float, float]:
    """Visibility and its Poisson standard error from parallel and perpendicular counts.

    ``norm_par`` / ``norm_perp`` rescale datasets of unequal size (e.g. trial counts).
    """
    if len(par.bin_edges) != len(perp.bin_edges) or not np.allclose(par.bin_edges, perp.bin_edges):
        raise ValueError("inconsistent binning")
    n_par, n_perp = window_counts(par, T), window_counts(perp, T)
    if n_perp <= 0:
        raise ZeroDenominator("no perpendicular coincidences inside the window")
    r = (n_par / norm_par) / (n_perp / norm_perp)
    # var(r)/r^2 = 1/n_par + 1/n_perp, written to stay finite at n_par = 0
    sigma = math.sqrt(n_par / n_perp ** 2 + n_par ** 2 / n_perp ** 3) * norm_perp / norm_par
    return 1.0 - r, sigma


@dataclass
class HbtResult:
    g2_zero: float
    error: float
    upper_bound: bool           # error is a one-sided bound (zero central counts)
    central: int
    side_mean: float


def hbt_g2(stream: EventStream, n_side: int = 10, max_tau: float = 2.5) -> HbtResult:
    """Pulsed g2(0): same-cycle coincidences over the mean of ``n_side`` neighbouring-cycle peaks on each side."""
    t1, t2 = stream.times("det1"), stream.times("det2")
    central = _cycle_pair_count(stream, t1, t2, 0, max_tau)
    side = [_cycle_pair_count(stream, t1, t2, k, max_tau) for k in range(-n_side, n_side + 1) if k]
    mean = float(np.mean(side))
    if mean <= 0:
        raise ZeroDenominator("no side-peak coincidences")
    if central == 0:
        return HbtResult(0.0, ZERO_COUNT_UPPER / mean, True, 0, mean)
    g = central / mean
    err = g * math.sqrt(1.0 / central + 1.0 / (mean * len(side)))
    return HbtResult(g, err, False, central, mean)


def _cycle_pair_count(stream, t1, t2, offset, max_tau) -> int:
    if len(t1) == 0 or len(t2) == 0:
        return 0
    c1, _ = cycle_phase(stream, t1)
    c2, _ = cycle_phase(stream, t2)
    a, b = _same_cycle_pairs(c1, c2, offset)
    period_ps = int(round(stream.cycle_period * PS_PER_US))
    tau = t2[b] - t1[a] - offset * period_ps
    return int(np.count_nonzero(np.abs(tau) <= int(round(max_tau * PS_PER_US))))


# Synthesis

def _sample_linear(x: np.ndarray, y: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Inverse-transform samples from the piecewise-linear density through (x, y)."""
    mass = 0.5 * (y[1:] + y[:-1]) * np.diff(x)
    cdf = np.concatenate([[0.0], np.cumsum(mass)])
    cell = np.clip(np.searchsorted(cdf, u * cdf[-1], side="right") - 1, 0, len(mass) - 1)
    y0, y1, h = y[cell], y[cell + 1], x[cell + 1] - x[cell]
    # within a cell the density is linear: solve (y0 s + (y1-y0) s^2 / 2) = v (y0 + y1) / 2
    a = 0.5 * (y1 - y0)
    c = v * 0.5 * (y0 + y1)
    with np.errstate(invalid="ignore", divide="ignore"):
        root = np.where(np.abs(a) > 1e-14 * np.maximum(y0 + y1, 1e-300),
                        (-y0 + np.sqrt(np.maximum(y0 * y0 + 4 * a * c, 0.0))) / (2 * a),
                        v)
    return x[cell] + h * np.clip(root, 0.0, 1.0)


def _sample_grid2d(times: np.ndarray, p: np.ndarray, rng, n: int) -> tuple[np.ndarray, np.ndarray]:
    cells = 0.25 * (p[:-1, :-1] + p[1:, :-1] + p[:-1, 1:] + p[1:, 1:])
    flat = cells.ravel()
    cdf = np.cumsum(flat)
    pick = np.clip(np.searchsorted(cdf, rng.random(n) * cdf[-1], side="right"), 0, len(flat) - 1)
    i, j = np.divmod(pick, cells.shape[1])
    h = np.diff(times)
    return times[i] + h[i] * rng.random(n), times[j] + h[j] * rng.random(n)


def _to_ps(t_us: np.ndarray) -> np.ndarray:
    return np.rint(np.asarray(t_us) * PS_PER_US).astype(np.int64)


def synth_clicks(
    source,
    n_events: int,
    background_rate: float = 0.0,
    efficiency: float = 1.0,
    seed: int = 0,
    cycle_period: float = DEFAULT_CYCLE_PERIOD,
    sync_divisor: int = DEFAULT_SYNC_DIVISOR,
    polarization: str = "par",
    pair_probability: float | None = None,
) -> EventStream:
    """Synthetic detector stream, one trial per cycle, deterministic for fixed ``seed``.

    ``source`` is either ``(times, flux)`` for single photons (split 50:50
    over the two detectors) or a :class:`CoincidenceDensity` for two-photon
    trials.  In the latter case each trial yields a coincidence with
    probability ``pair_probability`` (default: half the ratio of the chosen
    polarization's coincidence mass to the perpendicular one, the
    distinguishable-photon reference), with detection times drawn from the
    density; otherwise one click at a time drawn from the marginal.
    ``background_rate`` is per detector, per us.
    """
    if n_events < 0:
        raise ValueError("n_events must be >= 0")
    if not 0.0 <= efficiency <= 1.0:
        raise ValueError("efficiency must lie in [0, 1]")
    if background_rate < 0:
        raise ValueError("background_rate must be >= 0")
    rng = np.random.default_rng(seed)
    period_ps = int(round(cycle_period * PS_PER_US))
    base = np.arange(n_events, dtype=np.int64) * period_ps
    ch_list, ts_list = [], []

    if isinstance(source, CoincidenceDensity):
        if polarization not in ("par", "perp"):
            raise ValueError("polarization must be 'par' or 'perp'")
        p = source.p_par if polarization == "par" else source.p_perp
        if np.min(p) < -1e-12 or np.min(source.p_perp) < -1e-12:
            raise ValueError("invalid density: negative mass")
        p = np.clip(p, 0.0, None)
        if pair_probability is None:
            full = 2 * source.support
            par, perp = _window_areas(CoincidenceDensity(source.times, p, source.p_perp), full)
            pair_probability = 0.5 * par / perp
        if not 0.0 <= pair_probability <= 1.0:
            raise ValueError("pair_probability must lie in [0, 1]")
        is_pair = rng.random(n_events) < pair_probability
        t1, t2 = _sample_grid2d(source.times, p, rng, n_events)
        keep1 = rng.random(n_events) < efficiency
        keep2 = rng.random(n_events) < efficiency
        # unpaired trials: both photons leave the same port, one click
        marg = np.clip(source.p_perp, 0.0, None).sum(axis=1)
        ts = _sample_linear(source.times, marg, rng.random(n_events), rng.random(n_events))
        port = rng.random(n_events) < 0.5
        single_ok = rng.random(n_events) < 1.0 - (1.0 - efficiency) ** 2
        m1 = is_pair & keep1
        m2 = is_pair & keep2
        ms = ~is_pair & single_ok
        ch_list += [np.full(m1.sum(), 1), np.full(m2.sum(), 2), np.where(port[ms], 1, 2)]
        ts_list += [base[m1] + _to_ps(t1[m1]), base[m2] + _to_ps(t2[m2]), base[ms] + _to_ps(ts[ms])]
    else:
        times, flux = (np.asarray(a, dtype=float) for a in source)
        if np.min(flux) < 0:
            raise ValueError("invalid density: negative mass")
        if np.trapezoid(flux, times) <= 0:
            raise ValueError("invalid density: zero mass")
        t = _sample_linear(times, flux, rng.random(n_events), rng.random(n_events))
        det = rng.random(n_events) < 0.5
        kept = rng.random(n_events) < efficiency
        ch_list.append(np.where(det[kept], 1, 2))
        ts_list.append(base[kept] + _to_ps(t[kept]))

    span_ps = max(n_events, 1) * period_ps
    for ch in (1, 2):
        nb = rng.poisson(background_rate * span_ps / PS_PER_US)
        ch_list.append(np.full(nb, ch))
        ts_list.append(rng.integers(0, span_ps, nb, dtype=np.int64))
    n_sync = (max(n_events, 1) - 1) // sync_divisor + 1
    ch_list.append(np.zeros(n_sync, dtype=np.int64))
    ts_list.append(np.arange(n_sync, dtype=np.int64) * sync_divisor * period_ps)

    ch = np.concatenate(ch_list).astype(np.int64)
    ts = np.concatenate(ts_list).astype(np.int64)
    order = np.lexsort((ch, ts))
    return EventStream(ch[order], ts[order], dict(DEFAULT_CHANNELS), cycle_period, sync_divisor)

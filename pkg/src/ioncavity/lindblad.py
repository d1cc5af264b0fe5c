"""Sparse Lindblad superoperators and a batched regression propagator.

Vectorization is row-major, ``vec(rho) = rho.ravel()``, so that
``vec(A rho B) = kron(A, B.T) @ vec(rho)``.

The generator is ``L(t) = L0 + f(t) * L1`` with a real scalar envelope ``f``.
Propagation happens only on the subspace of matrix elements that the
generator can reach from the initial support; that subspace is closed under
``L`` so the restriction is exact.
"""
from __future__ import annotations

import gc
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.integrate import DOP853


class IntegratorFailure(RuntimeError):
    pass


def vec(rho: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(rho).ravel()


def unvec(v: np.ndarray, dim: int) -> np.ndarray:
    return v.reshape(dim, dim)


def sandwich(A, B) -> sp.csr_matrix:
    """Superoperator of ``rho -> A rho B``."""
    return sp.kron(sp.csr_matrix(A), sp.csr_matrix(B).T, format="csr")


def hamiltonian_superop(H) -> sp.csr_matrix:
    H = sp.csr_matrix(H)
    eye = sp.identity(H.shape[0], format="csr", dtype=complex)
    return (-1j * (sp.kron(H, eye) - sp.kron(eye, H.T))).tocsr()


def dissipator(c_ops: Sequence) -> sp.csr_matrix:
    if not c_ops:
        raise ValueError("need at least one collapse operator")
    dim = c_ops[0].shape[0]
    eye = sp.identity(dim, format="csr", dtype=complex)
    out = sp.csr_matrix((dim * dim, dim * dim), dtype=complex)
    for L in c_ops:
        L = sp.csr_matrix(L, dtype=complex)
        LdL = (L.conj().T @ L).tocsr()
        out = out + sp.kron(L, L.conj()) - 0.5 * sp.kron(LdL, eye) - 0.5 * sp.kron(eye, LdL.T)
    return out.tocsr()


def trace_functional(X, dim: int) -> np.ndarray:
    """Row vector ``w`` with ``w @ vec(chi) == Tr[X chi]``."""
    X = sp.csr_matrix(X) if sp.issparse(X) else np.asarray(X)
    dense = X.toarray() if sp.issparse(X) else X
    return np.ascontiguousarray(dense.T).ravel().astype(complex)


def reachable(generators: Sequence[sp.spmatrix], seed: np.ndarray) -> np.ndarray:
    """Sorted indices reachable from boolean ``seed`` under the sparsity of ``generators``."""
    pattern = None
    for G in generators:
        P = (abs(sp.csr_matrix(G)) > 0).astype(np.int8)
        pattern = P if pattern is None else (pattern + P)
    pattern = (pattern > 0).astype(np.int8).tocsr()
    mask = np.asarray(seed, dtype=bool).copy()
    frontier = mask.copy()
    while frontier.any():
        hit = np.asarray(pattern[:, frontier].sum(axis=1)).ravel() > 0
        frontier = hit & ~mask
        mask |= hit
    return np.flatnonzero(mask)


@dataclass
class LinearModel:
    """``d/dt v = (L0 + f(t) L1) v`` on vectorized operators of dimension ``dim``."""

    dim: int
    L0: sp.csr_matrix
    L1: sp.csr_matrix
    envelope: Callable[[float], float]

    def closure(self, seed: np.ndarray) -> np.ndarray:
        return reachable([self.L0, self.L1], seed)

    def restrict(self, idx: np.ndarray) -> tuple[sp.csr_matrix, sp.csr_matrix]:
        return (self.L0[idx][:, idx].tocsr(), self.L1[idx][:, idx].tocsr())


@dataclass
class _Block:
    L0: sp.csr_matrix
    L1: sp.csr_matrix
    idx: np.ndarray
    Y: np.ndarray  # (len(idx), n_columns)

    @property
    def size(self) -> int:
        return self.Y.size


@dataclass
class SweepResult:
    times: np.ndarray
    rho: np.ndarray                 # (n, dim, dim)
    records: list[np.ndarray]       # per source: (n, n), record[i, j] for j >= i, NaN below
    rho_records: np.ndarray         # (n, n_rho_observables)
    n_steps: int


def regression_sweep(
    model: LinearModel,
    rho0: np.ndarray,
    times: np.ndarray,
    sources: Sequence[tuple[sp.spmatrix, np.ndarray]] = (),
    rho_observables: Sequence[np.ndarray] = (),
    rtol: float = 1e-8,
    atol: float = 1e-10,
) -> SweepResult:
    """Propagate rho over ``times`` and, for each source ``(S, w)``, the
    regression columns ``chi_i = S vec(rho(t_i))`` from ``t_i`` onward,
    recording ``w @ chi_i(t_j)`` for all ``j >= i``.

    All columns share one adaptive DOP853 integration so the step sequence is
    set by the stiffest column.
    """
    times = np.asarray(times, dtype=float)
    n = len(times)
    if n < 2 or np.any(np.diff(times) <= 0):
        raise ValueError("times must be strictly increasing with at least two points")
    d = model.dim
    v0 = vec(np.asarray(rho0, dtype=complex))
    # a NaN step-size estimate would stall the step controller indefinitely
    for M in (model.L0, model.L1):
        if not np.isfinite(sp.csr_matrix(M).data).all():
            raise IntegratorFailure("generator has non-finite entries")
    if not np.isfinite(v0).all():
        raise IntegratorFailure("initial state has non-finite entries")

    idx_rho = model.closure(np.abs(v0) > 0)
    blocks = [_Block(*model.restrict(idx_rho), idx_rho, v0[idx_rho][:, None].copy())]
    src_maps = []
    for S, w in sources:
        S = sp.csr_matrix(S)
        seed = np.asarray(abs(S[:, idx_rho]).sum(axis=1)).ravel() > 0
        idx = model.closure(seed)
        L0r, L1r = model.restrict(idx)
        blocks.append(_Block(L0r, L1r, idx, np.zeros((len(idx), 0), dtype=complex)))
        src_maps.append((S[idx][:, idx_rho].tocsr(), np.asarray(w)[idx]))

    rho_obs = [np.asarray(w)[idx_rho] for w in rho_observables]
    rho_samples = np.zeros((n, d, d), dtype=complex)
    rho_records = np.zeros((n, len(rho_obs)), dtype=complex)
    records = [np.full((n, n), np.nan + 0j) for _ in sources]

    h = None
    n_steps = 0
    for k in range(n):
        rvec = blocks[0].Y[:, 0]
        full = np.zeros(d * d, dtype=complex)
        full[idx_rho] = rvec
        rho_samples[k] = full.reshape(d, d)
        for m, w in enumerate(rho_obs):
            rho_records[k, m] = w @ rvec
        for s, (Smap, w) in enumerate(src_maps):
            blk = blocks[s + 1]
            blk.Y = np.concatenate([blk.Y, (Smap @ rvec)[:, None]], axis=1)
            records[s][: blk.Y.shape[1], k] = w @ blk.Y
        if k == n - 1:
            break
        h, steps = _advance(blocks, model.envelope, times[k], times[k + 1], rtol, atol, h)
        n_steps += steps
    return SweepResult(times, rho_samples, records, rho_records, n_steps)


def _advance(blocks, envelope, t0, t1, rtol, atol, h):
    shapes = [b.Y.shape for b in blocks]
    sizes = [b.Y.size for b in blocks]
    offsets = np.cumsum([0] + sizes)

    def rhs(t, y):
        f = envelope(t)
        if not math.isfinite(f):
            raise IntegratorFailure(f"non-finite envelope at t={t:.6g}")
        out = np.empty_like(y)
        for b, shp, lo, hi in zip(blocks, shapes, offsets[:-1], offsets[1:]):
            Y = y[lo:hi].reshape(shp)
            dY = b.L0 @ Y
            if f != 0.0:
                dY += f * (b.L1 @ Y)
            out[lo:hi] = dY.ravel()
        return out

    y0 = np.concatenate([b.Y.ravel() for b in blocks])
    kwargs = {"rtol": rtol, "atol": atol}
    if h is not None:
        kwargs["first_step"] = min(h, t1 - t0)
    solver = DOP853(rhs, t0, y0, t1, **kwargs)
    steps = 0
    last_h = h
    while solver.status == "running":
        msg = solver.step()
        steps += 1
        if solver.status == "failed":
            raise IntegratorFailure(f"integrator failure at t={solver.t:.6g}: {msg}")
        # the last step is clipped to t1; carry the controller's proposal instead
        if solver.status == "running" or last_h is None:
            last_h = getattr(solver, "h_abs", None) or solver.step_size
    for b, shp, lo, hi in zip(blocks, shapes, offsets[:-1], offsets[1:]):
        b.Y = solver.y[lo:hi].reshape(shp).copy()
    # the solver's fun wrapper closes over the solver itself; without an explicit
    # collection its stage buffers pile up across intervals until the cyclic GC runs
    del solver, rhs
    gc.collect()
    return last_h, steps

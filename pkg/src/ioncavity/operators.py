"""Operators on the composite ion (x) cavity space.

Basis order: ion level slowest (``atom.LEVELS`` order), then one Fock factor
per cavity mode in ``cavity.polarizations`` order. Index of
``(level, n_1, ..., n_k)`` is ``level_idx * prod(c+1) + mixed-radix(n)``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .atom import LEVEL_INDEX, LEVELS, Level, Pol, Term, allowed_pairs, dipole_weight
from .params import SystemParams


class DimensionOverflow(RuntimeError):
    pass


@dataclass(frozen=True)
class OperatorSet:
    dim: int
    modes: tuple[Pol, ...]
    fock_cutoff: int
    sigma: dict[tuple[Level, Level], sp.csr_matrix]
    a: dict[Pol, sp.csr_matrix]
    number: dict[Pol, sp.csr_matrix]
    projector: dict[Level, sp.csr_matrix]
    collapse_ops: tuple[sp.csr_matrix, ...]
    collapse_labels: tuple[str, ...]

    @property
    def fock_dim(self) -> int:
        return (self.fock_cutoff + 1) ** len(self.modes)

    def index(self, level: Level, *photons: int) -> int:
        return basis_index(level, photons, self.fock_cutoff, len(self.modes))

    def label(self, idx: int) -> tuple[Level, tuple[int, ...]]:
        return basis_label(idx, self.fock_cutoff, len(self.modes))


def basis_index(level: Level, photons, cutoff: int, n_modes: int) -> int:
    if len(photons) != n_modes:
        raise ValueError(f"expected {n_modes} photon numbers")
    idx = 0
    for n in photons:
        if not 0 <= n <= cutoff:
            raise ValueError(f"photon number {n} outside [0, {cutoff}]")
        idx = idx * (cutoff + 1) + n
    return LEVEL_INDEX[level] * (cutoff + 1) ** n_modes + idx


def basis_label(idx: int, cutoff: int, n_modes: int) -> tuple[Level, tuple[int, ...]]:
    fock = (cutoff + 1) ** n_modes
    lvl, rest = divmod(idx, fock)
    photons = []
    for _ in range(n_modes):
        rest, n = divmod(rest, cutoff + 1)
        photons.append(n)
    return LEVELS[lvl], tuple(reversed(photons))


def _destroy(cutoff: int) -> sp.csr_matrix:
    return sp.diags(np.sqrt(np.arange(1, cutoff + 1, dtype=float)), 1, format="csr")


def _kron_all(mats) -> sp.csr_matrix:
    out = mats[0]
    for m in mats[1:]:
        out = sp.kron(out, m, format="csr")
    return sp.csr_matrix(out, dtype=complex)


def _ket_bra(i: int, j: int, n: int) -> sp.csr_matrix:
    return sp.csr_matrix(([1.0], ([i], [j])), shape=(n, n))


def build_operators(params: SystemParams, max_dim: int = 4096) -> OperatorSet:
    cav = params.cavity
    modes = tuple(cav.polarizations)
    c = cav.fock_cutoff
    n_lvl = len(LEVELS)
    dim = n_lvl * (c + 1) ** len(modes)
    if dim > max_dim:
        raise DimensionOverflow(f"Hilbert dimension {dim} exceeds bound {max_dim}")

    eye_f = sp.identity(c + 1, format="csr")
    eye_ion = sp.identity(n_lvl, format="csr")
    eye_fock = sp.identity((c + 1) ** len(modes), format="csr")

    a = {}
    for k, q in enumerate(modes):
        factors = [eye_ion] + [(_destroy(c) if kk == k else eye_f) for kk in range(len(modes))]
        a[q] = _kron_all(factors)
    number = {q: (a[q].conj().T @ a[q]).tocsr() for q in modes}

    sigma = {}
    for up, lo in itertools.product(LEVELS, LEVELS):
        if (up.term, lo.term) in {(Term.P12, Term.S12), (Term.P12, Term.D32)}:
            op = _ket_bra(LEVEL_INDEX[lo], LEVEL_INDEX[up], n_lvl)
            sigma[(up, lo)] = _kron_all([op, eye_fock])
    projector = {
        lvl: _kron_all([_ket_bra(i, i, n_lvl), eye_fock]) for i, lvl in enumerate(LEVELS)
    }

    c_ops, labels = [], []
    for lower, rate in ((Term.S12, params.gamma_SP), (Term.D32, params.gamma_DP)):
        for up, lo, q in allowed_pairs(Term.P12, lower):
            w = dipole_weight(up, lo, q)
            c_ops.append((np.sqrt(rate) * w * sigma[(up, lo)]).tocsr())
            labels.append(f"decay {up}->{lo}")
    for q in modes:
        c_ops.append((np.sqrt(2.0 * cav.kappa) * a[q]).tocsr())
        labels.append(f"cavity {q.key}")

    return OperatorSet(
        dim=dim,
        modes=modes,
        fock_cutoff=c,
        sigma=sigma,
        a=a,
        number=number,
        projector=projector,
        collapse_ops=tuple(c_ops),
        collapse_labels=tuple(labels),
    )


def dump_coo(matrix, path: str | Path) -> None:
    """Write a matrix as ``row col re im`` lines (nonzeros only)."""
    m = sp.coo_matrix(matrix)
    with open(path, "w") as fh:
        fh.write("# row col re im\n")
        for r, cidx, v in zip(m.row, m.col, m.data):
            fh.write(f"{r} {cidx} {v.real:.17g} {v.imag:.17g}\n")


def load_coo(path: str | Path, dim: int) -> sp.csr_matrix:
    data = np.loadtxt(path, comments="#", ndmin=2)
    if data.size == 0:
        return sp.csr_matrix((dim, dim), dtype=complex)
    rows, cols = data[:, 0].astype(int), data[:, 1].astype(int)
    vals = data[:, 2] + 1j * data[:, 3]
    return sp.csr_matrix((vals, (rows, cols)), shape=(dim, dim))

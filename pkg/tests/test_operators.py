import numpy as np
import pytest
from hypothesis import given, strategies as st

from ioncavity.atom import LEVELS, Pol, Term, levels_of
from ioncavity.operators import (
    DimensionOverflow, basis_index, basis_label, build_operators, dump_coo, load_coo,
)
from ioncavity.params import CavityModeConfig, sd_paper


@pytest.fixture(scope="module")
def params():
    return sd_paper().params


@pytest.fixture(scope="module")
def ops(params):
    return build_operators(params)


def test_dimension(ops):
    assert ops.dim == 72
    assert ops.modes == (Pol.SIGMA_PLUS, Pol.SIGMA_MINUS)


def test_dimension_overflow(params):
    from dataclasses import replace
    big = replace(params, cavity=replace(params.cavity, fock_cutoff=30))
    with pytest.raises(DimensionOverflow):
        build_operators(big)
    with pytest.raises(DimensionOverflow):
        build_operators(params, max_dim=71)


@given(st.integers(0, 71))
def test_basis_roundtrip(idx):
    lvl, n = basis_label(idx, 2, 2)
    assert basis_index(lvl, n, 2, 2) == idx


def test_basis_order(ops):
    assert ops.index(LEVELS[0], 0, 0) == 0
    assert ops.index(LEVELS[0], 0, 1) == 1          # sigma_minus Fock factor fastest
    assert ops.index(LEVELS[0], 1, 0) == 3
    assert ops.index(LEVELS[1], 0, 0) == 9
    assert ops.index(LEVELS[-1], 2, 2) == 71


def test_sparsity(ops):
    fock = 9
    for s in ops.sigma.values():
        assert s.nnz == fock
        proj = (s.conj().T @ s).toarray()
        assert np.allclose(proj @ proj, proj)
    for q in ops.modes:
        assert ops.a[q].nnz == ops.dim * 2 // 3


def test_commutator(ops):
    for q in ops.modes:
        a = ops.a[q].toarray()
        comm = a @ a.conj().T - a.conj().T @ a
        for idx in range(ops.dim):
            lvl, n = ops.label(idx)
            k = ops.modes.index(q)
            if n[k] < ops.fock_cutoff:
                assert comm[idx, idx] == pytest.approx(1.0, abs=1e-14)


def test_decay_sum_rule(ops, params):
    total = sum((c.conj().T @ c) for c in ops.collapse_ops[:-2]).toarray()
    for lvl in levels_of(Term.P12):
        for n1 in range(3):
            for n2 in range(3):
                i = ops.index(lvl, n1, n2)
                assert total[i, i].real == pytest.approx(params.gamma_SP + params.gamma_DP, rel=1e-12)


def test_collapse_nilpotent(ops):
    for c in ops.collapse_ops:
        m = c.toarray()
        power = np.linalg.matrix_power(m, 3)
        assert np.max(np.abs(power)) == 0.0


def test_collapse_count(ops):
    # P->S: 4 Zeeman channels; P->D: 6; one per cavity mode
    assert len(ops.collapse_ops) == 4 + 6 + 2


def test_single_mode(params):
    from dataclasses import replace
    p = replace(params, cavity=CavityModeConfig(polarizations=(Pol.SIGMA_MINUS,), fock_cutoff=1))
    o = build_operators(p)
    assert o.dim == 16


def test_coo_roundtrip(ops, tmp_path):
    m = ops.a[Pol.SIGMA_MINUS] + 0.5j * ops.sigma[(LEVELS[3], LEVELS[7])]
    dump_coo(m, tmp_path / "m.txt")
    back = load_coo(tmp_path / "m.txt", ops.dim)
    assert abs(back - m).max() == 0.0

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from upccd.errors import ContractError, ConvergenceError, SizeLimitError
from upccd.exactref import SectorSpace, build_sector_hamiltonian
from upccd.integrals import HubbardSpec, IntegralSet, hubbard_integrals, random_integrals
from upccd.pairspace import (AmplitudeMatrix, PairSpace, doci_ground_state, doci_matrix, enumerate_pair_basis,
                             excite, initial_amplitudes, pair_ket, pair_overlap, pccd_expand, pccd_residuals,
                             solve_pccd, threshold_amplitudes)
from upccd.pipeline import hf_basis

from conftest import TWO_SITE_EXACT


def permanent(m):
    k = m.shape[0]
    return sum(math.prod(m[r, s] for r, s in zip(range(k), perm)) for perm in itertools.permutations(range(k)))


def test_pair_basis_examples():
    assert enumerate_pair_basis(4, 2)[0] == 0b0011 and len(enumerate_pair_basis(4, 2)) == 6
    assert len(enumerate_pair_basis(10, 5)) == 252
    assert enumerate_pair_basis(4, 0) == [0]
    basis = enumerate_pair_basis(6, 3)
    assert basis == sorted(basis) and all(bin(m).count("1") == 3 for m in basis)


def test_pair_basis_rejects_bad_counts():
    with pytest.raises(ContractError):
        enumerate_pair_basis(3, 4)


def test_pair_ket_and_excite():
    assert pair_ket(0b0011, 4) == "11110000"
    assert excite(0b0011, 1, 3) == 0b1001
    assert excite(0b0011, 2, 3) is None


def test_doci_dimer_mo(dimer_mo):
    H = doci_matrix(dimer_mo).toarray()
    np.testing.assert_allclose(H, [[-2 + 2, 2], [2, 2 + 2]], atol=1e-12)
    assert doci_ground_state(dimer_mo)[0] == pytest.approx(TWO_SITE_EXACT, abs=1e-12)


def test_doci_site_basis_is_diagonal(dimer_sites):
    np.testing.assert_allclose(doci_matrix(dimer_sites).toarray(), np.diag([4.0, 4.0]), atol=1e-14)


@pytest.mark.parametrize("norb, npairs, seed", [(2, 1, 0), (3, 1, 1), (4, 2, 2), (5, 2, 3), (6, 3, 4), (6, 2, 5)])
def test_doci_is_seniority_zero_block(norb, npairs, seed):
    ints = random_integrals(norb, 2 * npairs, seed)
    space = SectorSpace.for_integrals(ints)
    idx = space.seniority_zero_indices()
    block = build_sector_hamiltonian(ints, space=space).toarray()[np.ix_(idx, idx)]
    np.testing.assert_allclose(doci_matrix(ints).toarray(), block, atol=1e-12, rtol=0)


def test_dense_and_sparse_doci_agree():
    from upccd.pairspace import _doci_dense, _doci_sparse
    ints = random_integrals(6, 6, 7)
    space = PairSpace(6, 3)
    np.testing.assert_allclose(_doci_dense(ints, space), _doci_sparse(ints, space).toarray(), atol=1e-13)


def test_pair_space_cap():
    with pytest.raises(SizeLimitError):
        PairSpace(20, 10, cap=1000)


def test_expand_examples():
    zero = pccd_expand(AmplitudeMatrix.zeros(4, 2))
    assert zero.coefficient(0b0011) == 1.0 and np.count_nonzero(zero.coefficients) == 1
    t = AmplitudeMatrix(np.array([[0.1, 0.2], [0.3, 0.4]]), 4, 2)
    assert pccd_expand(t).coefficient(0b1100) == pytest.approx(0.1 * 0.4 + 0.2 * 0.3, abs=1e-15)


@given(st.integers(2, 5), st.integers(0, 2**16))
def test_expand_is_permanent(npairs, seed):
    nvirt = 2 if npairs > 3 else 3
    norb = npairs + nvirt
    rng = np.random.default_rng(seed)
    t = AmplitudeMatrix(rng.normal(size=(npairs, nvirt)), norb, npairs)
    psi = pccd_expand(t).as_dict()
    for mask, c in psi.items():
        holes = [i for i in range(npairs) if not mask >> i & 1]
        parts = [a - npairs for a in range(npairs, norb) if mask >> a & 1]
        sub = t.t[np.ix_(holes, parts)]
        expected = permanent(sub) if holes else 1.0
        assert c == pytest.approx(expected, abs=1e-12)


def test_threshold_examples():
    t = AmplitudeMatrix.from_dict({(0, 2): -0.1575, (0, 3): -0.1569, (1, 2): -0.7315, (1, 3): 0.03}, 4, 2)
    assert threshold_amplitudes(t, 0.0).count_nonzero() == 4
    assert threshold_amplitudes(t, 0.1).count_nonzero() == 3
    assert threshold_amplitudes(t, 1.0).count_nonzero() == 0
    assert threshold_amplitudes(t, 0.1575).get(0, 2) == -0.1575  # equality survives
    with pytest.raises(ContractError):
        threshold_amplitudes(t, -1)


@given(st.lists(st.floats(-1, 1), min_size=6, max_size=6), st.floats(0, 1))
def test_threshold_invariant(values, cutoff):
    t = AmplitudeMatrix(np.array(values).reshape(2, 3), 5, 2)
    kept = threshold_amplitudes(t, cutoff).t
    assert np.all((np.abs(kept) >= cutoff) | (kept == 0))
    assert np.all((kept == 0) | (kept == t.t))


def test_amplitude_text_round_trip():
    t = AmplitudeMatrix(np.random.default_rng(1).normal(size=(2, 3)), 5, 2)
    back = AmplitudeMatrix.from_text(t.to_text(), 5, 2)
    np.testing.assert_array_equal(back.t, t.t)
    with pytest.raises(ContractError):
        AmplitudeMatrix.from_text("2 1 0.5\n", 5, 2)
    with pytest.raises(ContractError):
        AmplitudeMatrix.from_text("0 3\n", 5, 2)


def test_non_finite_amplitudes_rejected():
    with pytest.raises(ContractError):
        AmplitudeMatrix(np.array([[np.nan]]), 2, 1)


def test_residual_zero_at_exact_one_pair_solution(dimer_mo):
    # H = [[d0, k], [k, d1]] and r(t) = k + (d1 - d0) t - k t^2
    H = doci_matrix(dimer_mo).toarray()
    d0, d1, k = H[0, 0], H[1, 1], H[0, 1]
    t = ((d1 - d0) - math.sqrt((d1 - d0) ** 2 + 4 * k * k)) / (2 * k)
    r, e = pccd_residuals(AmplitudeMatrix(np.array([[t]]), 2, 1), dimer_mo)
    assert abs(r[0, 0]) < 1e-12
    assert e == pytest.approx(TWO_SITE_EXACT, abs=1e-12)


def test_residual_energy_consistency():
    ints = random_integrals(5, 4, 3)
    t = AmplitudeMatrix(np.random.default_rng(0).normal(scale=0.1, size=(2, 3)), 5, 2)
    _, e = pccd_residuals(t, ints)
    psi = PairSpace(5, 2).expand(t)
    assert e == pytest.approx((doci_matrix(ints) @ psi)[0], abs=1e-12)


def no_pair_coupling(norb=4, nelec=4):
    rng = np.random.default_rng(2)
    h = np.diag(rng.normal(size=norb))
    eri = np.zeros((norb,) * 4)
    for p in range(norb):
        for q in range(norb):
            eri[p, p, q, q] = 0.5 + 0.1 * (p + q)
    return IntegralSet.create(h, eri, nelec)


def test_no_pair_coupling_gives_zero_amplitudes():
    ints = no_pair_coupling()
    r, e = pccd_residuals(AmplitudeMatrix.zeros(4, 2), ints)
    np.testing.assert_allclose(r, 0, atol=1e-15)
    sol = solve_pccd(ints)
    assert sol.iterations == 0 and sol.amplitudes.count_nonzero() == 0
    assert sol.energy == pytest.approx(doci_matrix(ints).toarray()[0, 0])


def test_solve_dimer_mo(dimer_mo):
    sol = solve_pccd(dimer_mo)
    assert sol.energy == pytest.approx(TWO_SITE_EXACT, abs=1e-8)
    assert sol.residual_norm < 1e-10


@pytest.mark.parametrize("norb", [3, 4, 6])
def test_one_pair_is_doci_exact(norb):
    ints = hf_basis(random_integrals(norb, 2, 11, scale=0.3), True)
    assert solve_pccd(ints).energy == pytest.approx(doci_ground_state(ints)[0], abs=1e-10)


def test_jacobian_first_order_consistency():
    ints = hf_basis(hubbard_integrals(HubbardSpec(4, 1.0, 2.0)), True)
    sol = solve_pccd(ints)
    t = sol.amplitudes.t.reshape(-1)
    space = PairSpace(4, 2)

    def res(x):
        return pccd_residuals(AmplitudeMatrix(x, 4, 2), ints, space)[0].reshape(-1)

    h = 1e-5
    for k in range(len(t)):
        e = np.zeros_like(t)
        e[k] = h
        col = (res(t + e) - res(t - e)) / (2 * h)
        dr = res(t + e) - res(t)
        np.testing.assert_allclose(dr, h * col, rtol=1e-3, atol=1e-9)


def test_six_site_weak_coupling_close_to_doci():
    ints = hf_basis(hubbard_integrals(HubbardSpec(6, 1.0, 0.5)), True)
    assert abs(solve_pccd(ints).energy - doci_ground_state(ints)[0]) < 1e-3


def test_non_convergence_reports_residual():
    ints = hf_basis(hubbard_integrals(HubbardSpec(4, 1.0, 4.0)), True)
    with pytest.raises(ConvergenceError) as info:
        solve_pccd(ints, max_iter=1, tol=1e-30)
    assert info.value.residual is not None


def test_initial_guess_formula(dimer_mo):
    t0 = initial_amplitudes(dimer_mo).t[0, 0]
    H = doci_matrix(dimer_mo).toarray()
    # F_11 - F_00 for one pair equals h_11 - h_00 + (2J - K)_{10} - J_00
    h, J, K = dimer_mo.h, dimer_mo.coulomb(), dimer_mo.exchange()
    f = np.diag(h) + 2 * J[:, 0] - K[:, 0]
    assert t0 == pytest.approx(-K[0, 1] / (2 * (f[1] - f[0]) + 1e-8))
    assert H[0, 1] == pytest.approx(K[0, 1])


def test_pair_overlap_normalized():
    t = AmplitudeMatrix(np.array([[0.3]]), 2, 1)
    a = pccd_expand(t)
    assert pair_overlap(a, a) == pytest.approx(1.0)

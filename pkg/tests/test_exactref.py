import math

import numpy as np
import pytest

from upccd.errors import ContractError, ConvergenceError, SizeLimitError
from upccd.exactref import (CiVector, QubitState, SectorSpace, build_sector_hamiltonian, embed_ci,
                            exact_ground_state, fidelity, ground_state, hartree_fock_vector, interleave,
                            jw_oracle, ket, ket_index, lanczos, number_operator, overlap, sector_operator)
from upccd.integrals import HubbardSpec, IntegralSet, hubbard_integrals, random_integrals

from conftest import TWO_SITE_EXACT


def sector_block(ints):
    space = SectorSpace.for_integrals(ints)
    full = jw_oracle(ints)
    idx = space.qubit_indices
    return build_sector_hamiltonian(ints, space=space).toarray(), full[idx][:, idx].toarray()


def test_dimer_spectrum(dimer_sites):
    H = build_sector_hamiltonian(dimer_sites).toarray()
    assert H.shape == (4, 4)
    U, t = 4.0, 1.0
    r = math.sqrt(U**2 + 16 * t**2)
    np.testing.assert_allclose(np.linalg.eigvalsh(H), sorted([0, U, (U - r) / 2, (U + r) / 2]), atol=1e-12)


@pytest.mark.parametrize("norb, seed", [(2, 0), (3, 1), (4, 2), (5, 3)])
def test_sector_matches_jw_block(norb, seed):
    sector, oracle = sector_block(random_integrals(norb, 2 * (norb // 2), seed))
    np.testing.assert_allclose(sector, oracle, atol=1e-12, rtol=0)


def test_sector_matches_jw_block_uneven_spins():
    ints = random_integrals(3, 3 + 1, 9)
    space = SectorSpace(3, 3, 1)
    H = build_sector_hamiltonian(ints, 3, 1, space=space).toarray()
    full = jw_oracle(ints)[space.qubit_indices][:, space.qubit_indices].toarray()
    np.testing.assert_allclose(H, full, atol=1e-12)


def test_matrix_free_operator_matches_sparse():
    ints = random_integrals(4, 4, 21)
    space = SectorSpace.for_integrals(ints)
    H = build_sector_hamiltonian(ints, space=space)
    x = np.random.default_rng(0).normal(size=space.dim)
    np.testing.assert_allclose(sector_operator(ints, space) @ x, H @ x, atol=1e-12)


def test_electron_count_mismatch():
    with pytest.raises(ContractError):
        build_sector_hamiltonian(random_integrals(3, 2, 0), 2, 1)


def test_dimension_cap():
    with pytest.raises(SizeLimitError, match="exceeds"):
        SectorSpace(10, 5, 5, cap=1000)


def test_ground_state_diagonal():
    gs = ground_state(np.diag([3.0, 1.0, 2.0]))
    assert gs.energy == 1.0
    np.testing.assert_array_equal(gs.vector, [0.0, 1.0, 0.0])


def test_ground_state_sign_convention():
    gs = ground_state(-np.ones((3, 3)))
    assert gs.vector[np.argmax(np.abs(gs.vector))] > 0


def test_dimer_ground_energy(dimer_sites):
    assert exact_ground_state(dimer_sites).energy == pytest.approx(TWO_SITE_EXACT, abs=1e-8)


def test_lanczos_matches_dense_on_six_sites():
    ints = hubbard_integrals(HubbardSpec.parse("L=6,t=1,U=8"))
    dense = exact_ground_state(ints)
    lz = exact_ground_state(ints, dense_limit=10)
    assert lz.iterations > 0
    assert lz.energy == pytest.approx(dense.energy, abs=1e-8)
    assert abs(lz.vector.coefficients @ dense.vector.coefficients) == pytest.approx(1.0, abs=1e-8)


def test_lanczos_non_convergence_carries_residual():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(300, 300))
    a = a + a.T
    with pytest.raises(ConvergenceError) as info:
        lanczos(lambda x: a @ x, 300, tol=1e-14, max_iter=5)
    assert info.value.residual is not None and info.value.residual > 0


def test_degeneracy_flag():
    gs = ground_state(np.diag([1.0, 1.0, 2.0]))
    assert gs.degenerate and gs.gap == 0.0


def test_single_orbital_oracle():
    a, g = 0.7, 1.3
    ints = IntegralSet.create(np.array([[a]]), np.full((1, 1, 1, 1), g), 2)
    np.testing.assert_allclose(jw_oracle(ints).toarray(), np.diag([0, a, a, 2 * a + g]), atol=1e-15)


def test_oracle_conserves_particle_number():
    ints = random_integrals(3, 2, 4)
    H = jw_oracle(ints).toarray()
    N = number_operator(6).toarray()
    np.testing.assert_allclose(H @ N - N @ H, 0, atol=1e-12)
    vals, vecs = np.linalg.eigh(H)
    for k in range(5):
        n = vecs[:, k] @ N @ vecs[:, k]
        assert n == pytest.approx(round(n), abs=1e-8)


def test_oracle_size_cap():
    with pytest.raises(SizeLimitError):
        jw_oracle(random_integrals(8, 2, 0))


def test_ket_convention():
    # orbital 0 doubly occupied, alpha qubit 0 leftmost
    assert ket(interleave(0b01, 0b01, 2), 4) == "1100"
    assert ket(interleave(0b10, 0b01, 2), 4) == "0110"
    assert ket_index("0011") == 0b1100


def test_embed_and_fidelity(dimer_sites):
    gs = exact_ground_state(dimer_sites)
    q = embed_ci(gs.vector)
    assert q.norm() == pytest.approx(1.0)
    assert fidelity(q, gs.vector) == pytest.approx(1.0)
    assert fidelity(q, q) == pytest.approx(1.0)
    assert overlap(q, gs.vector) == pytest.approx(1.0)


def test_fidelity_dimension_mismatch():
    with pytest.raises(ContractError):
        fidelity(QubitState.from_ket("11"), QubitState.from_ket("1100"))


def test_hf_fidelity_non_interacting_limit(dimer_mo):
    ints = hubbard_integrals(HubbardSpec(2, 1.0, 1e-8))
    from upccd.pipeline import hf_basis
    mo = hf_basis(ints, True)
    gs = exact_ground_state(mo)
    assert fidelity(hartree_fock_vector(gs.vector.space), gs.vector) == pytest.approx(1.0, abs=1e-6)


def test_hf_fidelity_decreases_with_u():
    from upccd.pipeline import hf_basis
    values = []
    for u in np.arange(0.5, 9.01, 0.5):
        mo = hf_basis(hubbard_integrals(HubbardSpec(6, 1.0, float(u))), True)
        gs = exact_ground_state(mo)
        values.append(fidelity(hartree_fock_vector(gs.vector.space), gs.vector))
    assert all(b < a for a, b in zip(values, values[1:]))


def test_civector_normalized_and_coefficient():
    space = SectorSpace(2, 1, 1)
    v = CiVector(space, np.array([2.0, 0.0, 0.0, 0.0])).normalized()
    assert v.coefficient(0b01, 0b01) == 1.0
    assert len(v.basis) == 4

import math

import jsonschema
import numpy as np
import pytest
import scipy.linalg
import sympy
from hypothesis import given, strategies as st

import upccd.circuit as circuit_mod
from upccd import schemas
from upccd.circuit import (Circuit, Gate, SubregisterState, UpccdTerm, apply, build_upccd, decompose, exact_expand,
                           export_openqasm, gate_metrics, gate_unitary, givens_to_cx_ry, order_terms, parse_openqasm,
                           read_amplitude_terms, simulate, small_angle_expand, state_to_pairs, terms_from_amplitudes,
                           upccd_state)
from upccd.errors import ContractError, SizeLimitError
from upccd.exactref import QubitState, jw_annihilators
from upccd.pairspace import AmplitudeMatrix, pair_overlap, pair_qubit_index, pccd_expand

T02, T03, T12, T13 = sympy.symbols("t02 t03 t12 t13")
C2H2 = {(2, 8): -0.1575, (5, 9): -0.1569, (6, 7): -0.7315}


def symbolic_terms(order="ascending"):
    return order_terms([UpccdTerm(0, 2, T02), UpccdTerm(0, 3, T03), UpccdTerm(1, 2, T12), UpccdTerm(1, 3, T13)],
                       order)


def c2h2_terms(order="ascending"):
    return terms_from_amplitudes(AmplitudeMatrix.from_dict(C2H2, 10, 7), order)


def random_terms(rng, norb, npairs, k, scale=0.5):
    pairs = [(i, a) for i in range(npairs) for a in range(npairs, norb)]
    pick = rng.choice(len(pairs), size=min(k, len(pairs)), replace=False)
    return [UpccdTerm(*pairs[j], float(rng.normal(scale=scale))) for j in sorted(pick)]


def embed(report):
    n = 2 * report.norb
    amps = np.zeros(1 << n)
    for m, c in report.coefficients.items():
        amps[pair_qubit_index(m, report.norb)] = float(c)
    return amps


# gates and circuits

@pytest.mark.parametrize("kind, qubits, theta", [("CX", (0, 0), 0.0), ("RY", (0, 1), 0.1), ("SWAP", (0, 1), 0.0),
                                                 ("RY", (0,), math.inf)])
def test_gate_validation(kind, qubits, theta):
    with pytest.raises(ContractError):
        Gate(kind, qubits, theta)


def test_circuit_range_check():
    with pytest.raises(ContractError):
        Circuit(2, [Gate("X", (2,))])


def test_empty_terms_prepare_reference():
    c = build_upccd([], 4, 2)
    assert c.count("X") == 4 and len(c) == 4
    assert simulate(c).nonzero_kets() == {"11110000": pytest.approx(1.0)}


def test_single_term_state():
    theta = 0.37
    state = simulate(build_upccd([UpccdTerm(0, 1, theta)], 2, 1))
    assert state.amplitude("1100") == pytest.approx(math.cos(theta))
    assert state.amplitude("0011") == pytest.approx(math.sin(theta))
    assert state.norm() == pytest.approx(1.0)


def test_duplicate_and_invalid_terms():
    with pytest.raises(ContractError, match="duplicate"):
        build_upccd([UpccdTerm(0, 2, 0.1), UpccdTerm(0, 2, 0.2)], 4, 2)
    with pytest.raises(ContractError):
        build_upccd([UpccdTerm(2, 3, 0.1)], 4, 2)
    with pytest.raises(ContractError):
        order_terms([], "sideways")


def test_zero_angle_is_identity():
    g = Gate("PAIRED_DOUBLE", (0, 1, 4, 5), 0.0)
    np.testing.assert_array_equal(gate_unitary(g, 6), np.eye(64))


@given(st.integers(0, 2**16))
def test_random_circuits_preserve_norm(seed):
    rng = np.random.default_rng(seed)
    n = 5
    gates = []
    for _ in range(12):
        kind = rng.choice(["X", "CX", "RY", "GIVENS", "PAIRED_DOUBLE"])
        arity = {"X": 1, "CX": 2, "RY": 1, "GIVENS": 2, "PAIRED_DOUBLE": 4}[kind]
        gates.append(Gate(str(kind), tuple(rng.choice(n, arity, replace=False)), float(rng.normal())))
    psi = rng.normal(size=32) + 1j * rng.normal(size=32)
    out = apply(Circuit(n, gates), QubitState(n, psi / np.linalg.norm(psi)))
    assert out.norm() == pytest.approx(1.0, abs=1e-12)


def paired_generator(n_qubits, i, a):
    ops = jw_annihilators(n_qubits)
    pair = [ops[2 * p + 1] @ ops[2 * p] for p in range(n_qubits // 2)]
    return (pair[a].T @ pair[i] - pair[i].T @ pair[a]).toarray()


@pytest.mark.parametrize("norb, i, a", [(2, 0, 1), (3, 0, 2), (4, 0, 3), (4, 1, 2)])
def test_paired_double_is_jw_exponential(norb, i, a):
    theta = 0.613
    n = 2 * norb
    target = scipy.linalg.expm(theta * paired_generator(n, i, a))
    u = gate_unitary(Gate("PAIRED_DOUBLE", (2 * i, 2 * i + 1, 2 * a, 2 * a + 1), theta), n)
    np.testing.assert_allclose(u, target, atol=1e-10)


def test_givens_decomposition_matches_gate():
    g = Gate("GIVENS", (1, 3), 0.42)
    seq = Circuit(4, givens_to_cx_ry(g))
    u = np.column_stack([apply(seq, QubitState.basis_state(4, k)).amplitudes for k in range(16)])
    np.testing.assert_allclose(u, gate_unitary(g, 4), atol=1e-12)


@given(st.integers(0, 2**16))
def test_decomposition_exact_on_reference_circuits(seed):
    rng = np.random.default_rng(seed)
    terms = random_terms(rng, 4, 2, 3)
    native = simulate(build_upccd(terms, 4, 2))
    dec = simulate(decompose(build_upccd(terms, 4, 2)))
    np.testing.assert_allclose(dec.amplitudes, native.amplitudes, atol=1e-12)


# expansions

def test_symbolic_pccd_structure():
    psi = pccd_expand(AmplitudeMatrix.from_dict({(0, 2): 0.11, (0, 3): 0.23, (1, 2): 0.31, (1, 3): 0.47}, 4, 2))
    got = psi.by_ket()
    assert got["00001111"] == pytest.approx(0.31 * 0.23 + 0.47 * 0.11, abs=1e-15)
    assert got["00111100"] == pytest.approx(0.11, abs=1e-15)


def test_small_angle_ascending_structure():
    report = small_angle_expand(symbolic_terms("ascending"), 4, 2)
    expected = {"11110000": 1, "11001100": T12, "00111100": T02 - T03 * T12 * T13, "11000011": T13,
                "00110011": T03, "00001111": T02 * T13 + T03 * T12}
    got = report.by_ket()
    assert set(got) == set(expected)
    for k, v in expected.items():
        assert sympy.expand(got[k] - v) == 0, k
    [path] = report.excitation_deexcitation
    assert (path.n_excitations, path.n_deexcitations) == (2, 1)
    assert sympy.expand(path.product + T12 * T03 * T13) == 0


def test_small_angle_reversed_ordering_moves_term():
    got = small_angle_expand(symbolic_terms("descending"), 4, 2).by_ket()
    assert sympy.expand(got["00111100"] - T02) == 0
    assert sympy.expand(got["11000011"] - (T13 - T02 * T03 * T12)) == 0


def test_c2h2_has_no_excitation_deexcitation_terms():
    terms = c2h2_terms()
    small = small_angle_expand(terms, 10, 7)
    assert small.excitation_deexcitation == []
    pccd = pccd_expand(AmplitudeMatrix.from_dict(C2H2, 10, 7)).as_dict()
    assert set(small.coefficients) == set(pccd)
    for m, c in small.coefficients.items():
        assert c == pytest.approx(pccd[m], abs=1e-12)


@given(st.integers(0, 2**16), st.sampled_from([(4, 2), (5, 2), (6, 3)]))
def test_circuit_matches_exact_expansion(seed, shape):
    norb, npairs = shape
    terms = random_terms(np.random.default_rng(seed), norb, npairs, 4)
    report = exact_expand(terms, norb, npairs)
    assert np.linalg.norm([float(c) for c in report.coefficients.values()]) == pytest.approx(1.0, abs=1e-12)
    state = simulate(build_upccd(terms, norb, npairs))
    np.testing.assert_allclose(state.amplitudes, embed(report), atol=1e-12)


def expansion_gaps(base, normalize, scale=0.2, halvings=4):
    gaps = []
    for k in range(halvings + 1):
        terms = [UpccdTerm(s.i, s.a, s.theta * scale / 2**k) for s in base]
        ex = exact_expand(terms, 4, 2).state()
        sa = small_angle_expand(terms, 4, 2).state()
        masks = sorted(set(ex.masks) | set(sa.masks))
        e, a = ex.on_basis(masks), sa.on_basis(masks)
        gaps.append(np.linalg.norm(e - (a / np.linalg.norm(a) if normalize else a)))
    return np.log2(np.array(gaps[:-1]) / np.array(gaps[1:]))


@pytest.mark.parametrize("seed", range(4))
def test_small_angle_gap_orders(seed):
    base = random_terms(np.random.default_rng(seed), 4, 2, 3, scale=1.0)
    # the raw expansion keeps cos = 1, a second-order error; its normalized state is third-order accurate
    np.testing.assert_allclose(expansion_gaps(base, False)[-1], 2.0, atol=0.05)
    np.testing.assert_allclose(expansion_gaps(base, True)[-1], 3.0, atol=0.05)


def test_expansion_json_schema():
    report = exact_expand(symbolic_terms_numeric(), 4, 2)
    jsonschema.validate(report.as_dict(), schemas.load("expansion"))
    sym = small_angle_expand(symbolic_terms(), 4, 2).as_dict()
    assert sympy.sympify(sym["coefficients"]["00111100"]) == T02 - T03 * T12 * T13


def symbolic_terms_numeric():
    return [UpccdTerm(0, 2, 0.1), UpccdTerm(0, 3, 0.2), UpccdTerm(1, 2, 0.3), UpccdTerm(1, 3, 0.4)]


def test_path_truncation_flag():
    report = exact_expand(symbolic_terms_numeric(), 4, 2, max_paths=3)
    assert report.paths_truncated and report.excitation_deexcitation == []
    full = exact_expand(symbolic_terms_numeric(), 4, 2)
    assert report.coefficients == full.coefficients


# prepared states

def test_c2h2_reference_values():
    pair = state_to_pairs(upccd_state(c2h2_terms(), 10, 7), 10, 7)
    ref = 0b1111111
    assert pair.coefficient(ref) == pytest.approx(0.7259, abs=5e-4)
    assert pair.coefficient(ref ^ (1 << 6) ^ (1 << 7)) == pytest.approx(-0.6516, abs=5e-4)


def test_subregister_matches_full_simulation(monkeypatch):
    terms = [UpccdTerm(0, 3, 0.3), UpccdTerm(1, 3, -0.2), UpccdTerm(1, 4, 0.5)]
    full = state_to_pairs(upccd_state(terms, 5, 3), 5, 3)
    monkeypatch.setattr(circuit_mod, "FULL_SIMULATION_QUBITS", 8)
    sub = upccd_state(terms, 5, 3)
    assert isinstance(sub, SubregisterState) and sub.active == (0, 1, 3, 4)
    part = sub.pair_state()
    assert part.as_dict().keys() == full.as_dict().keys()
    assert pair_overlap(part, full) == pytest.approx(1.0, abs=1e-12)


def test_large_register_uses_subregister():
    terms = [UpccdTerm(3, 9, 0.2), UpccdTerm(5, 13, -0.1)]
    st_ = upccd_state(terms, 14, 7)
    assert isinstance(st_, SubregisterState)
    exact = exact_expand(terms, 14, 7).state()
    assert pair_overlap(st_.pair_state(), exact) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(SizeLimitError):
        simulate(build_upccd(terms, 14, 7))


def test_state_to_pairs_rejects_broken_pairs():
    with pytest.raises(ContractError):
        state_to_pairs(QubitState.from_ket("1000"), 2, 1)


def test_read_amplitude_terms_orders():
    text = "1 3 0.2\n0 2 -0.5\n0 3 0\n"
    assert [(s.i, s.a) for s in read_amplitude_terms(text, 4, 2)] == [(0, 2), (1, 3)]
    assert [(s.i, s.a) for s in read_amplitude_terms(text, 4, 2, "magnitude")] == [(0, 2), (1, 3)]
    assert [(s.i, s.a) for s in read_amplitude_terms(text, 4, 2, "descending")] == [(1, 3), (0, 2)]


# metrics and export

def test_c2h2_gate_metrics():
    m = gate_metrics(build_upccd(c2h2_terms(), 10, 7))
    assert (m.native_count, m.native_depth, m.paired_doubles) == (17, 2, 3)
    assert (m.two_qubit_count, m.cx_count, m.decomposed_depth) == (15, 24, 4)
    assert m == gate_metrics(build_upccd(c2h2_terms(), 10, 7))


@given(st.integers(0, 2**16))
def test_depth_monotone_under_insertion(seed):
    rng = np.random.default_rng(seed)
    terms = random_terms(rng, 5, 2, 4)
    base = build_upccd(terms, 5, 2)
    extra = Gate("CX", tuple(int(q) for q in rng.choice(10, 2, replace=False)))
    pos = int(rng.integers(0, len(base) + 1))
    grown = Circuit(10, base.gates[:pos] + (extra,) + base.gates[pos:])
    assert gate_metrics(grown).native_depth >= gate_metrics(base).native_depth
    assert gate_metrics(grown).decomposed_depth >= gate_metrics(base).decomposed_depth


def test_qasm_header_only_and_x_only():
    assert export_openqasm(Circuit(3)) == 'OPENQASM 2.0;\ninclude "qelib1.inc";\nqreg q[3];\n'
    text = export_openqasm(build_upccd([], 2, 1))
    assert text.endswith("x q[0];\nx q[1];\n")


def test_qasm_refuses_native_doubles():
    with pytest.raises(ContractError, match="decompose"):
        export_openqasm(build_upccd([UpccdTerm(0, 1, 0.1)], 2, 1))


def test_qasm_round_trip_reproduces_state():
    terms = c2h2_terms()
    circ = build_upccd(terms, 10, 7)
    text = export_openqasm(decompose(circ))
    assert text == export_openqasm(decompose(circ))
    back = parse_openqasm(text)
    assert set(g.kind for g in back.gates) <= {"X", "CX", "RY"}
    np.testing.assert_allclose(simulate(back).amplitudes, simulate(circ).amplitudes, atol=1e-10)


def test_qasm_parser_rejects_unknown_statement():
    with pytest.raises(ContractError):
        parse_openqasm('OPENQASM 2.0;\nqreg q[2];\nh q[0];\n')

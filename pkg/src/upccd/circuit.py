"""UpCCD circuits: construction, statevector simulation, expansions and export.

Qubit ``2p`` carries the alpha spin orbital of spatial orbital ``p`` and
``2p + 1`` the beta one.  Bit ``q`` of a statevector index is qubit ``q``;
ket strings list qubit 0 first.

The paired-double primitive rotates the two configurations of its four
qubits ``(2i, 2i+1, 2a, 2a+1)``::

    |1100> -> cos(t)|1100> + sin(t)|0011>
    |0011> -> -sin(t)|1100> + cos(t)|0011>

which is ``exp[t (P_a^+ P_i - P_i^+ P_a)]`` with ``P_p = a_{p,beta} a_{p,alpha}``.
A small positive angle therefore puts ``+t`` on the excited determinant,
the same sign as a pCCD amplitude.  Terms are applied in list order, so the
first term in the list is the rightmost factor of the operator product.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from .errors import ContractError, SizeLimitError
from .exactref import QubitState, ket
from .pairspace import AmplitudeMatrix, PairStateVector, pair_ket, pair_qubit_index, reference_mask

FULL_SIMULATION_QUBITS = 24
ORDERINGS = ("ascending", "descending", "magnitude")

_ARITY = {"X": 1, "CX": 2, "RY": 1, "GIVENS": 2, "PAIRED_DOUBLE": 4}
_PARAMETRIC = {"RY", "GIVENS", "PAIRED_DOUBLE"}


@dataclass(frozen=True)
class Gate:
    """A gate acting on ``qubits``.

    ``CX`` qubits are (control, target).  ``GIVENS(p, q)`` rotates
    ``|1_p 0_q> -> cos|10> + sin|01>``.  ``RY`` follows the usual
    ``exp(-i theta Y / 2)`` convention.
    """

    kind: str
    qubits: Tuple[int, ...]
    theta: float = 0.0

    def __post_init__(self):
        if self.kind not in _ARITY:
            raise ContractError(f"unknown gate kind {self.kind!r}")
        qubits = tuple(int(q) for q in self.qubits)
        object.__setattr__(self, "qubits", qubits)
        if len(qubits) != _ARITY[self.kind]:
            raise ContractError(f"{self.kind} acts on {_ARITY[self.kind]} qubits, got {len(qubits)}")
        if len(set(qubits)) != len(qubits):
            raise ContractError(f"{self.kind} qubits must be distinct: {qubits}")
        if not math.isfinite(self.theta):
            raise ContractError("gate angle must be finite")

    def __str__(self):
        args = ",".join(map(str, self.qubits))
        if self.kind in _PARAMETRIC:
            return f"{self.kind}({self.theta:.10g}) {args}"
        return f"{self.kind} {args}"


@dataclass(frozen=True)
class Circuit:
    n_qubits: int
    gates: Tuple[Gate, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "gates", tuple(self.gates))
        for g in self.gates:
            if max(g.qubits) >= self.n_qubits or min(g.qubits) < 0:
                raise ContractError(f"gate {g} out of range for {self.n_qubits} qubits")

    def __len__(self):
        return len(self.gates)

    def count(self, kind):
        return sum(1 for g in self.gates if g.kind == kind)


@dataclass(frozen=True)
class UpccdTerm:
    i: int
    a: int
    theta: float


def terms_from_amplitudes(t: AmplitudeMatrix, order="ascending") -> List[UpccdTerm]:
    """One term per nonzero amplitude, with the angle set to the amplitude."""
    return order_terms([UpccdTerm(i, a, v) for i, a, v in t.items()], order)


def order_terms(terms: Iterable[UpccdTerm], order="ascending") -> List[UpccdTerm]:
    """Sort terms for application.

    ``ascending`` is ``(i, a)`` ascending (occupied index outer, virtual
    inner) and is the package default.  ``descending`` reverses it and
    ``magnitude`` puts the largest ``|theta|`` first (ties by ``(i, a)``).
    """
    terms = list(terms)
    if order == "ascending":
        return sorted(terms, key=lambda s: (s.i, s.a))
    if order == "descending":
        return sorted(terms, key=lambda s: (s.i, s.a), reverse=True)
    if order == "magnitude":
        return sorted(terms, key=lambda s: (-abs(s.theta), s.i, s.a))
    raise ContractError(f"unknown ordering {order!r}; choose from {', '.join(ORDERINGS)}")


def _check_terms(terms, norb, npairs):
    seen = set()
    for s in terms:
        if not (0 <= s.i < npairs <= s.a < norb):
            raise ContractError(f"term ({s.i}, {s.a}) is not an occupied-to-virtual pair excitation")
        if (s.i, s.a) in seen:
            raise ContractError(f"duplicate term ({s.i}, {s.a})")
        seen.add((s.i, s.a))


def build_upccd(terms: Sequence[UpccdTerm], norb: int, npairs: int) -> Circuit:
    """Reference preparation followed by one paired-double gate per term, in list order."""
    terms = list(terms)
    _check_terms(terms, norb, npairs)
    gates = [Gate("X", (q,)) for q in range(2 * npairs)]
    gates += [Gate("PAIRED_DOUBLE", (2 * s.i, 2 * s.i + 1, 2 * s.a, 2 * s.a + 1), s.theta) for s in terms]
    return Circuit(2 * norb, gates)


def decompose(circuit: Circuit) -> Circuit:
    """Rewrite paired doubles as CX layer, Givens rotation, CX layer.

    The rewrite is exact on states where each spatial orbital of the gate is
    empty or doubly occupied, which is all the UpCCD circuit ever produces.
    """
    out = []
    for g in circuit.gates:
        if g.kind != "PAIRED_DOUBLE":
            out.append(g)
            continue
        ia, ib, aa, ab = g.qubits
        layer = [Gate("CX", (ia, ib)), Gate("CX", (aa, ab))]
        out += layer + [Gate("GIVENS", (ia, aa), g.theta)] + layer
    return Circuit(circuit.n_qubits, out)


def givens_to_cx_ry(g: Gate) -> List[Gate]:
    """Two-qubit Givens rotation in terms of CX and RY.

    ``CX(p,q)`` maps the rotated pair onto ``{|11>, |01>}``, a controlled
    ``RY(-2 theta)`` on ``p`` does the rotation and ``CX(p,q)`` undoes the
    mapping.  The controlled RY is ``RY(phi/2) CX RY(-phi/2) CX``.
    """
    p, q = g.qubits
    phi = -2.0 * g.theta
    return [Gate("CX", (p, q)), Gate("RY", (p,), phi / 2), Gate("CX", (q, p)),
            Gate("RY", (p,), -phi / 2), Gate("CX", (q, p)), Gate("CX", (p, q))]


# --------------------------------------------------------------------------
# simulation

def _axis(n, q):
    return n - 1 - q


def _slice(n, fixed: Dict[int, int]):
    idx = [slice(None)] * n
    for q, bit in fixed.items():
        idx[_axis(n, q)] = bit
    return tuple(idx)


def _rotate(psi, n, first, second, c, s):
    """Two-level rotation ``first -> c first + s second``, ``second -> -s first + c second``."""
    i0, i1 = _slice(n, first), _slice(n, second)
    a, b = psi[i0].copy(), psi[i1].copy()
    psi[i0] = c * a - s * b
    psi[i1] = s * a + c * b


def _apply_gate(psi, n, g: Gate):
    q = g.qubits
    if g.kind == "X":
        ax = _axis(n, q[0])
        psi[:] = np.flip(psi, axis=ax).copy()
    elif g.kind == "CX":
        ctrl, tgt = q
        sub = psi[_slice(n, {ctrl: 1})]
        ax = _axis(n, tgt) - (1 if _axis(n, ctrl) < _axis(n, tgt) else 0)
        psi[_slice(n, {ctrl: 1})] = np.flip(sub, axis=ax).copy()
    elif g.kind == "RY":
        c, s = math.cos(g.theta / 2), math.sin(g.theta / 2)
        _rotate(psi, n, {q[0]: 0}, {q[0]: 1}, c, s)
    elif g.kind == "GIVENS":
        _rotate(psi, n, {q[0]: 1, q[1]: 0}, {q[0]: 0, q[1]: 1}, math.cos(g.theta), math.sin(g.theta))
    elif g.kind == "PAIRED_DOUBLE":
        i0, i1, a0, a1 = q
        _rotate(psi, n, {i0: 1, i1: 1, a0: 0, a1: 0}, {i0: 0, i1: 0, a0: 1, a1: 1},
                math.cos(g.theta), math.sin(g.theta))


def apply(circuit: Circuit, state: QubitState) -> QubitState:
    if state.n_qubits != circuit.n_qubits:
        raise ContractError(f"circuit has {circuit.n_qubits} qubits, state has {state.n_qubits}")
    n = circuit.n_qubits
    psi = np.array(state.amplitudes, dtype=complex).reshape((2,) * n) if n else \
        np.array(state.amplitudes, dtype=complex)
    for g in circuit.gates:
        _apply_gate(psi, n, g)
    return QubitState(n, psi.reshape(-1))


def simulate(circuit: Circuit) -> QubitState:
    """Run ``circuit`` on ``|0...0>``."""
    if circuit.n_qubits > FULL_SIMULATION_QUBITS:
        raise SizeLimitError(f"{circuit.n_qubits} qubits exceed the {FULL_SIMULATION_QUBITS}-qubit simulator")
    return apply(circuit, QubitState.basis_state(circuit.n_qubits, 0))


def gate_unitary(g: Gate, n_qubits: int) -> np.ndarray:
    """Dense unitary of one gate on ``n_qubits`` (columns are images of basis states)."""
    circ = Circuit(n_qubits, [g])
    dim = 1 << n_qubits
    u = np.empty((dim, dim), dtype=complex)
    for k in range(dim):
        u[:, k] = apply(circ, QubitState.basis_state(n_qubits, k)).amplitudes
    return u


# --------------------------------------------------------------------------
# metrics

def _depth(gates, n_qubits):
    level = [0] * n_qubits
    depth = 0
    for g in gates:
        d = 1 + max(level[q] for q in g.qubits)
        for q in g.qubits:
            level[q] = d
        depth = max(depth, d)
    return depth


@dataclass(frozen=True)
class GateMetrics:
    """Gate accounting.

    ``native_count`` counts X and PAIRED_DOUBLE gates.  ``two_qubit_count``
    counts CX and GIVENS after the decomposition pass, and ``cx_count``
    expands each Givens into its four CX gates.  Depths are ASAP layer
    counts where any gate occupies one layer on each qubit it touches.
    """

    native_count: int
    native_depth: int
    paired_doubles: int
    two_qubit_count: int
    cx_count: int
    decomposed_depth: int

    def as_dict(self):
        return dict(self.__dict__)


def gate_metrics(circuit: Circuit) -> GateMetrics:
    dec = decompose(circuit)
    two_q = sum(1 for g in dec.gates if g.kind in ("CX", "GIVENS"))
    cx = dec.count("CX") + 4 * dec.count("GIVENS")
    return GateMetrics(
        native_count=circuit.count("X") + circuit.count("PAIRED_DOUBLE"),
        native_depth=_depth(circuit.gates, circuit.n_qubits),
        paired_doubles=circuit.count("PAIRED_DOUBLE"),
        two_qubit_count=two_q,
        cx_count=cx,
        decomposed_depth=_depth(dec.gates, circuit.n_qubits),
    )


# --------------------------------------------------------------------------
# OpenQASM

def export_openqasm(circuit: Circuit) -> str:
    if any(g.kind == "PAIRED_DOUBLE" for g in circuit.gates):
        raise ContractError("circuit still contains PAIRED_DOUBLE gates; run decompose() before export")
    lines = ["OPENQASM 2.0;", 'include "qelib1.inc";', f"qreg q[{circuit.n_qubits}];"]
    for g in circuit.gates:
        for h in (givens_to_cx_ry(g) if g.kind == "GIVENS" else [g]):
            if h.kind == "X":
                lines.append(f"x q[{h.qubits[0]}];")
            elif h.kind == "CX":
                lines.append(f"cx q[{h.qubits[0]}],q[{h.qubits[1]}];")
            else:
                lines.append(f"ry({h.theta:.17g}) q[{h.qubits[0]}];")
    return "\n".join(lines) + "\n"


_QASM_LINE = re.compile(r"^(x|cx|ry)(?:\(([^)]*)\))?\s+(.*);$")


def parse_openqasm(text: str) -> Circuit:
    """Read back the X/CX/RY subset written by :func:`export_openqasm`."""
    n = None
    gates = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith(("OPENQASM", "include", "//")):
            continue
        m = re.match(r"qreg\s+q\[(\d+)\];", line)
        if m:
            n = int(m.group(1))
            continue
        m = _QASM_LINE.match(line)
        if not m:
            raise ContractError(f"unsupported OpenQASM statement: {line!r}")
        kind, arg, operands = m.groups()
        qubits = tuple(int(x) for x in re.findall(r"q\[(\d+)\]", operands))
        gates.append(Gate(kind.upper(), qubits, float(arg) if arg else 0.0))
    if n is None:
        raise ContractError("missing qreg declaration")
    return Circuit(n, gates)


# --------------------------------------------------------------------------
# expansions in the pair-determinant basis

@dataclass(frozen=True)
class PathTerm:
    """One contribution reached through at least one pair deexcitation.

    ``moves`` lists ``(i, a, +1)`` for an excitation and ``(i, a, -1)`` for a
    deexcitation in application order; ``product`` is the signed product of
    the factors picked along the path.
    """

    target: int
    product: object
    n_excitations: int
    n_deexcitations: int
    moves: Tuple[Tuple[int, int, int], ...]


@dataclass
class ExpansionReport:
    mode: str
    norb: int
    npairs: int
    coefficients: Dict[int, object]
    excitation_deexcitation: List[PathTerm] = field(default_factory=list)
    paths_truncated: bool = False

    def coefficient(self, mask):
        return self.coefficients.get(mask, 0)

    def by_ket(self):
        return {pair_ket(m, self.norb): c for m, c in sorted(self.coefficients.items())}

    def state(self) -> PairStateVector:
        return PairStateVector.from_dict(self.norb, self.npairs,
                                         {m: float(c) for m, c in self.coefficients.items()})

    def as_dict(self):
        def num(v):
            try:
                return float(v)
            except TypeError:
                return str(v)
        return {
            "mode": self.mode,
            "norb": self.norb,
            "npairs": self.npairs,
            "coefficients": {pair_ket(m, self.norb): num(c) for m, c in sorted(self.coefficients.items())},
            "excitation_deexcitation": [
                {"target": pair_ket(p.target, self.norb), "product": num(p.product),
                 "n_excitations": p.n_excitations, "n_deexcitations": p.n_deexcitations,
                 "moves": [list(mv) for mv in p.moves]}
                for p in self.excitation_deexcitation
            ],
            "paths_truncated": self.paths_truncated,
        }

    def to_json(self, indent=2):
        return json.dumps(self.as_dict(), indent=indent)


def _expand(terms, norb, npairs, mode, max_paths):
    terms = list(terms)
    if norb is None:
        norb = max([s.a for s in terms], default=npairs - 1) + 1
    _check_terms(terms, norb, npairs)
    exact = mode == "exact"
    # each path: (mask, weight, moves); coefficients are the sums over paths
    paths = [(reference_mask(npairs), 1, ())]
    truncated = False
    coeffs: Dict[int, object] = {reference_mask(npairs): 1}
    for s in terms:
        bi, ba = 1 << s.i, 1 << s.a
        if exact:
            c, sn = math.cos(s.theta), math.sin(s.theta)
        else:
            c, sn = 1, s.theta
        # coefficient update (merged over determinants)
        new = {}
        for m, w in coeffs.items():
            if m & bi and not m & ba:
                new[m] = new.get(m, 0) + c * w
                t = m ^ bi ^ ba
                new[t] = new.get(t, 0) + sn * w
            elif m & ba and not m & bi:
                new[m] = new.get(m, 0) + c * w
                t = m ^ bi ^ ba
                new[t] = new.get(t, 0) - sn * w
            else:
                new[m] = new.get(m, 0) + w
        coeffs = new
        if truncated:
            continue
        grown = []
        for m, w, moves in paths:
            if m & bi and not m & ba:
                grown.append((m, c * w, moves))
                grown.append((m ^ bi ^ ba, sn * w, moves + ((s.i, s.a, 1),)))
            elif m & ba and not m & bi:
                grown.append((m, c * w, moves))
                grown.append((m ^ bi ^ ba, -sn * w, moves + ((s.i, s.a, -1),)))
            else:
                grown.append((m, w, moves))
        if len(grown) > max_paths:
            truncated = True
            paths = []
        else:
            paths = grown
    report = []
    for m, w, moves in paths:
        n_de = sum(1 for mv in moves if mv[2] < 0)
        if n_de:
            report.append(PathTerm(m, w, len(moves) - n_de, n_de, moves))
    return ExpansionReport(mode, norb, npairs, coeffs, report, truncated)


def exact_expand(terms: Sequence[UpccdTerm], norb=None, npairs=2, max_paths=200_000) -> ExpansionReport:
    """Apply each exact paired-double factor in order.

    A factor leaves a determinant alone unless exactly one of its two pairs
    is occupied; then it keeps ``cos`` of it and moves ``sin`` (excitation)
    or ``-sin`` (deexcitation) of it across.  Every path that used at least
    one deexcitation is listed with its signature.
    """
    return _expand(terms, norb, npairs, "exact", max_paths)


def small_angle_expand(terms: Sequence[UpccdTerm], norb=None, npairs=2, max_paths=200_000) -> ExpansionReport:
    """As :func:`exact_expand` with ``sin -> theta`` and ``cos -> 1``.

    Arithmetic stays generic, so symbolic angles (e.g. sympy symbols) work.
    """
    return _expand(terms, norb, npairs, "small_angle", max_paths)


# --------------------------------------------------------------------------
# prepared states

@dataclass(frozen=True, eq=False)
class SubregisterState:
    """A state simulated on the qubits of a few active orbitals.

    Orbitals outside ``active`` keep their reference occupation; the full
    register index of an active-subregister basis state is rebuilt in
    :meth:`sparse_register`.
    """

    norb: int
    npairs: int
    active: Tuple[int, ...]
    local: QubitState

    def sparse_register(self):
        frozen = 0
        for p in range(self.npairs):
            if p not in self.active:
                frozen |= 3 << (2 * p)
        idx, amps = self.local.sparse_amplitudes(tol=0.0)
        full = np.full(len(idx), frozen, dtype=np.int64)
        for k, p in enumerate(self.active):
            for spin in (0, 1):
                bit = (idx >> (2 * k + spin)) & 1
                full |= bit.astype(np.int64) << (2 * p + spin)
        return 2 * self.norb, full, amps

    def pair_state(self) -> PairStateVector:
        n, idx, amps = self.sparse_register()
        coeffs = {}
        for i, a in zip(idx, amps):
            if abs(a) == 0:
                continue
            mask = sum(1 << p for p in range(self.norb) if (int(i) >> (2 * p)) & 3 == 3)
            if pair_qubit_index(mask, self.norb) != int(i):
                raise ContractError("state left the seniority-zero sector")
            coeffs[mask] = a.real
        return PairStateVector.from_dict(self.norb, self.npairs, coeffs)


def upccd_state(terms: Sequence[UpccdTerm], norb: int, npairs: int):
    """Prepared UpCCD state.

    Up to 24 qubits the full circuit is simulated and a :class:`QubitState`
    returned.  Beyond that only the orbitals touched by a term are
    simulated; the others are frozen at their reference occupation, which
    no term can change.
    """
    terms = list(terms)
    _check_terms(terms, norb, npairs)
    if 2 * norb <= FULL_SIMULATION_QUBITS:
        return simulate(build_upccd(terms, norb, npairs))
    active = sorted({s.i for s in terms} | {s.a for s in terms})
    if 2 * len(active) > FULL_SIMULATION_QUBITS:
        raise SizeLimitError(f"{len(active)} active orbitals exceed the simulator register")
    pos = {p: k for k, p in enumerate(active)}
    n_occ = sum(1 for p in active if p < npairs)
    local_terms = [UpccdTerm(pos[s.i], pos[s.a], s.theta) for s in terms]
    local = simulate(build_upccd(local_terms, len(active), n_occ))
    return SubregisterState(norb, npairs, tuple(active), local)


def state_to_pairs(state: QubitState, norb: int, npairs: int, tol=1e-14) -> PairStateVector:
    """Read a seniority-zero statevector back into the pair basis."""
    idx, amps = state.sparse_amplitudes(tol)
    coeffs = {}
    for i, a in zip(idx, amps):
        mask = sum(1 << p for p in range(norb) if (int(i) >> (2 * p)) & 3 == 3)
        if pair_qubit_index(mask, norb) != int(i):
            raise ContractError(f"basis state {ket(int(i), state.n_qubits)} is not seniority zero")
        coeffs[mask] = a.real
    return PairStateVector.from_dict(norb, npairs, coeffs)


def read_amplitude_terms(text: str, norb: int, npairs: int, order="ascending") -> List[UpccdTerm]:
    """Parse ``i a value`` lines into ordered terms (zeros dropped)."""
    return terms_from_amplitudes(AmplitudeMatrix.from_text(text, norb, npairs), order)

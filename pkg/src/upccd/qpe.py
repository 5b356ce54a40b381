"""Canonical and iterative quantum phase estimation on a classical statevector.

The controlled unitary is ``V = exp(+i (H - E_lo) tau)``, built as the
complex conjugate of the first-order product formula for
``exp(-i H tau)`` times the window phase.  An eigenvalue ``E`` then has
phase ``phi = (E - E_lo) tau / 2 pi`` in ``[0, 1)`` and bins map back
through ``E = E_lo + 2 pi phi / tau``.

Ancilla statistics are exact: with ``psi_k = V^k psi`` the amplitude of
outcome ``m`` after the inverse QFT is ``2^-M sum_k exp(-2 pi i k m / 2^M) psi_k``,
so one FFT over ``k`` gives the outcome distribution, which is then sampled.
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
import scipy.sparse as sp

from .errors import ContractError, SizeLimitError
from .exactref import (SectorSpace, _register, build_sector_hamiltonian, jw_oracle)
from .integrals import IntegralSet
from .pairspace import PairSpace, doci_matrix, pair_qubit_index

MAX_ANCILLA = 14
MAX_IQPE_BITS = 16
MAX_SYSTEM_QUBITS = 24
DENSE_STEP_LIMIT = 1024
WINDOW_PAD = 0.05
TAU_SAFETY = 0.99


def gershgorin_window(matrix, pad=WINDOW_PAD):
    m = sp.csr_matrix(matrix)
    diag = m.diagonal()
    radius = np.asarray(abs(m).sum(axis=1)).ravel() - np.abs(diag)
    lo, hi = float(np.min(diag - radius)), float(np.max(diag + radius))
    width = max(hi - lo, 1e-8)
    return lo - pad * width, hi + pad * width


@dataclass
class EvolutionSpec:
    """Hamiltonian in a working basis plus the time step and window.

    ``labels`` are integer occupation bitmasks of the basis states; they
    define the Trotter grouping (off-diagonal elements are grouped by the
    set of orbitals that change).  ``register`` maps each basis state to
    its JW register index so prepared states can be loaded.
    """

    matrix: sp.csr_matrix
    tau: float
    trotter_steps: int = 1
    window: tuple = (0.0, 1.0)
    labels: Optional[np.ndarray] = None
    register: Optional[np.ndarray] = None
    n_qubits: Optional[int] = None
    basis: str = "matrix"
    exact: bool = False

    def __post_init__(self):
        self.matrix = sp.csr_matrix(self.matrix)
        if self.trotter_steps < 1:
            raise ContractError("trotter_steps must be at least 1")
        lo, hi = self.window
        if not (hi > lo and self.tau > 0 and self.tau * (hi - lo) < 2 * math.pi):
            raise ContractError(f"tau * window width must be below 2 pi (tau={self.tau}, window={self.window})")
        self._terms = None
        self._step = None
        self._eig = None

    @property
    def dim(self):
        return self.matrix.shape[0]

    @classmethod
    def from_matrix(cls, matrix, trotter_steps=1, window=None, tau=None, labels=None, exact=False, **kw):
        matrix = sp.csr_matrix(matrix)
        if window is None:
            window = gershgorin_window(matrix)
        if tau is None:
            tau = TAU_SAFETY * 2 * math.pi / (window[1] - window[0])
        return cls(matrix, tau, trotter_steps, tuple(window), labels=labels, exact=exact, **kw)

    @classmethod
    def from_integrals(cls, ints: IntegralSet, basis="auto", trotter_steps=1, exact=False, window=None, tau=None):
        """Working basis: ``sector`` (fixed alpha/beta counts), ``pairs``
        (seniority zero, only valid when H never leaves it), ``qubit``
        (full JW register) or ``auto`` (pairs if closed, else sector)."""
        if basis not in ("auto", "sector", "pairs", "qubit"):
            raise ContractError(f"unknown basis {basis!r}")
        n_qubits = 2 * ints.norb
        if n_qubits > MAX_SYSTEM_QUBITS:
            raise SizeLimitError(f"{n_qubits} system qubits exceed {MAX_SYSTEM_QUBITS}")
        if basis == "qubit":
            H = jw_oracle(ints)
            idx = np.arange(H.shape[0], dtype=np.int64)
            return cls.from_matrix(H, trotter_steps, window, tau, labels=idx, register=idx,
                                   n_qubits=n_qubits, basis="qubit", exact=exact)
        space = SectorSpace.for_integrals(ints)
        H = build_sector_hamiltonian(ints, space=space)
        reg = np.asarray(space.qubit_indices, dtype=np.int64)
        if basis in ("auto", "pairs"):
            sen0 = np.asarray(space.seniority_zero_indices())
            rest = np.setdiff1d(np.arange(space.dim), sen0)
            leak = abs(H[rest][:, sen0]).max() if len(rest) else 0.0
            if leak == 0.0:
                pspace = PairSpace(ints.norb, ints.npairs)
                masks = np.array(pspace.masks, dtype=np.int64)
                preg = np.array([pair_qubit_index(int(m), ints.norb) for m in masks], dtype=np.int64)
                return cls.from_matrix(doci_matrix(ints, pspace), trotter_steps, window, tau, labels=masks,
                                       register=preg, n_qubits=n_qubits, basis="pairs", exact=exact)
            if basis == "pairs":
                raise ContractError("Hamiltonian couples seniority-zero states to other sectors; "
                                    "the pair basis would not represent it")
        return cls.from_matrix(H, trotter_steps, window, tau, labels=reg, register=reg,
                               n_qubits=n_qubits, basis="sector", exact=exact)

    def with_steps(self, trotter_steps=None, exact=None):
        return EvolutionSpec(self.matrix, self.tau, self.trotter_steps if trotter_steps is None else trotter_steps,
                             self.window, self.labels, self.register, self.n_qubits, self.basis,
                             self.exact if exact is None else exact)

    # -- state loading --------------------------------------------------

    def load(self, state) -> np.ndarray:
        """Coefficients of ``state`` on the working basis (must lie inside it)."""
        if isinstance(state, np.ndarray):
            v = np.asarray(state, dtype=complex).reshape(-1)
            if len(v) != self.dim:
                raise ContractError(f"state has {len(v)} entries, basis has {self.dim}")
            return v / np.linalg.norm(v)
        if self.register is None:
            raise ContractError("this evolution has no register map; pass a plain vector")
        n, (idx, amps) = _register(state)
        if self.n_qubits is not None and n != self.n_qubits:
            raise ContractError(f"state has {n} qubits, Hamiltonian acts on {self.n_qubits}")
        total = float(np.vdot(amps, amps).real)
        pos = {int(r): k for k, r in enumerate(self.register)}
        v = np.zeros(self.dim, dtype=complex)
        for i, a in zip(idx, amps):
            k = pos.get(int(i))
            if k is not None:
                v[k] = a
        kept = float(np.vdot(v, v).real)
        if total == 0 or kept < total * (1 - 1e-10):
            raise ContractError("initial state has weight outside the working basis")
        return v / math.sqrt(kept)

    # -- spectrum -------------------------------------------------------

    def eigensystem(self):
        if self._eig is None:
            if self.dim > 6000:
                raise SizeLimitError(f"dense diagonalization of dimension {self.dim} refused")
            self._eig = np.linalg.eigh(self.matrix.toarray())
        return self._eig

    def phase(self, energy):
        return (np.asarray(energy) - self.window[0]) * self.tau / (2 * math.pi)

    def energy(self, phase):
        return self.window[0] + 2 * math.pi * np.asarray(phase) / self.tau

    # -- product formula ------------------------------------------------

    def trotter_terms(self):
        """Diagonal part, then off-diagonal groups sorted by key.

        Each group collects the elements whose basis states differ by the
        same set of orbitals; inside a group every state has at most one
        partner, so its exponential is a set of independent 2x2 rotations.
        """
        if self._terms is None:
            H = sp.coo_matrix(sp.triu(self.matrix, k=1))
            diag = self.matrix.diagonal().copy()
            groups = defaultdict(list)
            for r, c, v in zip(H.row, H.col, H.data):
                if v == 0:
                    continue
                if self.labels is None:
                    key = (int(r), int(c))
                else:
                    x, y = int(self.labels[r]), int(self.labels[c])
                    key = tuple(sorted((x & ~y, y & ~x)))
                groups[key].append((r, c, v))
            terms = []
            for key in sorted(groups):
                rows, cols, vals = (np.array(z) for z in zip(*groups[key]))
                if len(set(rows.tolist()) | set(cols.tolist())) != 2 * len(rows):
                    # labels did not separate the group; fall back to single elements
                    terms += [(np.array([r]), np.array([c]), np.array([v])) for r, c, v in zip(rows, cols, vals)]
                else:
                    terms.append((rows, cols, vals))
            self._terms = (diag, terms)
        return self._terms

    def _trotter_apply(self, v):
        """One product-formula step of length ``tau / trotter_steps`` on the columns of ``v``."""
        diag, terms = self.trotter_terms()
        dt = self.tau / self.trotter_steps
        phase = np.exp(-1j * dt * diag)
        v = phase[:, None] * v if v.ndim == 2 else phase * v
        for rows, cols, vals in terms:
            c = np.cos(dt * vals)
            s = -1j * np.sin(dt * vals)
            a, b = v[rows].copy(), v[cols].copy()
            if v.ndim == 2:
                c, s = c[:, None], s[:, None]
            v[rows] = c * a + s * b
            v[cols] = s * a + c * b
        return v

    def forward_step(self):
        """Dense ``U(tau)`` approximating ``exp(-i H tau)`` (exact in exact mode)."""
        if self._step is None:
            if self.exact:
                w, V = self.eigensystem()
                self._step = (V * np.exp(-1j * self.tau * w)) @ V.T
            else:
                if self.dim > DENSE_STEP_LIMIT * 4:
                    raise SizeLimitError("dense Trotter step refused for this dimension")
                u = np.eye(self.dim, dtype=complex)
                for _ in range(self.trotter_steps):
                    u = self._trotter_apply(u)
                self._step = u
        return self._step

    def controlled_unitary(self):
        """``V = exp(i E_lo tau) * conj(U)``: real H makes ``conj(U)`` the product formula for ``exp(+i H tau)``."""
        return np.exp(-1j * self.window[0] * self.tau) * np.conj(self.forward_step())


def trotter_evolution(spec: EvolutionSpec, power: int):
    """Operator applying ``U(tau)^power`` (``U`` the product formula for ``exp(-i H tau)``).

    Accepts a vector on the working basis or any register-like state and
    returns a vector on the working basis.
    """
    if power < 0:
        raise ContractError("power must be non-negative")

    def op(state):
        v = spec.load(state) if not isinstance(state, np.ndarray) else np.asarray(state, dtype=complex).copy()
        if power == 0:
            return v
        if spec.exact:
            w, V = spec.eigensystem()
            return V @ (np.exp(-1j * spec.tau * power * w) * (V.T @ v))
        if spec.dim <= DENSE_STEP_LIMIT:
            U = spec.forward_step()
            for _ in range(power):
                v = U @ v
            return v
        for _ in range(power * spec.trotter_steps):
            v = spec._trotter_apply(v)
        return v

    return op


# --------------------------------------------------------------------------
# results

@dataclass
class QpeResult:
    """Sampled outcome.  ``histogram`` maps bin index to count; for iterative
    runs there is one bin (the assembled k-bit phase) with count 1."""

    method: str
    bits: int
    shots: int
    histogram: Dict[int, int]
    modal_bin: int
    modal_phase: float
    energy_estimate: float
    tau: float
    window: tuple
    trotter_steps: int
    seed: Optional[int]
    probabilities: Optional[np.ndarray] = None
    bit_votes: List[tuple] = field(default_factory=list)

    @property
    def n_ancilla(self):
        return self.bits

    def bin_energy(self, m):
        return self.window[0] + 2 * math.pi * m / (self.tau * 2**self.bits)

    def counts(self):
        out = np.zeros(2**self.bits, dtype=np.int64)
        for m, c in self.histogram.items():
            out[m] = c
        return out

    def histogram_csv(self, all_bins=False):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin_index", "phase", "energy", "count"])
        bins = range(2**self.bits) if all_bins else sorted(self.histogram)
        for m in bins:
            w.writerow([m, f"{m / 2**self.bits:.10g}", f"{self.bin_energy(m):.10g}", self.histogram.get(m, 0)])
        return buf.getvalue()

    def metadata(self):
        return {
            "method": self.method,
            "seed": self.seed,
            "tau": float(f"{self.tau:.10g}"),
            "window": [float(f"{x:.10g}") for x in self.window],
            "trotter_steps": self.trotter_steps,
            "ancillas" if self.method != "iterative" else "k_bits": self.bits,
            "shots": self.shots,
            "modal_bin": self.modal_bin,
            "modal_phase": float(f"{self.modal_phase:.10g}"),
            "energy_estimate": float(f"{self.energy_estimate:.10g}"),
        }

    def to_json(self):
        return json.dumps(self.metadata(), indent=2)


def _result(method, spec, bits, shots, counts, seed, probs=None, votes=()):
    counts = np.asarray(counts)
    modal = int(np.argmax(counts))  # first maximum = lower bin on ties
    hist = {int(m): int(c) for m, c in enumerate(counts) if c}
    phase = modal / 2**bits
    return QpeResult(method, bits, int(shots), hist, modal, phase, float(spec.energy(phase)),
                     spec.tau, spec.window, spec.trotter_steps, seed, probs, list(votes))


def _check_bits(n, cap, what):
    if not 1 <= n <= cap:
        raise SizeLimitError(f"{what} must be between 1 and {cap}, got {n}")


def ancilla_distribution(initial, spec: EvolutionSpec, n_ancilla: int) -> np.ndarray:
    """Exact probability of each ancilla outcome for canonical QPE."""
    _check_bits(n_ancilla, MAX_ANCILLA, "n_ancilla")
    psi = spec.load(initial)
    N = 2**n_ancilla
    if spec.exact:
        w, V = spec.eigensystem()
        amp = V.T @ psi
        k = np.arange(N)
        phases = np.exp(1j * np.outer(k, (w - spec.window[0]) * spec.tau))
        states = (phases * amp[None, :]) @ V.T
    else:
        W = spec.controlled_unitary()
        states = np.empty((N, spec.dim), dtype=complex)
        states[0] = psi
        for k in range(1, N):
            states[k] = W @ states[k - 1]
    a = np.fft.fft(states, axis=0) / N
    p = np.sum(np.abs(a) ** 2, axis=1)
    return p / p.sum()


def canonical_qpe(initial, spec: EvolutionSpec, n_ancilla: int, shots: int, seed: Optional[int] = 0) -> QpeResult:
    p = ancilla_distribution(initial, spec, n_ancilla)
    counts = np.random.default_rng(seed).multinomial(shots, p)
    return _result("canonical", spec, n_ancilla, shots, counts, seed, p)


def spectral_distribution(initial, spec: EvolutionSpec, n_ancilla: int) -> np.ndarray:
    """Analytic outcome distribution: squared overlaps times the QPE kernel."""
    _check_bits(n_ancilla, MAX_ANCILLA, "n_ancilla")
    w, V = spec.eigensystem()
    weights = np.abs(V.T @ spec.load(initial)) ** 2
    N = 2**n_ancilla
    delta = spec.phase(w)[:, None] - np.arange(N)[None, :] / N
    s = np.sin(math.pi * delta)
    with np.errstate(divide="ignore", invalid="ignore"):
        kernel = np.sin(math.pi * N * delta) ** 2 / (N**2 * s**2)
    kernel[np.abs(s) < 1e-12] = 1.0
    p = weights @ kernel
    return p / p.sum()


def spectral_sampler(initial, spec: EvolutionSpec, n_ancilla: int, shots: int, seed: Optional[int] = 0) -> QpeResult:
    p = spectral_distribution(initial, spec, n_ancilla)
    counts = np.random.default_rng(seed).multinomial(shots, p)
    return _result("spectral", spec, n_ancilla, shots, counts, seed, p)


def _power_overlaps(psi, spec, k_bits):
    """<psi| V^(2^j) |psi> for j = 0..k_bits-1."""
    if spec.exact:
        w, V = spec.eigensystem()
        weights = np.abs(V.T @ psi) ** 2
        return [complex(np.sum(weights * np.exp(1j * 2**j * (w - spec.window[0]) * spec.tau)))
                for j in range(k_bits)]
    W = spec.controlled_unitary()
    out = []
    for j in range(k_bits):
        out.append(complex(np.vdot(psi, W @ psi)))
        W = W @ W
    return out


def iterative_qpe(initial, spec: EvolutionSpec, k_bits: int, shots_per_bit: int = 1,
                  seed: Optional[int] = 0) -> QpeResult:
    """Kitaev-style iterative QPE, least significant bit first.

    Bit ``j`` uses ``V^(2^(j-1))`` and a feedback rotation removing the
    already measured lower bits; each shot starts from a fresh copy of the
    initial state, and the bit is the majority vote (ties give 0).
    """
    _check_bits(k_bits, MAX_IQPE_BITS, "k_bits")
    if shots_per_bit < 1:
        raise ContractError("shots_per_bit must be positive")
    rng = np.random.default_rng(seed)
    psi = spec.load(initial)
    c = _power_overlaps(psi, spec, k_bits)
    bits = [0] * (k_bits + 1)  # bits[1] most significant
    tail = 0.0
    votes = []
    for j in range(k_bits, 0, -1):
        omega = -math.pi * tail
        p0 = min(1.0, max(0.0, 0.5 * (1 + (np.exp(1j * omega) * c[j - 1]).real)))
        ones = int(rng.binomial(shots_per_bit, 1 - p0))
        bit = 1 if ones * 2 > shots_per_bit else 0
        votes.append((j, shots_per_bit - ones, ones))
        bits[j] = bit
        tail = (bit + tail) / 2
    m = int("".join(str(b) for b in bits[1:]), 2)
    counts = np.zeros(2**k_bits, dtype=np.int64)
    counts[m] = 1
    return _result("iterative", spec, k_bits, 1, counts, seed, None, votes)


def total_variation(p, q):
    return 0.5 * float(np.sum(np.abs(np.asarray(p, float) - np.asarray(q, float))))


def ground_bin(spec: EvolutionSpec, n_bits: int) -> int:
    """Bin nearest the lowest eigenphase."""
    w, _ = spec.eigensystem()
    return int(round(float(spec.phase(w[0])) * 2**n_bits)) % 2**n_bits

"""Exact reference states: determinant-sector CI, a Jordan-Wigner oracle and overlaps.

Qubit layout
------------
Spatial orbital ``p`` owns two qubits: ``2p`` (spin up) and ``2p + 1``
(spin down).  A statevector index has bit ``q`` set when qubit ``q`` is
occupied, and ket strings are printed with qubit 0 leftmost, so the
four-electron reference in eight qubits reads ``|11110000>``.

A determinant is the product of creation operators taken in ascending
qubit order acting on the vacuum.  Internally the sector Hamiltonian is
assembled in the alpha-block-then-beta-block ordering, where spin-resolved
excitation operators factorize as tensor products, and then conjugated by
the diagonal sign matrix that converts to the interleaved ordering above.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from itertools import combinations
from typing import Optional, Union

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator

from .errors import ContractError, ConvergenceError, SizeLimitError
from .integrals import IntegralSet

DEFAULT_DIM_CAP = 10**6
DENSE_LIMIT = 2000


def bit_strings(norb, nelec):
    """All ``norb``-bit occupation masks with ``nelec`` bits set, ascending."""
    out = [sum(1 << p for p in occ) for occ in combinations(range(norb), nelec)]
    out.sort()
    return out


def popcount(x):
    return bin(x).count("1")


def interleave(alpha_mask, beta_mask, norb):
    """Qubit-register index of the determinant (alpha on even qubits)."""
    idx = 0
    for p in range(norb):
        if alpha_mask >> p & 1:
            idx |= 1 << (2 * p)
        if beta_mask >> p & 1:
            idx |= 1 << (2 * p + 1)
    return idx


def ket(index, n_qubits):
    return "".join("1" if index >> q & 1 else "0" for q in range(n_qubits))


def ket_index(bits: str):
    return sum(1 << q for q, c in enumerate(bits) if c == "1")


@dataclass(frozen=True, order=True)
class SlaterDeterminant:
    alpha_mask: int
    beta_mask: int

    def qubit_index(self, norb):
        return interleave(self.alpha_mask, self.beta_mask, norb)

    def ket(self, norb):
        return ket(self.qubit_index(norb), 2 * norb)


def _string_excitations(strings, norb):
    """Sparse E_pq = a+_p a_q restricted to one spin species, for all p, q."""
    pos = {s: i for i, s in enumerate(strings)}
    dim = len(strings)
    rows = {}
    for col, s in enumerate(strings):
        for q in range(norb):
            if not s >> q & 1:
                continue
            removed = s ^ (1 << q)
            for p in range(norb):
                if p != q and removed >> p & 1:
                    continue
                lo, hi = min(p, q), max(p, q)
                between = removed & (((1 << hi) - 1) ^ ((1 << (lo + 1)) - 1))
                sign = -1.0 if popcount(between) & 1 else 1.0
                entry = rows.setdefault((p, q), ([], [], []))
                entry[0].append(pos[removed | (1 << p)])
                entry[1].append(col)
                entry[2].append(sign)
    ops = {}
    for p in range(norb):
        for q in range(norb):
            r, c, v = rows.get((p, q), ([], [], []))
            ops[p, q] = sp.csr_matrix((v, (r, c)), shape=(dim, dim))
    return ops


class SectorSpace:
    """Determinants with fixed numbers of alpha and beta electrons.

    Determinants are ordered by alpha string, then beta string, each string
    ascending as an integer.
    """

    def __init__(self, norb, n_alpha, n_beta, cap=DEFAULT_DIM_CAP):
        if not (0 <= n_alpha <= norb and 0 <= n_beta <= norb):
            raise ContractError(f"cannot place ({n_alpha}, {n_beta}) electrons in {norb} orbitals")
        self.norb = norb
        self.n_alpha = n_alpha
        self.n_beta = n_beta
        self.alpha_strings = bit_strings(norb, n_alpha)
        self.beta_strings = bit_strings(norb, n_beta)
        self.dim = len(self.alpha_strings) * len(self.beta_strings)
        if self.dim > cap:
            raise SizeLimitError(f"sector dimension {self.dim} exceeds the cap of {cap}")
        self._alpha_pos = {s: i for i, s in enumerate(self.alpha_strings)}
        self._beta_pos = {s: i for i, s in enumerate(self.beta_strings)}

    @classmethod
    def for_integrals(cls, ints: IntegralSet, cap=DEFAULT_DIM_CAP):
        return cls(ints.norb, ints.npairs, ints.npairs, cap=cap)

    @property
    def n_qubits(self):
        return 2 * self.norb

    def index(self, alpha_mask, beta_mask):
        return self._alpha_pos[alpha_mask] * len(self.beta_strings) + self._beta_pos[beta_mask]

    def determinants(self):
        return [SlaterDeterminant(a, b) for a in self.alpha_strings for b in self.beta_strings]

    @cached_property
    def qubit_indices(self):
        return np.array([interleave(a, b, self.norb) for a in self.alpha_strings for b in self.beta_strings],
                        dtype=np.int64)

    @cached_property
    def interleave_signs(self):
        """Sign relating the block-ordered and interleaved creation strings."""
        signs = np.empty(self.dim)
        k = 0
        for a in self.alpha_strings:
            for b in self.beta_strings:
                # beta_q must hop over every alpha_p with p > q
                n = sum(popcount(a >> (q + 1)) for q in range(self.norb) if b >> q & 1)
                signs[k] = -1.0 if n & 1 else 1.0
                k += 1
        return signs

    @cached_property
    def excitation_operators(self):
        """Spin-summed E_pq on the sector in block ordering."""
        ea = _string_excitations(self.alpha_strings, self.norb)
        eb = _string_excitations(self.beta_strings, self.norb)
        ia = sp.identity(len(self.alpha_strings), format="csr")
        ib = sp.identity(len(self.beta_strings), format="csr")
        return {pq: (sp.kron(ea[pq], ib) + sp.kron(ia, eb[pq])).tocsr() for pq in ea}

    def seniority_zero_indices(self):
        """Positions of the closed-shell determinants (alpha mask == beta mask)."""
        if self.n_alpha != self.n_beta:
            return np.array([], dtype=int)
        return np.array([self.index(s, s) for s in self.alpha_strings], dtype=int)


def _effective_one_body(ints):
    return ints.h - 0.5 * np.einsum("prrq->pq", ints.eri)


def build_sector_hamiltonian(ints: IntegralSet, n_alpha=None, n_beta=None, cap=DEFAULT_DIM_CAP,
                             space: Optional[SectorSpace] = None):
    """Sparse Hamiltonian over the (n_alpha, n_beta) determinants.

    Matrix elements follow from H = sum h'_pq E_pq + 1/2 sum (pq|rs) E_pq E_rs
    and carry the interleaved phase convention of the qubit register.
    """
    if n_alpha is None:
        n_alpha = n_beta = ints.npairs
    if n_alpha + n_beta != ints.nelec:
        raise ContractError(f"n_alpha + n_beta = {n_alpha + n_beta} but nelec = {ints.nelec}")
    if space is None:
        space = SectorSpace(ints.norb, n_alpha, n_beta, cap=cap)
    ops = space.excitation_operators
    n = ints.norb
    hp = _effective_one_body(ints)
    H = ints.e_core * sp.identity(space.dim, format="csr")
    for p in range(n):
        for q in range(n):
            if hp[p, q] != 0.0:
                H = H + hp[p, q] * ops[p, q]
    two = sp.csr_matrix((space.dim, space.dim))
    for p in range(n):
        for q in range(n):
            block = ints.eri[p, q]
            nz = np.argwhere(block != 0.0)
            if len(nz) == 0:
                continue
            m = sp.csr_matrix((space.dim, space.dim))
            for r, s in nz:
                m = m + block[r, s] * ops[r, s]
            two = two + ops[p, q] @ m
    H = H + 0.5 * two
    S = sp.diags(space.interleave_signs)
    H = (S @ H @ S).tocsr()
    H.eliminate_zeros()
    return H


def sector_operator(ints: IntegralSet, space: Optional[SectorSpace] = None, cap=DEFAULT_DIM_CAP):
    """Matrix-free version of :func:`build_sector_hamiltonian` for larger sectors."""
    if space is None:
        space = SectorSpace.for_integrals(ints, cap=cap)
    n = ints.norb
    keys = [(p, q) for p in range(n) for q in range(n)]
    ops = space.excitation_operators
    hp = _effective_one_body(ints)
    v = ints.eri.reshape(n * n, n * n)
    signs = space.interleave_signs

    def matvec(x):
        y = signs * np.asarray(x).reshape(-1)
        g = 0.5 * (v @ np.stack([ops[k] @ y for k in keys]))
        out = ints.e_core * y
        for k, key in enumerate(keys):
            out = out + ops[key] @ (g[k] + hp[key] * y)
        return signs * out

    return LinearOperator((space.dim, space.dim), matvec=matvec, dtype=float)


# --------------------------------------------------------------------------
# states

@dataclass(frozen=True, eq=False)
class CiVector:
    space: SectorSpace
    coefficients: np.ndarray

    def normalized(self):
        return CiVector(self.space, self.coefficients / np.linalg.norm(self.coefficients))

    @property
    def basis(self):
        return self.space.determinants()

    def coefficient(self, alpha_mask, beta_mask):
        return self.coefficients[self.space.index(alpha_mask, beta_mask)]

    def sparse_amplitudes(self):
        order = np.argsort(self.space.qubit_indices)
        return self.space.qubit_indices[order], self.coefficients[order]


@dataclass(frozen=True, eq=False)
class QubitState:
    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        if len(self.amplitudes) != 1 << self.n_qubits:
            raise ContractError(f"{len(self.amplitudes)} amplitudes do not match {self.n_qubits} qubits")

    @classmethod
    def basis_state(cls, n_qubits, index):
        amps = np.zeros(1 << n_qubits, dtype=complex)
        amps[index] = 1.0
        return cls(n_qubits, amps)

    @classmethod
    def from_ket(cls, bits: str):
        return cls.basis_state(len(bits), ket_index(bits))

    def norm(self):
        return float(np.linalg.norm(self.amplitudes))

    def amplitude(self, bits: str):
        return self.amplitudes[ket_index(bits)]

    def sparse_amplitudes(self, tol=0.0):
        idx = np.flatnonzero(np.abs(self.amplitudes) > tol)
        return idx.astype(np.int64), self.amplitudes[idx]

    def nonzero_kets(self, tol=1e-12):
        idx, amps = self.sparse_amplitudes(tol)
        return {ket(int(i), self.n_qubits): a for i, a in zip(idx, amps)}


def embed_ci(vec: CiVector) -> QubitState:
    """Place each determinant coefficient at its qubit-register index."""
    amps = np.zeros(1 << vec.space.n_qubits, dtype=complex)
    amps[vec.space.qubit_indices] = vec.coefficients
    return QubitState(vec.space.n_qubits, amps)


def _register(state):
    if isinstance(state, QubitState):
        return state.n_qubits, state.sparse_amplitudes()
    if isinstance(state, CiVector):
        return state.space.n_qubits, state.sparse_amplitudes()
    to_register = getattr(state, "sparse_register", None)
    if to_register is not None:
        n, idx, amps = to_register()
        order = np.argsort(idx)
        return n, (idx[order], amps[order])
    raise TypeError(f"cannot take the overlap of {type(state).__name__}")


def overlap(a, b):
    """<a|b> without normalization, for any mix of register-like states."""
    na, (ia, va) = _register(a)
    nb, (ib, vb) = _register(b)
    if na != nb:
        raise ContractError(f"qubit counts differ: {na} vs {nb}")
    common, pa, pb = np.intersect1d(ia, ib, assume_unique=True, return_indices=True)
    return complex(np.vdot(va[pa], vb[pb]))


def fidelity(a, b):
    """|<a|b>| between the normalized states, clipped to [0, 1]."""
    na = np.sqrt(abs(overlap(a, a)))
    nb = np.sqrt(abs(overlap(b, b)))
    if na == 0 or nb == 0:
        raise ContractError("cannot normalize a zero state")
    return float(min(1.0, abs(overlap(a, b)) / (na * nb)))


def hartree_fock_vector(space: SectorSpace) -> CiVector:
    """The reference determinant with the lowest orbitals occupied."""
    c = np.zeros(space.dim)
    c[space.index((1 << space.n_alpha) - 1, (1 << space.n_beta) - 1)] = 1.0
    return CiVector(space, c)


# --------------------------------------------------------------------------
# eigensolvers

@dataclass
class GroundState:
    energy: float
    vector: Union[CiVector, np.ndarray]
    residual: float
    degenerate: bool
    gap: float
    iterations: int = 0

    def __iter__(self):
        yield self.energy
        yield self.vector


def _fix_sign(v):
    k = np.argmax(np.abs(v))
    return -v if v[k] < 0 else v


def lanczos(matvec, dim, seed=12345, tol=1e-10, max_iter=500):
    """Lowest eigenpair by Lanczos with full reorthogonalization.

    Returns ``(energy, vector, residual, second_ritz_value, iterations)``.
    The start vector is drawn from a fixed seed so repeated runs agree.
    """
    rng = np.random.default_rng(seed)
    q = rng.standard_normal(dim)
    q /= np.linalg.norm(q)
    max_iter = min(max_iter, dim)
    basis = np.empty((max_iter, dim))
    alphas, betas = [], []
    beta = 0.0
    theta, second, resid = None, np.inf, np.inf
    for k in range(max_iter):
        basis[k] = q
        w = matvec(q)
        alpha = float(q @ w)
        w = w - alpha * q - (beta * basis[k - 1] if k else 0.0)
        # two passes of classical Gram-Schmidt keep the basis orthogonal to working precision
        for _ in range(2):
            w -= basis[: k + 1].T @ (basis[: k + 1] @ w)
        beta = float(np.linalg.norm(w))
        alphas.append(alpha)
        betas.append(beta)
        T = np.diag(alphas) + np.diag(betas[:-1], 1) + np.diag(betas[:-1], -1)
        vals, vecs = np.linalg.eigh(T)
        theta = vals[0]
        second = vals[1] if len(vals) > 1 else np.inf
        resid = abs(beta * vecs[-1, 0])
        if resid < tol or beta < 1e-14 or k == max_iter - 1:
            x = basis[: k + 1].T @ vecs[:, 0]
            x /= np.linalg.norm(x)
            true_resid = float(np.linalg.norm(matvec(x) - theta * x))
            if true_resid < max(tol, 1e-9) * max(1.0, abs(theta)) or beta < 1e-14:
                return theta, x, true_resid, second, k + 1
            if k == max_iter - 1:
                raise ConvergenceError(f"Lanczos did not converge in {max_iter} iterations",
                                       residual=true_resid, iterations=k + 1)
        q = w / beta
    raise ConvergenceError("Lanczos stopped without convergence", residual=resid, iterations=max_iter)


def ground_state(matrix, space: Optional[SectorSpace] = None, dense_limit=DENSE_LIMIT,
                 tol=1e-10, max_iter=500, seed=12345, degeneracy_tol=1e-8) -> GroundState:
    """Lowest eigenpair of a symmetric matrix (dense, sparse or matrix-free).

    The eigenvector is normalized with its largest-magnitude coefficient
    positive.  ``degenerate`` is set when the next eigenvalue lies within
    ``degeneracy_tol``; the returned vector is then one member of the
    degenerate subspace.
    """
    dim = matrix.shape[0]
    if dim <= dense_limit:
        if isinstance(matrix, LinearOperator):
            dense = matrix @ np.eye(dim)
        elif sp.issparse(matrix):
            dense = matrix.toarray()
        else:
            dense = np.asarray(matrix, dtype=float)
        vals, vecs = np.linalg.eigh(dense)
        energy, vec = float(vals[0]), vecs[:, 0]
        second = float(vals[1]) if dim > 1 else np.inf
        residual = float(np.linalg.norm(dense @ vec - energy * vec))
        iterations = 0
    else:
        energy, vec, residual, second, iterations = lanczos(
            lambda x: matrix @ x, dim, seed=seed, tol=tol, max_iter=max_iter)
    vec = _fix_sign(vec)
    gap = second - energy
    out = CiVector(space, vec) if space is not None else vec
    return GroundState(energy, out, residual, bool(gap < degeneracy_tol), gap, iterations)


def exact_ground_state(ints: IntegralSet, cap=DEFAULT_DIM_CAP, **kwargs) -> GroundState:
    """Ground state of the singlet-compatible (N/2, N/2) sector."""
    space = SectorSpace.for_integrals(ints, cap=cap)
    if space.dim <= kwargs.get("dense_limit", DENSE_LIMIT) or not np.any(_offdiagonal_eri(ints)):
        H = build_sector_hamiltonian(ints, space=space)
    else:
        H = sector_operator(ints, space=space)
    return ground_state(H, space=space, **kwargs)


def _offdiagonal_eri(ints):
    e = ints.eri.copy()
    for p in range(ints.norb):
        e[p, p, p, p] = 0.0
    return e


# --------------------------------------------------------------------------
# Jordan-Wigner oracle

JW_QUBIT_CAP = 14


def jw_annihilators(n_qubits):
    """Sparse a_q for every qubit, built from Kronecker products of Pauli factors."""
    z = sp.csr_matrix(np.diag([1.0, -1.0]))
    eye = sp.identity(2, format="csr")
    lower = sp.csr_matrix(np.array([[0.0, 1.0], [0.0, 0.0]]))
    ops = []
    for q in range(n_qubits):
        # qubit 0 is the least significant bit, so it is the last kron factor
        factors = [eye] * (n_qubits - q - 1) + [lower] + [z] * q
        op = sp.csr_matrix(np.ones((1, 1)))
        for f in factors:
            op = sp.kron(op, f, format="csr")
        ops.append(op)
    return ops


def jw_oracle(ints: IntegralSet, max_qubits=JW_QUBIT_CAP):
    """Full-register second-quantized Hamiltonian, assembled operator by operator."""
    n_qubits = 2 * ints.norb
    if n_qubits > max_qubits:
        raise SizeLimitError(f"{n_qubits} qubits exceed the oracle cap of {max_qubits}")
    dim = 1 << n_qubits
    a = jw_annihilators(n_qubits)
    ad = [op.T.tocsr() for op in a]
    so = [(p, s) for p in range(ints.norb) for s in (0, 1)]
    H = ints.e_core * sp.identity(dim, format="csr")
    for P, (p, sp_) in enumerate(so):
        for Q, (q, sq) in enumerate(so):
            if sp_ == sq and ints.h[p, q] != 0.0:
                H = H + ints.h[p, q] * (ad[2 * p + sp_] @ a[2 * q + sq])
    # annihilator pairs a_S a_Q, reused across creator pairs
    pairs = {}
    for (q, sq) in so:
        for (s, ss) in so:
            pairs[q, sq, s, ss] = a[2 * s + ss] @ a[2 * q + sq]
    for (p, sigma) in so:
        for (r, tau) in so:
            if (p, sigma) == (r, tau):
                continue
            acc = None
            for q in range(ints.norb):
                for s in range(ints.norb):
                    v = ints.eri[p, q, r, s]
                    if v == 0.0 or (q, sigma) == (s, tau):
                        continue
                    term = v * pairs[q, sigma, s, tau]
                    acc = term if acc is None else acc + term
            if acc is not None:
                H = H + 0.5 * (ad[2 * p + sigma] @ ad[2 * r + tau] @ acc)
    H = H.tocsr()
    H.eliminate_zeros()
    return H


def number_operator(n_qubits):
    idx = np.arange(1 << n_qubits)
    counts = np.array([popcount(int(i)) for i in idx], dtype=float)
    return sp.diags(counts).tocsr()

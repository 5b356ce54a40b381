"""Seniority-zero machinery: pair determinants, DOCI and paired coupled cluster.

A pair determinant is an integer mask with bit ``p`` set when spatial
orbital ``p`` is doubly occupied.  The reference occupies the lowest
``npairs`` orbitals and is always the first basis element.

pCCD is solved configuration-space-wise: the wavefunction ``exp(T)|ref>``
is expanded exactly over the pair basis (``T`` can act at most ``npairs``
times) and projected onto the reference and the pair-singly-excited
determinants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from .errors import ContractError, ConvergenceError, SizeLimitError
from .integrals import IntegralSet

PAIR_BASIS_CAP = 200_000
DENSE_DOCI_LIMIT = 1500


def enumerate_pair_basis(norb: int, npairs: int) -> list:
    """All ``C(norb, npairs)`` pair masks in ascending order (reference first)."""
    if not 0 <= npairs <= norb:
        raise ContractError(f"cannot place {npairs} pairs in {norb} orbitals")
    masks = [sum(1 << p for p in occ) for occ in combinations(range(norb), npairs)]
    masks.sort()
    return masks


def reference_mask(npairs):
    return (1 << npairs) - 1


def pair_ket(mask, norb):
    """Qubit ket string of a pair determinant (both spin qubits of each pair)."""
    return "".join("11" if mask >> p & 1 else "00" for p in range(norb))


def pair_qubit_index(mask, norb):
    idx = 0
    for p in range(norb):
        if mask >> p & 1:
            idx |= 3 << (2 * p)
    return idx


def excite(mask, i, a):
    """Move the pair in orbital ``i`` to orbital ``a``; None if not allowed."""
    if mask >> i & 1 and not mask >> a & 1:
        return mask ^ (1 << i) ^ (1 << a)
    return None


# --------------------------------------------------------------------------
# amplitudes and states

@dataclass(frozen=True, eq=False)
class AmplitudeMatrix:
    """Pair amplitudes ``t[i, a]`` for occupied row ``i`` and virtual column ``a``.

    Rows and columns map to global orbital indices through ``occupied`` and
    ``virtual``; by default these are ``0..npairs-1`` and ``npairs..norb-1``.
    """

    t: np.ndarray
    norb: int
    npairs: int

    def __post_init__(self):
        t = np.array(self.t, dtype=float).reshape(self.npairs, self.norb - self.npairs)
        if not np.all(np.isfinite(t)):
            raise ContractError("amplitudes must be finite")
        t.setflags(write=False)
        object.__setattr__(self, "t", t)

    @classmethod
    def zeros(cls, norb, npairs):
        return cls(np.zeros((npairs, norb - npairs)), norb, npairs)

    @classmethod
    def from_dict(cls, values: Dict[Tuple[int, int], float], norb, npairs):
        """Amplitudes keyed by global ``(i, a)`` orbital indices."""
        t = np.zeros((npairs, norb - npairs))
        for (i, a), v in values.items():
            if not (0 <= i < npairs <= a < norb):
                raise ContractError(f"({i}, {a}) is not an occupied-to-virtual pair excitation")
            t[i, a - npairs] = v
        return cls(t, norb, npairs)

    @property
    def occupied(self):
        return tuple(range(self.npairs))

    @property
    def virtual(self):
        return tuple(range(self.npairs, self.norb))

    def get(self, i, a):
        return self.t[i, a - self.npairs]

    def items(self, include_zero=False):
        """``(i, a, value)`` in global indices, ordered by ``(i, a)``."""
        for i in range(self.npairs):
            for k in range(self.norb - self.npairs):
                v = self.t[i, k]
                if include_zero or v != 0.0:
                    yield i, self.npairs + k, float(v)

    def count_nonzero(self):
        return int(np.count_nonzero(self.t))

    def to_text(self):
        return "".join(f"{i} {a} {v:.16e}\n" for i, a, v in self.items())

    @classmethod
    def from_text(cls, text, norb, npairs):
        values = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ContractError(f"amplitude line {lineno}: expected 'i a value', got {line!r}")
            values[int(parts[0]), int(parts[1])] = float(parts[2])
        return cls.from_dict(values, norb, npairs)


def threshold_amplitudes(t: AmplitudeMatrix, cutoff: float) -> AmplitudeMatrix:
    """Zero every amplitude with ``|t| < cutoff``; the rest are untouched."""
    if cutoff < 0:
        raise ContractError("cutoff must be non-negative")
    kept = np.where(np.abs(t.t) >= cutoff, t.t, 0.0)
    return AmplitudeMatrix(kept, t.norb, t.npairs)


@dataclass(frozen=True, eq=False)
class PairStateVector:
    """Coefficients over a set of pair determinants (full basis or a support set)."""

    norb: int
    npairs: int
    masks: tuple
    coefficients: np.ndarray

    @classmethod
    def from_dict(cls, norb, npairs, coeffs: Dict[int, float]):
        masks = tuple(sorted(coeffs))
        return cls(norb, npairs, masks, np.array([coeffs[m] for m in masks]))

    def as_dict(self):
        return dict(zip(self.masks, self.coefficients))

    def coefficient(self, mask):
        return self.as_dict().get(mask, 0.0)

    def norm(self):
        return float(np.linalg.norm(self.coefficients))

    def normalized(self):
        return PairStateVector(self.norb, self.npairs, self.masks, self.coefficients / self.norm())

    def on_basis(self, masks: Sequence[int]):
        d = self.as_dict()
        return np.array([d.get(m, 0.0) for m in masks])

    def sparse_register(self):
        idx = np.array([pair_qubit_index(m, self.norb) for m in self.masks], dtype=np.int64)
        return 2 * self.norb, idx, np.asarray(self.coefficients, dtype=complex)

    def by_ket(self):
        return {pair_ket(m, self.norb): c for m, c in zip(self.masks, self.coefficients)}


def pair_overlap(a: PairStateVector, b: PairStateVector, normalize=True):
    da, db = a.as_dict(), b.as_dict()
    s = sum(v * db.get(m, 0.0) for m, v in da.items())
    if normalize:
        s /= a.norm() * b.norm()
    return float(s)


# --------------------------------------------------------------------------
# pair space

class PairSpace:
    """Dense pair basis with the index tables used by DOCI and pCCD."""

    def __init__(self, norb, npairs, cap=PAIR_BASIS_CAP):
        self.norb = norb
        self.npairs = npairs
        dim = math.comb(norb, npairs)
        if dim > cap:
            raise SizeLimitError(f"pair basis dimension {dim} exceeds the cap of {cap}")
        self.masks = enumerate_pair_basis(norb, npairs)
        self.dim = dim
        self.position = {m: k for k, m in enumerate(self.masks)}
        self.nvirt = norb - npairs
        ref = reference_mask(npairs)
        # row k of the flattened amplitude vector is (i, a) = divmod(k, nvirt)
        self.singles = np.array([self.position[excite(ref, i, npairs + a)]
                                 for i in range(npairs) for a in range(self.nvirt)], dtype=int)
        src, dst, amp = [], [], []
        for k, m in enumerate(self.masks):
            for i in range(npairs):
                if not m >> i & 1:
                    continue
                for a in range(self.nvirt):
                    target = excite(m, i, npairs + a)
                    if target is not None:
                        src.append(k)
                        dst.append(self.position[target])
                        amp.append(i * self.nvirt + a)
        self.occupations = np.array([[m >> p & 1 for p in range(norb)] for m in self.masks], dtype=float)
        hr, hc, hp, hq = [], [], [], []
        for k, m in enumerate(self.masks):
            for p in range(norb):
                if not m >> p & 1:
                    continue
                for q in range(norb):
                    if not m >> q & 1:
                        hr.append(self.position[m ^ (1 << p) ^ (1 << q)])
                        hc.append(k)
                        hp.append(p)
                        hq.append(q)
        self.hops = tuple(np.array(x, dtype=int) for x in (hr, hc, hp, hq))
        self._src = np.array(src, dtype=int)
        self._dst = np.array(dst, dtype=int)
        self._amp = np.array(amp, dtype=int)

    def apply_t(self, tflat, vec):
        return np.bincount(self._dst, weights=tflat[self._amp] * vec[self._src], minlength=self.dim)

    def expand(self, t: AmplitudeMatrix):
        """Dense coefficient vector of exp(T)|ref> over this basis."""
        return self.expand_flat(np.asarray(t.t).reshape(-1))

    def expand_flat(self, tflat):
        vec = np.zeros(self.dim)
        vec[0] = 1.0
        term = vec.copy()
        for k in range(1, self.npairs + 1):
            term = self.apply_t(tflat, term) / k
            if not term.any():
                break
            vec += term
        return vec

    def state(self, coeffs):
        return PairStateVector(self.norb, self.npairs, tuple(self.masks), np.asarray(coeffs, dtype=float))


def doci_matrix(ints: IntegralSet, space: Optional[PairSpace] = None):
    """Seniority-zero CI Hamiltonian over the pair basis (sparse, symmetric).

    Diagonal: e_core + 2 sum_p h_pp + sum_{p,q} (2 J_pq - K_pq) over occupied
    orbitals; a pair moving from p to q couples with K_pq = (pq|pq).
    """
    if space is None:
        space = PairSpace(ints.norb, ints.npairs)
    return sp.csr_matrix(_doci_dense(ints, space) if space.dim <= DENSE_DOCI_LIMIT
                         else _doci_sparse(ints, space))


def _doci_diagonal(ints, space):
    J = ints.coulomb()
    K = ints.exchange()
    W = 2 * J - K
    occ = space.occupations
    return ints.e_core + 2 * occ @ np.diag(ints.h) + np.einsum("kp,pq,kq->k", occ, W, occ)


def _doci_sparse(ints, space):
    K = ints.exchange()
    rows, cols, p, q = space.hops
    H = sp.csr_matrix((K[p, q], (rows, cols)), shape=(space.dim, space.dim))
    return (H + sp.diags(_doci_diagonal(ints, space))).tocsr()


def _doci_dense(ints, space):
    K = ints.exchange()
    rows, cols, p, q = space.hops
    H = np.zeros((space.dim, space.dim))
    H[rows, cols] = K[p, q]
    H[np.diag_indices(space.dim)] = _doci_diagonal(ints, space)
    return H


def doci_operator(ints: IntegralSet, space: PairSpace):
    """DOCI matrix in the cheapest form for repeated products (dense when small)."""
    return _doci_dense(ints, space) if space.dim <= DENSE_DOCI_LIMIT else _doci_sparse(ints, space)


# --------------------------------------------------------------------------
# pCCD expansion, residuals and solver

def pccd_expand(t: AmplitudeMatrix, space: Optional[PairSpace] = None) -> PairStateVector:
    """exp(T)|ref> in the pair basis.

    With ``space`` the result covers the full basis.  Without it only the
    determinants reachable through non-zero amplitudes are kept, which is
    what large registers with a handful of amplitudes need.
    """
    if space is not None:
        return space.state(space.expand(t))
    amps = list(t.items())
    total = {reference_mask(t.npairs): 1.0}
    term = dict(total)
    for k in range(1, t.npairs + 1):
        nxt = {}
        for mask, c in term.items():
            for i, a, v in amps:
                target = excite(mask, i, a)
                if target is not None:
                    nxt[target] = nxt.get(target, 0.0) + v * c / k
        if not nxt:
            break
        for mask, c in nxt.items():
            total[mask] = total.get(mask, 0.0) + c
        term = nxt
    return PairStateVector.from_dict(t.norb, t.npairs, total)


def pccd_residuals(t: AmplitudeMatrix, ints: IntegralSet, space: Optional[PairSpace] = None,
                   hamiltonian=None):
    """Projected pCCD residuals ``r[i, a]`` and the projected energy."""
    if space is None:
        space = PairSpace(ints.norb, ints.npairs)
    if hamiltonian is None:
        hamiltonian = doci_operator(ints, space)
    r, e = _residual_vector(np.asarray(t.t).reshape(-1), space, hamiltonian)
    return r.reshape(t.npairs, t.norb - t.npairs), e


def _residual_vector(tflat, space, H):
    psi = space.expand_flat(tflat)
    hpsi = H @ psi
    energy = float(hpsi[0])
    r = hpsi[space.singles] - energy * psi[space.singles]
    return r, energy


@dataclass
class PccdSolution:
    amplitudes: AmplitudeMatrix
    energy: float
    residual_norm: float
    iterations: int
    history: list = field(default_factory=list)


def initial_amplitudes(ints: IntegralSet):
    """Perturbative guess -K_ia / (2 (F_aa - F_ii) + 1e-8)."""
    n, o = ints.norb, ints.npairs
    J, K = ints.coulomb(), ints.exchange()
    fock = np.diag(ints.h) + (2 * J[:, :o] - K[:, :o]).sum(axis=1)
    denom = 2 * (fock[None, o:] - fock[:o, None]) + 1e-8
    return AmplitudeMatrix(-K[:o, o:] / denom, n, o)


def solve_pccd(ints: IntegralSet, t0: Optional[AmplitudeMatrix] = None, tol=1e-10, max_iter=100,
               fd_step=1e-6, space: Optional[PairSpace] = None, cap=PAIR_BASIS_CAP) -> PccdSolution:
    """Newton iterations on the pCCD residuals with a central-difference Jacobian.

    Each step is halved until the residual max-norm decreases.  Raises
    :class:`ConvergenceError` when the residual does not drop below ``tol``
    within ``max_iter`` iterations or the Jacobian is singular.
    """
    if space is None:
        space = PairSpace(ints.norb, ints.npairs, cap=cap)
    H = doci_operator(ints, space)
    t = np.array((t0 if t0 is not None else initial_amplitudes(ints)).t, dtype=float).reshape(-1)
    n = len(t)
    r, energy = _residual_vector(t, space, H)
    rnorm = float(np.max(np.abs(r))) if n else 0.0
    history = [rnorm]
    it = 0
    while rnorm >= tol:
        if it >= max_iter:
            raise ConvergenceError(f"pCCD did not converge in {max_iter} iterations (|r| = {rnorm:.3e})",
                                   residual=rnorm, iterations=it)
        it += 1
        jac = np.empty((n, n))
        for k in range(n):
            tp = t.copy()
            tm = t.copy()
            tp[k] += fd_step
            tm[k] -= fd_step
            jac[:, k] = (_residual_vector(tp, space, H)[0] - _residual_vector(tm, space, H)[0]) / (2 * fd_step)
        try:
            if np.linalg.cond(jac) > 1e14:
                raise np.linalg.LinAlgError
            step = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError:
            raise ConvergenceError("singular pCCD Jacobian", residual=rnorm, iterations=it) from None
        scale = 1.0
        for _ in range(40):
            trial = t + scale * step
            r_new, e_new = _residual_vector(trial, space, H)
            new_norm = float(np.max(np.abs(r_new)))
            if new_norm < rnorm or new_norm < tol:
                break
            scale *= 0.5
        else:
            raise ConvergenceError("pCCD line search failed to reduce the residual",
                                   residual=rnorm, iterations=it)
        t, r, energy, rnorm = trial, r_new, e_new, new_norm
        history.append(rnorm)
    return PccdSolution(AmplitudeMatrix(t, ints.norb, ints.npairs), energy, rnorm, it, history)


def doci_ground_state(ints: IntegralSet, space: Optional[PairSpace] = None):
    """Lowest DOCI eigenpair as (energy, PairStateVector)."""
    if space is None:
        space = PairSpace(ints.norb, ints.npairs)
    H = doci_matrix(ints, space).toarray()
    vals, vecs = np.linalg.eigh(H)
    v = vecs[:, 0]
    if v[np.argmax(np.abs(v))] < 0:
        v = -v
    return float(vals[0]), space.state(v)

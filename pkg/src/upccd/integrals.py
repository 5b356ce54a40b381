"""Spatial-orbital Hamiltonians: FCIDUMP I/O, Hubbard chains and orbital rotations.

Orbital indices are 0-based everywhere in memory.  FCIDUMP files use
1-based indices on disk; the parser and writer do the conversion.

Two-electron integrals are kept in chemist notation, ``eri[p, q, r, s] =
(pq|rs)``, as a dense ``norb**4`` array that always carries the full
8-fold permutational symmetry of real orbitals.
"""

from __future__ import annotations

import io
import re
from dataclasses import dataclass
from typing import Optional, TextIO, Union

import numpy as np
import scipy.linalg

from .errors import ContractError, FcidumpParseError


def _symmetrize_h(h):
    h = np.asarray(h, dtype=float)
    return 0.5 * (h + h.T)


def _symmetrize_eri(eri):
    # pairwise averages are exact on inputs that already carry the symmetry
    eri = np.asarray(eri, dtype=float)
    eri = 0.5 * (eri + eri.transpose(1, 0, 2, 3))
    eri = 0.5 * (eri + eri.transpose(0, 1, 3, 2))
    eri = 0.5 * (eri + eri.transpose(2, 3, 0, 1))
    return eri


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class IntegralSet:
    """One- and two-electron integrals plus a scalar core energy.

    Construct through :meth:`create` (or any of the module functions) to get
    a canonicalized, read-only instance.
    """

    norb: int
    nelec: int
    e_core: float
    h: np.ndarray
    eri: np.ndarray

    @classmethod
    def create(cls, h, eri, nelec, e_core=0.0):
        h = np.asarray(h, dtype=float)
        eri = np.asarray(eri, dtype=float)
        norb = h.shape[0]
        if h.shape != (norb, norb) or eri.shape != (norb,) * 4:
            raise ContractError(f"inconsistent integral shapes {h.shape} and {eri.shape}")
        nelec = int(nelec)
        if nelec < 0 or nelec % 2:
            raise ContractError(f"nelec must be even and non-negative, got {nelec}")
        if nelec // 2 > norb:
            raise ContractError(f"{nelec} electrons do not fit in {norb} orbitals as pairs")
        return cls(norb, nelec, float(e_core), _frozen(_symmetrize_h(h)), _frozen(_symmetrize_eri(eri)))

    @property
    def npairs(self):
        return self.nelec // 2

    def coulomb(self):
        """J[p, q] = (pp|qq)."""
        return np.einsum("ppqq->pq", self.eri)

    def exchange(self):
        """K[p, q] = (pq|pq)."""
        return np.einsum("pqpq->pq", self.eri)

    def __eq__(self, other):
        if not isinstance(other, IntegralSet):
            return NotImplemented
        return (
            self.norb == other.norb
            and self.nelec == other.nelec
            and self.e_core == other.e_core
            and np.array_equal(self.h, other.h)
            and np.array_equal(self.eri, other.eri)
        )

    def allclose(self, other, atol=1e-12):
        return (
            self.norb == other.norb
            and self.nelec == other.nelec
            and abs(self.e_core - other.e_core) <= atol
            and np.allclose(self.h, other.h, atol=atol, rtol=0)
            and np.allclose(self.eri, other.eri, atol=atol, rtol=0)
        )

    __hash__ = None


@dataclass(frozen=True)
class HubbardSpec:
    sites: int
    hopping: float = 1.0
    interaction: float = 0.0
    boundary: str = "open"
    filling: Optional[int] = None

    def __post_init__(self):
        if self.sites < 2:
            raise ContractError("a Hubbard chain needs at least two sites")
        if self.boundary not in ("open", "periodic"):
            raise ContractError(f"unknown boundary {self.boundary!r}")
        if self.filling is None:
            object.__setattr__(self, "filling", self.sites)
        if self.filling % 2 or not 0 <= self.filling <= 2 * self.sites:
            raise ContractError(f"filling must be even and at most {2 * self.sites}")

    @classmethod
    def parse(cls, text: str) -> "HubbardSpec":
        """Parse ``L=6,t=1,U=8[,pbc][,N=6]`` as used on the command line."""
        kw = {}
        for item in filter(None, (s.strip() for s in text.split(","))):
            if item.lower() in ("pbc", "periodic"):
                kw["boundary"] = "periodic"
                continue
            if item.lower() in ("obc", "open"):
                kw["boundary"] = "open"
                continue
            if "=" not in item:
                raise ContractError(f"cannot parse Hubbard field {item!r}")
            key, value = (s.strip() for s in item.split("=", 1))
            if key == "L":
                kw["sites"] = int(value)
            elif key == "t":
                kw["hopping"] = float(value)
            elif key == "U":
                kw["interaction"] = float(value)
            elif key in ("N", "n", "filling"):
                kw["filling"] = int(value)
            else:
                raise ContractError(f"unknown Hubbard field {key!r}")
        if "sites" not in kw:
            raise ContractError("Hubbard spec needs L=<sites>")
        return cls(**kw)


@dataclass(frozen=True, eq=False)
class OrbitalRotation:
    """Antisymmetric generator of a real orbital rotation.

    ``active`` optionally lists the orbitals allowed to mix; entries of
    ``kappa`` outside the active block must be zero.
    """

    kappa: np.ndarray
    active: Optional[tuple] = None

    def __post_init__(self):
        kappa = np.array(self.kappa, dtype=float)
        if kappa.ndim != 2 or kappa.shape[0] != kappa.shape[1]:
            raise ContractError("kappa must be a square matrix")
        if not np.allclose(kappa, -kappa.T, atol=1e-12, rtol=0):
            raise ContractError("kappa must be antisymmetric")
        if self.active is not None:
            active = tuple(sorted(int(p) for p in self.active))
            mask = np.zeros(kappa.shape, dtype=bool)
            mask[np.ix_(active, active)] = True
            if np.any(kappa[~mask] != 0.0):
                raise ContractError("kappa has entries outside the active space")
            object.__setattr__(self, "active", active)
        kappa.setflags(write=False)
        object.__setattr__(self, "kappa", kappa)

    @classmethod
    def zeros(cls, norb, active=None):
        return cls(np.zeros((norb, norb)), active)

    @classmethod
    def from_parameters(cls, params, norb, active=None):
        """Build from the packed upper-triangle parameters (see :func:`rotation_indices`)."""
        kappa = np.zeros((norb, norb))
        idx = rotation_indices(norb, active)
        for (p, q), x in zip(idx, params):
            kappa[p, q] = x
            kappa[q, p] = -x
        return cls(kappa, active)

    def parameters(self):
        return np.array([self.kappa[p, q] for p, q in rotation_indices(len(self.kappa), self.active)])

    def matrix(self):
        """Orthogonal matrix whose columns are the rotated orbitals in the old basis.

        The sign convention is ``exp(-kappa)``: a positive ``kappa[0, 1]``
        mixes orbital 1 into orbital 0 with a positive weight.
        """
        return scipy.linalg.expm(-self.kappa)


def rotation_indices(norb, active=None):
    """Independent rotation pairs ``(p, q)`` with ``p < q`` in a fixed order."""
    orbs = range(norb) if active is None else sorted(active)
    orbs = list(orbs)
    return [(p, q) for i, p in enumerate(orbs) for q in orbs[i + 1:]]


# --------------------------------------------------------------------------
# FCIDUMP

_HEADER_END = re.compile(r"&END|/\s*$|^\s*/", re.IGNORECASE)


def _parse_namelist(text):
    body = re.sub(r"&FCI", " ", text, flags=re.IGNORECASE)
    body = re.sub(r"&END", " ", body, flags=re.IGNORECASE).replace("/", " ")
    body = re.sub(r"\s*=\s*", "=", body)
    fields = {}
    key = None
    for token in re.split(r"[,\s]+", body):
        if not token:
            continue
        if "=" in token:
            key, value = token.split("=", 1)
            key = key.upper()
            fields[key] = [value] if value else []
        elif key is not None:
            fields[key].append(token)
    return fields


def parse_fcidump(source: Union[str, TextIO]) -> IntegralSet:
    """Read an FCIDUMP stream (or string) into a canonical :class:`IntegralSet`.

    ORBSYM and ISYM are accepted and ignored.  Integrals not present in the
    file are zero; when an integral appears more than once the last line
    wins.
    """
    if isinstance(source, str):
        source = io.StringIO(source)
    lines = source.read().splitlines()

    header = []
    start = None
    for n, line in enumerate(lines):
        header.append(line)
        if _HEADER_END.search(line):
            start = n + 1
            break
    if start is None:
        raise FcidumpParseError("namelist header is not terminated by &END or /", len(lines))
    fields = _parse_namelist("\n".join(header))

    def _int_field(name):
        if name not in fields or not fields[name]:
            raise FcidumpParseError(f"header is missing {name}", start)
        try:
            return int(fields[name][0])
        except ValueError:
            raise FcidumpParseError(f"{name} is not an integer: {fields[name][0]!r}", start) from None

    norb = _int_field("NORB")
    nelec = _int_field("NELEC")
    ms2 = int(fields.get("MS2", ["0"])[0])
    if ms2 != 0:
        raise FcidumpParseError(f"MS2={ms2} is not supported (closed-shell singlets only)", start)
    if nelec % 2:
        raise FcidumpParseError(f"NELEC={nelec} is odd", start)
    if nelec // 2 > norb:
        raise FcidumpParseError(f"NELEC={nelec} does not fit in NORB={norb}", start)

    h = np.zeros((norb, norb))
    eri = np.zeros((norb,) * 4)
    e_core = 0.0
    for lineno, line in enumerate(lines[start:], start=start + 1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 5:
            raise FcidumpParseError(f"expected 'value i j k l', got {line.strip()!r}", lineno)
        try:
            value = float(parts[0].replace("D", "E").replace("d", "e"))
            i, j, k, l = (int(x) for x in parts[1:])
        except ValueError:
            raise FcidumpParseError(f"malformed integral line {line.strip()!r}", lineno) from None
        if any(x < 0 or x > norb for x in (i, j, k, l)):
            raise FcidumpParseError(f"index out of range [0, {norb}] in {line.strip()!r}", lineno)
        if i == j == k == l == 0:
            e_core = value
        elif k == 0 and l == 0:
            if i == 0 or j == 0:
                raise FcidumpParseError(f"orbital energy lines are not supported: {line.strip()!r}", lineno)
            p, q = i - 1, j - 1
            h[p, q] = h[q, p] = value
        else:
            if 0 in (i, j, k, l):
                raise FcidumpParseError(f"incomplete two-electron index in {line.strip()!r}", lineno)
            p, q, r, s = i - 1, j - 1, k - 1, l - 1
            for a, b, c, d in ((p, q, r, s), (q, p, r, s), (p, q, s, r), (q, p, s, r)):
                eri[a, b, c, d] = value
                eri[c, d, a, b] = value
    return IntegralSet.create(h, eri, nelec, e_core)


def read_fcidump(path) -> IntegralSet:
    with open(path) as f:
        return parse_fcidump(f)


def _fmt(value):
    return f"{value:.16e}"


def write_fcidump(ints: IntegralSet, stream: Optional[TextIO] = None) -> str:
    """Serialize in canonical order; zero integrals are omitted.

    Returns the text; when ``stream`` is given it is also written there.
    """
    n = ints.norb
    out = [f"&FCI NORB={n},NELEC={ints.nelec},MS2=0,",
           " ORBSYM=" + ",".join("1" * n) + ("," if n else ""),
           " ISYM=1,",
           "&END"]
    for p in range(n):
        for q in range(p + 1):
            pq = p * (p + 1) // 2 + q
            for r in range(p + 1):
                for s in range(r + 1):
                    if r * (r + 1) // 2 + s > pq:
                        continue
                    v = ints.eri[p, q, r, s]
                    if v != 0.0:
                        out.append(f"{_fmt(v)} {p + 1} {q + 1} {r + 1} {s + 1}")
    for p in range(n):
        for q in range(p + 1):
            v = ints.h[p, q]
            if v != 0.0:
                out.append(f"{_fmt(v)} {p + 1} {q + 1} 0 0")
    out.append(f"{_fmt(ints.e_core)} 0 0 0 0")
    text = "\n".join(out) + "\n"
    if stream is not None:
        stream.write(text)
    return text


# --------------------------------------------------------------------------
# model Hamiltonians and basis changes

def hubbard_integrals(spec: HubbardSpec) -> IntegralSet:
    """Site-basis integrals of a 1D Hubbard chain.

    With periodic boundaries every bond contributes ``-t``, so the
    two-site ring carries a doubled hopping.
    """
    L = spec.sites
    h = np.zeros((L, L))
    bonds = [(p, p + 1) for p in range(L - 1)]
    if spec.boundary == "periodic":
        bonds.append((L - 1, 0))
    for p, q in bonds:
        h[p, q] -= spec.hopping
        h[q, p] -= spec.hopping
    eri = np.zeros((L,) * 4)
    for p in range(L):
        eri[p, p, p, p] = spec.interaction
    return IntegralSet.create(h, eri, spec.filling, 0.0)


def transform_integrals(ints: IntegralSet, coeff) -> IntegralSet:
    """Express the Hamiltonian in the orbitals given by the columns of ``coeff``."""
    c = np.asarray(coeff, dtype=float)
    if c.shape != (ints.norb, ints.norb):
        raise ContractError(f"coefficient matrix shape {c.shape} does not match norb={ints.norb}")
    h = c.T @ ints.h @ c
    n = ints.norb
    if n <= 24:
        cc = np.kron(c, c)
        eri = (cc.T @ ints.eri.reshape(n * n, n * n) @ cc).reshape((n,) * 4)
    else:
        eri = np.tensordot(ints.eri, c, axes=([0], [0]))      # qrs i
        eri = np.tensordot(eri, c, axes=([0], [0]))           # rs i j
        eri = np.tensordot(eri, c, axes=([0], [0]))           # s i j k
        eri = np.tensordot(eri, c, axes=([0], [0]))           # i j k l
    return IntegralSet.create(h, eri, ints.nelec, ints.e_core)


def rotate_orbitals(ints: IntegralSet, rot: OrbitalRotation) -> IntegralSet:
    if rot.kappa.shape != (ints.norb, ints.norb):
        raise ContractError(f"kappa shape {rot.kappa.shape} does not match norb={ints.norb}")
    return transform_integrals(ints, rot.matrix())


def rhf_orbitals(ints: IntegralSet, max_iter=200, tol=1e-10, damping=0.3):
    """Closed-shell Hartree-Fock orbitals in the basis of ``ints``.

    Returns ``(energy, coeff)`` with orbitals ordered by orbital energy.
    Starts from the eigenvectors of the one-electron matrix; plain damped
    Roothaan iterations are enough at the sizes handled here.
    """
    nocc = ints.npairs
    eps, c = np.linalg.eigh(ints.h)
    dm = 2.0 * c[:, :nocc] @ c[:, :nocc].T
    energy = None
    for _ in range(max_iter):
        j = np.einsum("pqrs,rs->pq", ints.eri, dm)
        k = np.einsum("prqs,rs->pq", ints.eri, dm)
        fock = ints.h + j - 0.5 * k
        new_energy = 0.5 * np.sum(dm * (ints.h + fock)) + ints.e_core
        eps, c = np.linalg.eigh(fock)
        new_dm = 2.0 * c[:, :nocc] @ c[:, :nocc].T
        change = np.abs(new_dm - dm).max()
        dm = (1 - damping) * new_dm + damping * dm
        if energy is not None and abs(new_energy - energy) < tol and change < np.sqrt(tol):
            energy = new_energy
            break
        energy = new_energy
    # fix column signs so the largest component of each orbital is positive
    for k in range(c.shape[1]):
        if c[np.argmax(np.abs(c[:, k])), k] < 0:
            c[:, k] *= -1
    return energy, c


def random_integrals(norb, nelec, rng=None, scale=1.0) -> IntegralSet:
    """Random real integrals with the right permutational symmetry (testing aid)."""
    rng = np.random.default_rng(rng)
    h = rng.normal(scale=scale, size=(norb, norb))
    eri = rng.normal(scale=0.5 * scale, size=(norb,) * 4)
    return IntegralSet.create(h, eri, nelec, rng.normal())

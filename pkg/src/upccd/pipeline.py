"""End-to-end driver: integrals -> (oo-)pCCD -> thresholded UpCCD -> fidelities.

Hubbard models arrive in the site basis, where the reference determinant is
not a Hartree-Fock state; they are moved to RHF orbitals first.  FCIDUMP
input is taken to be in its Hartree-Fock basis already.  The HF fidelity is
always measured in that HF basis, the UpCCD fidelity in the orbitals used
for pCCD (optimized ones when orbital optimization is on), each against
the exact ground state expressed in the same orbitals.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional

from .circuit import GateMetrics, UpccdTerm, build_upccd, gate_metrics, terms_from_amplitudes, upccd_state
from .errors import ConvergenceError
from .exactref import (GroundState, SectorSpace, exact_ground_state, fidelity, hartree_fock_vector)
from .integrals import HubbardSpec, IntegralSet, OrbitalRotation, hubbard_integrals, rhf_orbitals, transform_integrals
from .orbital_opt import OoConfig, OoPccdResult, optimize_orbitals
from .pairspace import AmplitudeMatrix, PccdSolution, pccd_expand, solve_pccd, threshold_amplitudes

log = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.05


def hf_basis(ints: IntegralSet, hubbard: bool) -> IntegralSet:
    if not hubbard:
        return ints
    _, coeff = rhf_orbitals(ints)
    return transform_integrals(ints, coeff)


def load_system(fcidump=None, hubbard=None) -> IntegralSet:
    """Integrals in the HF basis from exactly one of the two sources."""
    from .integrals import read_fcidump

    if (fcidump is None) == (hubbard is None):
        raise ValueError("give exactly one of an FCIDUMP path or a Hubbard spec")
    if fcidump is not None:
        return read_fcidump(fcidump)
    spec = hubbard if isinstance(hubbard, HubbardSpec) else HubbardSpec.parse(hubbard)
    return hf_basis(hubbard_integrals(spec), hubbard=True)


@dataclass
class PccdRun:
    integrals: IntegralSet          # orbitals the amplitudes refer to
    solution: PccdSolution
    oo: Optional[OoPccdResult] = None

    @property
    def energy(self):
        return self.solution.energy

    @property
    def amplitudes(self) -> AmplitudeMatrix:
        return self.solution.amplitudes


def run_pccd(ints: IntegralSet, oo=False, config: Optional[OoConfig] = None,
             initial: Optional[OrbitalRotation] = None) -> PccdRun:
    if not oo:
        return PccdRun(ints, solve_pccd(ints))
    res = optimize_orbitals(ints, config, initial)
    return PccdRun(res.integrals, res.solution, res)


DEFAULT_RAMP = (0.1, 0.25, 0.5, 0.75)


def scale_interaction(ints: IntegralSet, lam: float) -> IntegralSet:
    return IntegralSet.create(ints.h, lam * ints.eri, ints.nelec, ints.e_core)


def run_pccd_best(ints, config=None, starts=(), ramp=DEFAULT_RAMP) -> PccdRun:
    """oo-pCCD from several starting rotations; the lowest energy wins.

    The pCCD energy surface over orbital rotations has several local minima
    for strongly correlated systems.  Besides the input orbitals and any
    explicit ``starts`` (scans pass the previous point), the two-electron
    integrals are switched on gradually along ``ramp`` with the rotation
    carried from one stage to the next, which tends to follow the branch
    that connects to the weakly correlated limit.
    """
    best = run_pccd(ints, True, config)
    candidates = list(starts)
    if ramp:
        rot = None
        try:
            for lam in ramp:
                rot = run_pccd(scale_interaction(ints, lam), True, config, rot).oo.rotation
            candidates.append(rot)
        except ConvergenceError as exc:
            log.warning("interaction ramp failed: %s", exc)
    for rot in candidates:
        if rot is None:
            continue
        try:
            cand = run_pccd(ints, True, config, rot)
        except ConvergenceError as exc:
            log.warning("extra oo-pCCD start failed: %s", exc)
            continue
        if cand.energy < best.energy - 1e-10:
            best = cand
    return best


@dataclass
class PreparedState:
    terms: List[UpccdTerm]
    threshold: float
    survivors: int
    state: object
    metrics: GateMetrics


def prepare(run: PccdRun, threshold=DEFAULT_THRESHOLD, order="ascending") -> PreparedState:
    ints = run.integrals
    kept = threshold_amplitudes(run.amplitudes, threshold)
    terms = terms_from_amplitudes(kept, order)
    circ = build_upccd(terms, ints.norb, ints.npairs)
    return PreparedState(terms, threshold, len(terms), upccd_state(terms, ints.norb, ints.npairs), gate_metrics(circ))


@dataclass
class FidelityReport:
    exact_energy: float
    upccd_fidelity: float
    hf_fidelity: float
    pccd_fidelity: float
    degenerate: bool = False
    extra: dict = field(default_factory=dict)


def fidelities(hf_ints: IntegralSet, run: PccdRun, prepared: PreparedState, exact_kwargs=None) -> FidelityReport:
    """UpCCD and HF fidelities with the exact ground state (each in its own orbitals)."""
    exact_kwargs = exact_kwargs or {}
    gs_hf: GroundState = exact_ground_state(hf_ints, **exact_kwargs)
    f_hf = abs(float(gs_hf.vector.coefficients[
        gs_hf.vector.space.index((1 << hf_ints.npairs) - 1, (1 << hf_ints.npairs) - 1)]))
    if run.integrals is hf_ints:
        gs = gs_hf
    else:
        gs = exact_ground_state(run.integrals, **exact_kwargs)
    f_up = fidelity(prepared.state, gs.vector)
    f_pccd = fidelity(pccd_expand(run.amplitudes), gs.vector)
    return FidelityReport(gs_hf.energy, f_up, min(1.0, f_hf), f_pccd, gs_hf.degenerate or gs.degenerate)


def hf_state(ints: IntegralSet):
    return hartree_fock_vector(SectorSpace.for_integrals(ints))

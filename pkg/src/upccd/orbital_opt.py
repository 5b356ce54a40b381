"""Orbital-optimized pCCD: minimize the projected pCCD energy over orbital rotations.

The optimizer is Adam on the packed rotation parameters with the step
length capped by an adaptive trust radius.  Steps that raise the energy
are rejected and shrink the radius; accepted steps grow it.  Gradients
are central finite differences of full pCCD solves.

When the gradient vanishes the diagonal curvature is probed with a wider
stencil; a clearly negative direction means the start sat on a saddle or
maximum (the site basis of a symmetric Hubbard dimer does), and the
optimizer steps along it instead of stopping.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import ConvergenceError
from .integrals import IntegralSet, OrbitalRotation, rotate_orbitals, rotation_indices
from .pairspace import AmplitudeMatrix, PairSpace, PccdSolution, solve_pccd

log = logging.getLogger(__name__)


@dataclass
class OoConfig:
    """Hyperparameters.  None of these are fixed by the method itself; the
    defaults below are the package's choice."""

    learning_rate: float = 0.05
    trust_radius: float = 0.2
    max_trust_radius: float = 0.5
    grow: float = 1.2
    shrink: float = 0.5
    gradient_tol: float = 1e-5
    max_iter: int = 500
    fd_step: float = 1e-4
    curvature_step: float = 1e-2
    curvature_tol: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    active: Optional[Sequence[int]] = None
    min_trust_radius: float = 1e-9


@dataclass
class TraceRow:
    iteration: int
    energy: float
    gradient_norm: float
    trust_radius: float


@dataclass
class OoPccdResult:
    rotation: OrbitalRotation
    integrals: IntegralSet
    solution: PccdSolution
    energies: List[float]
    gradient_norm: float
    converged: bool
    iterations: int
    trace: List[TraceRow] = field(default_factory=list)

    @property
    def energy(self):
        return self.solution.energy

    def trace_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "energy", "gradient_norm", "trust_radius"])
        for row in self.trace:
            w.writerow([row.iteration, f"{row.energy:.10g}", f"{row.gradient_norm:.10g}",
                        f"{row.trust_radius:.10g}"])
        return buf.getvalue()


class PccdEnergy:
    """pCCD energy as a function of packed rotation parameters, with warm starts."""

    def __init__(self, ints: IntegralSet, active=None):
        self.ints = ints
        self.active = None if active is None else tuple(sorted(active))
        self.space = PairSpace(ints.norb, ints.npairs)
        self.last: Optional[AmplitudeMatrix] = None
        self.calls = 0

    def rotation(self, params):
        return OrbitalRotation.from_parameters(params, self.ints.norb, self.active)

    def solve(self, params, t0=None) -> tuple:
        rotated = rotate_orbitals(self.ints, self.rotation(params))
        guess = t0 if t0 is not None else self.last
        try:
            sol = solve_pccd(rotated, t0=guess, space=self.space)
        except ConvergenceError:
            if guess is None:
                raise
            sol = solve_pccd(rotated, space=self.space)
        self.calls += 1
        return rotated, sol

    def __call__(self, params, t0=None):
        return self.solve(params, t0)[1].energy


def pccd_energy_at(kappa: OrbitalRotation, ints: IntegralSet, t0: Optional[AmplitudeMatrix] = None) -> float:
    """pCCD energy of the Hamiltonian rotated by ``kappa``."""
    return solve_pccd(rotate_orbitals(ints, kappa), t0=t0).energy


def _fd_gradient(func, x, h, t0):
    g = np.empty_like(x)
    f_plus = np.empty_like(x)
    f_minus = np.empty_like(x)
    for k in range(len(x)):
        xp = x.copy()
        xm = x.copy()
        xp[k] += h
        xm[k] -= h
        f_plus[k] = func(xp, t0)
        f_minus[k] = func(xm, t0)
        g[k] = (f_plus[k] - f_minus[k]) / (2 * h)
    return g, f_plus, f_minus


def optimize_orbitals(ints: IntegralSet, config: Optional[OoConfig] = None,
                      initial: Optional[OrbitalRotation] = None) -> OoPccdResult:
    """Run oo-pCCD from ``initial`` (default: the input orbitals).

    Returns the best point seen.  ``converged`` is False when the iteration
    budget ran out or the trust radius collapsed; a warning is logged.
    """
    cfg = config or OoConfig()
    energy_fn = PccdEnergy(ints, cfg.active)
    n = len(rotation_indices(ints.norb, energy_fn.active))
    x = np.zeros(n) if initial is None else initial.parameters()
    rotated, sol = energy_fn.solve(x)
    energy_fn.last = sol.amplitudes
    energy = sol.energy
    best = (energy, x.copy(), rotated, sol)
    energies = [energy]
    trace = []
    m = np.zeros(n)
    v = np.zeros(n)
    radius = cfg.trust_radius
    grad = None
    converged = n == 0
    gnorm = 0.0
    it = 0
    adam_t = 0
    while not converged and it < cfg.max_iter:
        it += 1
        if grad is None:
            grad = _fd_gradient(energy_fn, x, cfg.fd_step, sol.amplitudes)[0]
        gnorm = float(np.max(np.abs(grad)))
        trace.append(TraceRow(it, energy, gnorm, radius))
        if gnorm < cfg.gradient_tol:
            _, fp, fm = _fd_gradient(energy_fn, x, cfg.curvature_step, sol.amplitudes)
            curvature = (fp + fm - 2 * energy) / cfg.curvature_step**2
            k = int(np.argmin(curvature))
            if curvature[k] >= -cfg.curvature_tol:
                converged = True
                break
            # leave a stationary point that is not a minimum along coordinate k
            step = np.zeros(n)
            step[k] = radius if fp[k] <= fm[k] else -radius
            m[:] = 0.0
            v[:] = 0.0
            adam_t = 0
        else:
            adam_t += 1
            m = cfg.beta1 * m + (1 - cfg.beta1) * grad
            v = cfg.beta2 * v + (1 - cfg.beta2) * grad**2
            mhat = m / (1 - cfg.beta1**adam_t)
            vhat = v / (1 - cfg.beta2**adam_t)
            step = -cfg.learning_rate * mhat / (np.sqrt(vhat) + cfg.eps)
        length = np.linalg.norm(step)
        if length > radius:
            step *= radius / length
        trial = x + step
        new_rot, new_sol = energy_fn.solve(trial, sol.amplitudes)
        if new_sol.energy <= energy:
            x, energy, rotated, sol = trial, new_sol.energy, new_rot, new_sol
            energy_fn.last = sol.amplitudes
            energies.append(energy)
            grad = None
            radius = min(radius * cfg.grow, cfg.max_trust_radius)
            if energy < best[0]:
                best = (energy, x.copy(), rotated, sol)
        else:
            radius *= cfg.shrink
            # stale momentum can point uphill; restart from the bare gradient
            m[:] = 0.0
            v[:] = 0.0
            adam_t = 0
            if radius < cfg.min_trust_radius:
                log.warning("trust radius collapsed at iteration %d (|g| = %.3e)", it, gnorm)
                break
    if not converged:
        log.warning("orbital optimization stopped without convergence after %d iterations (|g| = %.3e)",
                    it, gnorm)
    e_best, x_best, rot_best, sol_best = best
    return OoPccdResult(
        rotation=energy_fn.rotation(x_best),
        integrals=rot_best,
        solution=sol_best,
        energies=energies,
        gradient_norm=gnorm,
        converged=converged,
        iterations=it,
        trace=trace,
    )

"""Paired coupled-cluster state preparation for quantum phase estimation.

oo-pCCD amplitudes are loaded into a unitary paired-doubles circuit
(UpCCD); exact references, statevector simulation and phase estimation
live alongside so the whole chain can be checked on small systems.
"""

__version__ = "0.1.0"

from .errors import (ContractError, ConvergenceError, FcidumpParseError, InputError, SizeLimitError,  # noqa: F401
                     UpccdError)
from .integrals import (HubbardSpec, IntegralSet, OrbitalRotation, hubbard_integrals,  # noqa: F401
                        parse_fcidump, read_fcidump, rotate_orbitals, write_fcidump)

"""
Wide-band Redfield dissipator in the adiabatic Floquet basis.

With c_m = U^+ d_m U and the Fermi-weighted images

    (Dn)_NM       = (U^+ d_n U)_NM   f(E_N - E_M)
    (Dn~)_NM      = (U^+ d_n U)_NM   (1 - f(E_N - E_M))
    (Dn+)_NM      = (U^+ d_n^+ U)_NM f(E_N - E_M)
    (Dn~+)_NM     = (U^+ d_n^+ U)_NM (1 - f(E_N - E_M))

the operator is

    L rho = sum_mn Gamma_mn / 2hbar [ c_m^+ Dn rho + c_m Dn+ rho
                                      - c_m^+ rho Dn~ - c_m rho Dn~+ ] + h.c.

and d rho / dt = -L rho. Dn carries the emptying weight 1 - f(eps) of a
level at eps and Dn+ the filling weight f(eps), which makes L trace
preserving for real symmetric Gamma and stationary on Fermi-Dirac states.
Principal-value (level shift) terms are not included.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .exceptions import DimensionMismatch, NumericalConsistencyError
from .floquet import AdiabaticFrame

logger = logging.getLogger(__name__)

HBAR = 1.0
RATE_ROUNDOFF = 1e-12
RATE_TOLERANCE = 1e-8


def fermi(E, kT: float):
    """1 / (exp(E / kT) + 1), evaluated without overflow."""
    if kT <= 0:
        raise ValueError("kT must be positive.")
    value = expit(-np.asarray(E, dtype=float) / kT)
    return float(value) if np.ndim(value) == 0 else value


@dataclass(frozen=True)
class JumpMatrices:
    lowering: tuple
    raising: tuple
    Dn: tuple
    Dn_tilde: tuple
    Dn_plus: tuple
    Dn_tilde_plus: tuple

    @property
    def num_orbitals(self) -> int:
        return len(self.lowering)

    @property
    def dim(self) -> int:
        return self.lowering[0].shape[0]


def build_jump_matrices(frame: AdiabaticFrame, annihilators, kT: float) -> JumpMatrices:
    U = frame.U
    occupation = fermi(frame.gaps, kT)
    vacancy = 1.0 - occupation
    lowering, raising = [], []
    Dn, Dn_tilde, Dn_plus, Dn_tilde_plus = [], [], [], []
    for d in annihilators:
        low = U.conj().T @ d @ U
        high = U.conj().T @ d.conj().T @ U
        lowering.append(low)
        raising.append(high)
        Dn.append(low * occupation)
        Dn_tilde.append(low * vacancy)
        Dn_plus.append(high * occupation)
        Dn_tilde_plus.append(high * vacancy)
    return JumpMatrices(
        lowering=tuple(lowering),
        raising=tuple(raising),
        Dn=tuple(Dn),
        Dn_tilde=tuple(Dn_tilde),
        Dn_plus=tuple(Dn_plus),
        Dn_tilde_plus=tuple(Dn_tilde_plus),
    )


class RedfieldDissipator:
    """
    -L applied to density matrices, with the left-multiplying part
    summed once so repeated application costs 1 + 2k matrix products
    for k nonzero hybridization entries.
    """

    def __init__(self, jumps: JumpMatrices, gamma):
        gamma = np.asarray(gamma, dtype=float)
        if gamma.shape != (jumps.num_orbitals, jumps.num_orbitals):
            raise DimensionMismatch(
                f"Hybridization matrix shape {gamma.shape} does not match "
                f"{jumps.num_orbitals} orbitals."
            )
        self.jumps = jumps
        self.dim = jumps.dim
        self.terms = [
            (m, n, gamma[m, n] / (2.0 * HBAR))
            for m in range(jumps.num_orbitals)
            for n in range(jumps.num_orbitals)
            if gamma[m, n] != 0
        ]
        left = np.zeros((self.dim, self.dim), dtype=complex)
        for m, n, coef in self.terms:
            left += coef * (jumps.raising[m] @ jumps.Dn[n] + jumps.lowering[m] @ jumps.Dn_plus[n])
        self.left = left

    @property
    def is_zero(self) -> bool:
        return not self.terms

    def __call__(self, rho: np.ndarray) -> np.ndarray:
        if rho.shape != (self.dim, self.dim):
            raise DimensionMismatch(f"Density matrix shape {rho.shape} does not match dimension {self.dim}.")
        if self.is_zero:
            return np.zeros((self.dim, self.dim), dtype=complex)
        jumps = self.jumps
        half = self.left @ rho
        for m, n, coef in self.terms:
            half -= coef * (
                jumps.raising[m] @ rho @ jumps.Dn_tilde[n]
                + jumps.lowering[m] @ rho @ jumps.Dn_tilde_plus[n]
            )
        return -(half + half.conj().T)

    def secular_rates(self) -> np.ndarray:
        """
        rates[N, M] = k_{N->M} = (-L |N><N|)_MM, zero on the diagonal.

        For M != N only the right-multiplied terms reach the MM element:
        (c |N><N| Dn~)_MM = c_MN (Dn~)_NM, so every N is done in one pass.
        """
        jumps = self.jumps
        rates = np.zeros((self.dim, self.dim))
        for m, n, coef in self.terms:
            rates += 2.0 * coef * np.real(
                jumps.raising[m].T * jumps.Dn_tilde[n] + jumps.lowering[m].T * jumps.Dn_tilde_plus[n]
            )
        np.fill_diagonal(rates, 0.0)
        worst = rates.min() if rates.size else 0.0
        if worst < -RATE_TOLERANCE:
            raise NumericalConsistencyError(f"Secular rate {worst:.3e} is negative beyond tolerance.")
        if worst < -RATE_ROUNDOFF:
            logger.debug("Clamping secular rates down to %.3e.", worst)
        return np.clip(rates, 0.0, None)


def apply_dissipator(rho: np.ndarray, jumps: JumpMatrices, gamma) -> np.ndarray:
    return RedfieldDissipator(jumps, gamma)(rho)


def secular_rates(jumps: JumpMatrices, gamma) -> np.ndarray:
    return RedfieldDissipator(jumps, gamma).secular_rates()

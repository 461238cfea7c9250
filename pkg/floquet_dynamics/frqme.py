"""
Floquet quantum master equation on the fully quantised vibronic space.

The inner block of the Floquet index is phonon (x) electronic, so the
block dimension is ``n_phonon * 4`` and an operator acting on the
phonons alone is ``np.kron(op, I_el)``. Propagation happens in the
eigenbasis of the static Floquet Hamiltonian, where the commutator is the
exact phase exp(-i (E_N - E_M) t); RK4 only sees the dissipator
(integrating-factor, or Lawson, RK4).
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import driven_model
from .dissipator import RedfieldDissipator, build_jump_matrices
from .ensemble import TimeSeries, output_grid
from .exceptions import PhononTruncationError, StepSizeError
from .floquet import FloquetOperator, assemble, diagonalize_continuous, lift_annihilators
from .fock import DONOR_ONLY, ElectronicFockSpace, build_fock_space, one_body_operator

logger = logging.getLogger(__name__)

TRACE_TOLERANCE = 1e-6
TRUNCATION_HARD_SIGMAS = 3.0
TRUNCATION_SOFT_SIGMAS = 5.0


def boson_annihilator(n_phonon: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, n_phonon, dtype=float)), k=1)


@dataclass(frozen=True)
class VibronicFloquetSpace:
    electronic: ElectronicFockSpace = field(repr=False)
    n_phonon: int
    n_max: int

    @property
    def block_dim(self) -> int:
        return self.n_phonon * self.electronic.dim

    @property
    def dim(self) -> int:
        return self.block_dim * (2 * self.n_max + 1)

    @property
    def harmonics(self) -> range:
        return range(-self.n_max, self.n_max + 1)

    def index(self, phonon: int, electronic: int, n: int) -> int:
        if not 0 <= phonon < self.n_phonon:
            raise IndexError(f"Phonon level {phonon} outside truncation {self.n_phonon}.")
        if not -self.n_max <= n <= self.n_max:
            raise IndexError(f"Harmonic {n} outside truncation +/-{self.n_max}.")
        return (n + self.n_max) * self.block_dim + phonon * self.electronic.dim + electronic

    def annihilator(self) -> np.ndarray:
        return boson_annihilator(self.n_phonon)

    def phonon_operator(self, op: np.ndarray) -> np.ndarray:
        return np.kron(op, np.eye(self.electronic.dim))

    def electronic_operator(self, op: np.ndarray) -> np.ndarray:
        return np.kron(np.eye(self.n_phonon), op)


def build_vibronic_space(n_phonon: int = 100, n_max: int = 2, electronic: ElectronicFockSpace | None = None):
    if n_phonon < 1:
        raise ValueError(f"n_phonon must be at least 1, got {n_phonon}.")
    if n_max < 0:
        raise ValueError(f"n_max must be non-negative, got {n_max}.")
    return VibronicFloquetSpace(electronic=electronic or build_fock_space(2), n_phonon=n_phonon, n_max=n_max)


def bose_occupation(params: driven_model.ModelParams) -> float:
    return 1.0 / math.expm1(params.hbar_omega / params.kT)


def check_phonon_truncation(params: driven_model.ModelParams, n_phonon: int) -> float:
    """
    Compare n_phonon with the phonon-number spread of a thermal, fully
    displaced oscillator: mean nbar + S, variance nbar(nbar + 1) + S(2 nbar + 1),
    with Huang-Rhys factor S = (g / hbar_omega)^2. Returns the headroom in
    standard deviations.
    """
    nbar = bose_occupation(params)
    huang_rhys = (params.g / params.hbar_omega) ** 2
    mean = nbar + huang_rhys
    spread = math.sqrt(nbar * (nbar + 1.0) + huang_rhys * (2.0 * nbar + 1.0))
    headroom = (n_phonon - mean) / spread if spread > 0 else math.inf
    if headroom < TRUNCATION_HARD_SIGMAS:
        raise PhononTruncationError(
            f"n_phonon={n_phonon} leaves {headroom:.2f} standard deviations above the mean "
            f"phonon number {mean:.2f}; need at least {TRUNCATION_HARD_SIGMAS:g}."
        )
    if headroom < TRUNCATION_SOFT_SIGMAS:
        logger.warning(
            "n_phonon=%d is within %.2f standard deviations of the mean phonon number %.2f; "
            "check convergence in n_phonon.",
            n_phonon,
            headroom,
            mean,
        )
    return headroom


def build_vibronic_hamiltonian(params: driven_model.ModelParams, space: VibronicFloquetSpace) -> FloquetOperator:
    """
    H^(0) = hbar_omega (a^+ a + 1/2) + g (a + a^+) n_D + eps_D n_D + W (d_D^+ d_A + h.c.)
    H^(+-1) = -+ (iA/2) (d_D^+ d_A + h.c.)
    """
    el = space.electronic
    a = space.annihilator()
    number = a.T @ a
    oscillator = params.hbar_omega * (number + 0.5 * np.eye(space.n_phonon))
    position = (a + a.T) / driven_model.SQRT2

    components = {}
    for n, h_n in driven_model.fourier_components(params, 0.0).items():
        components[n] = space.electronic_operator(one_body_operator(el, h_n)).astype(complex)
    components[0] = (
        components[0]
        + space.phonon_operator(oscillator)
        + np.kron(position, one_body_operator(el, driven_model.one_body_gradient(params)))
    )
    return assemble(components, space.n_max, params.Omega)


@dataclass(frozen=True)
class VibronicObservables:
    donor_population: float
    acceptor_population: float
    kinetic_energy: float


class FloquetMasterEquation:
    def __init__(
        self,
        params: driven_model.ModelParams,
        space: VibronicFloquetSpace,
        check_truncation: bool = True,
    ):
        if check_truncation:
            check_phonon_truncation(params, space.n_phonon)
        self.params = params
        self.space = space
        self.hamiltonian = build_vibronic_hamiltonian(params, space)
        self.frame = diagonalize_continuous(self.hamiltonian)
        annihilators = lift_annihilators(space.electronic, space.n_max, space.n_phonon)
        self.dissipator = RedfieldDissipator(
            build_jump_matrices(self.frame, annihilators, params.kT),
            driven_model.hybridization_matrix(params),
        )

        el = space.electronic
        a = space.annihilator()
        self.donor_number = space.electronic_operator(el.number_operator(0))
        self.acceptor_number = space.electronic_operator(el.number_operator(1))
        kinetic = 0.25 * params.hbar_omega * (
            2.0 * a.T @ a + np.eye(space.n_phonon) - a @ a - a.T @ a.T
        )
        self.kinetic_operator = space.phonon_operator(kinetic)

    def thermal_phonon_populations(self) -> np.ndarray:
        levels = np.arange(self.space.n_phonon)
        weights = np.exp(-levels * self.params.hbar_omega / self.params.kT)
        return weights / weights.sum()

    def initial_state(self, electronic_state: int = DONOR_ONLY) -> np.ndarray:
        """Thermal phonons (x) |electronic_state><electronic_state| in the n = 0 block."""
        rho = np.zeros((self.space.dim, self.space.dim), dtype=complex)
        for phonon, weight in enumerate(self.thermal_phonon_populations()):
            k = self.space.index(phonon, electronic_state, 0)
            rho[k, k] = weight
        return rho

    def to_eigenbasis(self, rho: np.ndarray) -> np.ndarray:
        U = self.frame.U
        return U.conj().T @ rho @ U

    def from_eigenbasis(self, rho_tilde: np.ndarray) -> np.ndarray:
        U = self.frame.U
        return U @ rho_tilde @ U.conj().T

    def physical_density(self, rho: np.ndarray, t: float) -> np.ndarray:
        """sum_{n,n'} exp(i (n - n') Omega t) rho_{n n'}, a block_dim x block_dim matrix."""
        blocks = 2 * self.space.n_max + 1
        block = self.space.block_dim
        phases = np.exp(1j * np.array(self.space.harmonics) * self.params.Omega * t)
        tensor = rho.reshape(blocks, block, blocks, block)
        return np.einsum("n,nimj,m->ij", phases, tensor, phases.conj())

    def observables(self, rho: np.ndarray, t: float = 0.0) -> VibronicObservables:
        """``rho`` is in the diabatic Floquet basis."""
        physical = self.physical_density(rho, t)
        return VibronicObservables(
            donor_population=float(np.real(np.trace(self.donor_number @ physical))),
            acceptor_population=float(np.real(np.trace(self.acceptor_number @ physical))),
            kinetic_energy=float(np.real(np.trace(self.kinetic_operator @ physical))),
        )

    def _phases(self, dt: float) -> tuple[np.ndarray, np.ndarray]:
        half_phase = np.exp(-0.5j * dt * self.frame.gaps)
        return half_phase, half_phase * half_phase

    def lawson_step(self, u: np.ndarray, dt: float, phases=None) -> np.ndarray:
        """One step in the eigenbasis: exact phases, RK4 on the dissipator."""
        half_phase, full_phase = phases or self._phases(dt)
        dissipate = self.dissipator
        if dissipate.is_zero:
            return full_phase * u
        k1 = dissipate(u)
        k2 = dissipate(half_phase * (u + 0.5 * dt * k1))
        k3 = dissipate(half_phase * u + 0.5 * dt * k2)
        k4 = dissipate(full_phase * u + dt * half_phase * k3)
        u = full_phase * u + (dt / 6.0) * (full_phase * k1 + 2.0 * half_phase * (k2 + k3) + k4)
        return 0.5 * (u + u.conj().T)

    def _check_trace(self, u: np.ndarray, t: float) -> None:
        drift = abs(float(np.real(np.trace(u))) - 1.0)
        if drift > TRACE_TOLERANCE:
            raise StepSizeError(f"Trace drifted by {drift:.3e} at t={t:.6g}; reduce qme.dt.")

    def evolve(self, rho: np.ndarray, duration: float, dt: float) -> np.ndarray:
        """Final density matrix (diabatic Floquet basis) after ``duration``."""
        _, n_steps = output_grid(duration, dt, 1)
        phases = self._phases(dt)
        u = self.to_eigenbasis(rho)
        for _ in range(n_steps):
            u = self.lawson_step(u, dt, phases)
        self._check_trace(u, n_steps * dt)
        return self.from_eigenbasis(u)

    def propagate(self, rho: np.ndarray, t_end: float, dt: float, output_stride: int = 1) -> TimeSeries:
        if rho.shape != (self.space.dim, self.space.dim):
            raise ValueError(f"Density matrix must be {self.space.dim}x{self.space.dim}, got {rho.shape}.")
        times, n_steps = output_grid(t_end, dt, output_stride)
        phases = self._phases(dt)
        columns = {"pop_D": [], "pop_A": [], "kinetic": []}

        def record(u, t):
            values = self.observables(self.from_eigenbasis(u), t)
            columns["pop_D"].append(values.donor_population)
            columns["pop_A"].append(values.acceptor_population)
            columns["kinetic"].append(values.kinetic_energy)

        u = self.to_eigenbasis(rho)
        record(u, 0.0)
        logger.info(
            "FR-QME: dim=%d, %d steps of dt=%g, %d outputs.", self.space.dim, n_steps, dt, len(times)
        )
        for step in range(1, n_steps + 1):
            u = self.lawson_step(u, dt, phases)
            if step % output_stride == 0:
                self._check_trace(u, step * dt)
                record(u, step * dt)
                if step % (output_stride * 50) == 0:
                    logger.info("FR-QME: t=%g of %g.", step * dt, t_end)

        return TimeSeries(
            t=times,
            means={name: np.array(values) for name, values in columns.items()},
            n_samples=1,
        )

    def run(self, t_end: float, dt: float, output_stride: int = 1) -> TimeSeries:
        return self.propagate(self.initial_state(), t_end, dt, output_stride)

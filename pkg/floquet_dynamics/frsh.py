"""
Floquet-representation surface hopping for a single trajectory.

Nuclei move classically on the active adiabatic Floquet surface while the
electronic density matrix sigma is carried in the adiabatic Floquet basis
with the full Redfield dissipator. Hops come from two channels: the
derivative-coupling channel (momentum rescaled, may be frustrated) and
the secular bath channel (no rescaling).

Dimensionless equations of motion (hbar = 1):

    dx/dt = hbar_omega * p
    dp/dt = F_ll                     (force per unit x)
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import driven_model
from .dissipator import RedfieldDissipator, build_jump_matrices
from .exceptions import NumericalConsistencyError, StepSizeError
from .floquet import AdiabaticFrame, adiabatic_frame, floquet_index, lift_annihilators
from .fock import BOTH_OCCUPIED, DONOR_ONLY, build_fock_space

logger = logging.getLogger(__name__)

POPULATION_FLOOR = 1e-12
TRACE_TOLERANCE = 1e-6
HOP_ENERGY_TOLERANCE = 1e-10
ESTIMATOR_SLACK = 1e-9

FRUSTRATED_REJECT = "reject"
FRUSTRATED_REVERSE = "reverse"
FRUSTRATED_POLICIES = (FRUSTRATED_REJECT, FRUSTRATED_REVERSE)

ESTIMATOR_REFERENCE = "reference"
ESTIMATOR_REPLICA_SUM = "replica_sum"
ESTIMATORS = (ESTIMATOR_REFERENCE, ESTIMATOR_REPLICA_SUM)


def theta(value):
    """x for x >= 0, else 0."""
    return np.maximum(value, 0.0)


def trajectory_rng(master_seed: int, index: int) -> np.random.Generator:
    """Counter-based stream for trajectory ``index``, independent of scheduling."""
    seed = np.random.SeedSequence(entropy=master_seed, spawn_key=(index,))
    return np.random.Generator(np.random.Philox(seed))


@dataclass
class TrajectoryState:
    x: float
    p: float
    active: int
    sigma: np.ndarray
    frame: AdiabaticFrame
    rng: np.random.Generator
    t: float = 0.0
    coupling_hops: int = 0
    bath_hops: int = 0
    frustrated_hops: int = 0
    starvation_events: int = 0
    degenerate_events: int = 0

    @property
    def active_population(self) -> float:
        return float(np.real(self.sigma[self.active, self.active]))

    def diagnostics(self) -> dict:
        return {
            "coupling_hops": self.coupling_hops,
            "bath_hops": self.bath_hops,
            "frustrated_hops": self.frustrated_hops,
            "starvation_events": self.starvation_events,
            "degenerate_events": self.degenerate_events,
        }


class FloquetSurfaceHopping:
    def __init__(
        self,
        params: driven_model.ModelParams,
        n_max: int = 2,
        space=None,
        frustrated_hops: str = FRUSTRATED_REJECT,
        max_hop_probability: float = 0.1,
    ):
        if frustrated_hops not in FRUSTRATED_POLICIES:
            raise ValueError(f"frustrated_hops must be one of {FRUSTRATED_POLICIES}.")
        self.params = params
        self.n_max = n_max
        self.space = space or build_fock_space(2)
        self.frustrated_hops = frustrated_hops
        self.max_hop_probability = max_hop_probability
        self.gamma = driven_model.hybridization_matrix(params)
        self.annihilators = lift_annihilators(self.space, n_max)
        self.donor_index = floquet_index(DONOR_ONLY, 0, n_max, self.space.dim)
        self.both_index = floquet_index(BOTH_OCCUPIED, 0, n_max, self.space.dim)

    # frames

    def frame_at(self, x: float, previous: AdiabaticFrame | None = None) -> AdiabaticFrame:
        return adiabatic_frame(self.params, self.space, x, self.n_max, previous)

    def dissipator_for(self, frame: AdiabaticFrame) -> RedfieldDissipator:
        if frame.dissipator is None:
            jumps = build_jump_matrices(frame, self.annihilators, self.params.kT)
            frame.dissipator = RedfieldDissipator(jumps, self.gamma)
        return frame.dissipator

    # initial conditions

    def sample_phase_space(self, rng: np.random.Generator) -> tuple[float, float]:
        width = driven_model.thermal_width(self.params)
        return float(rng.normal(0.0, width)), float(rng.normal(0.0, width))

    def sample_initial(self, seed: int, index: int = 0) -> TrajectoryState:
        """
        Boltzmann nuclei with the electron on the donor (diabatic |10>,
        Fourier block 0); the active surface is drawn from |U_aN|^2.
        """
        rng = trajectory_rng(seed, index)
        x, p = self.sample_phase_space(rng)
        frame = self.frame_at(x)
        amplitudes = frame.U[self.donor_index, :]
        sigma = np.outer(amplitudes.conj(), amplitudes)
        weights = np.abs(amplitudes) ** 2
        active = int(rng.choice(frame.dim, p=weights / weights.sum()))
        return TrajectoryState(x=x, p=p, active=active, sigma=sigma, frame=frame, rng=rng)

    # propagation

    def velocity(self, p: float) -> float:
        return self.params.hbar_omega * p

    def total_energy(self, state: TrajectoryState) -> float:
        kinetic = 0.5 * self.params.hbar_omega * state.p ** 2
        return kinetic + float(state.frame.quasi_energies[state.active])

    def kinetic_energy(self, state: TrajectoryState) -> float:
        return 0.5 * self.params.hbar_omega * state.p ** 2

    @staticmethod
    def _sigma_rhs(sigma, gaps, D, velocity, dissipate):
        drift = D @ sigma - sigma @ D
        return -1j * gaps * sigma - velocity * drift + dissipate(sigma)

    def step(self, state: TrajectoryState, dt: float) -> TrajectoryState:
        """Velocity Verlet for the nuclei, one RK4 step for sigma, new frame at x(t + dt)."""
        if dt <= 0:
            raise ValueError("dt must be positive.")
        old = state.frame
        active = state.active
        p_old = state.p
        p_half = p_old + 0.5 * dt * float(np.real(old.F[active, active]))
        x_new = state.x + dt * self.velocity(p_half)
        new = self.frame_at(x_new, previous=old)
        p_new = p_half + 0.5 * dt * float(np.real(new.F[active, active]))

        diss_old = self.dissipator_for(old)
        diss_new = self.dissipator_for(new)
        gaps_mid = 0.5 * (old.gaps + new.gaps)
        D_mid = 0.5 * (old.D + new.D)

        def diss_mid(sigma):
            return 0.5 * (diss_old(sigma) + diss_new(sigma))

        sigma = state.sigma
        k1 = self._sigma_rhs(sigma, old.gaps, old.D, self.velocity(p_old), diss_old)
        k2 = self._sigma_rhs(sigma + 0.5 * dt * k1, gaps_mid, D_mid, self.velocity(p_half), diss_mid)
        k3 = self._sigma_rhs(sigma + 0.5 * dt * k2, gaps_mid, D_mid, self.velocity(p_half), diss_mid)
        k4 = self._sigma_rhs(sigma + dt * k3, new.gaps, new.D, self.velocity(p_new), diss_new)
        sigma = sigma + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        sigma = 0.5 * (sigma + sigma.conj().T)

        drift = abs(float(np.real(np.trace(sigma))) - 1.0)
        if drift > TRACE_TOLERANCE:
            raise StepSizeError(f"Trace of sigma drifted by {drift:.3e} at t={state.t + dt:.6g}; reduce dt.")

        state.x = x_new
        state.p = p_new
        state.sigma = sigma
        state.frame = new
        state.t += dt
        if new.degenerate_pairs:
            state.degenerate_events += 1
        return state

    # hopping

    def hop_rates(self, state: TrajectoryState) -> tuple[np.ndarray, np.ndarray]:
        active = state.active
        frame = state.frame
        population = state.active_population
        if population > POPULATION_FLOOR:
            velocity = self.velocity(state.p)
            k_coupling = theta(
                -2.0 * np.real(velocity * frame.D[:, active] * state.sigma[active, :] / population)
            )
        else:
            k_coupling = np.zeros(frame.dim)
            state.starvation_events += 1
            logger.debug("Active surface %d starved (sigma_ll=%.3e) at t=%.6g.", active, population, state.t)
        k_bath = self.dissipator_for(frame).secular_rates()[active].copy()
        k_coupling[active] = 0.0
        k_bath[active] = 0.0
        return k_coupling, k_bath

    def rescale_momentum(self, state: TrajectoryState, target: int) -> tuple[bool, float]:
        if target == state.active:
            raise ValueError("Rescaling target must differ from the active surface.")
        energies = state.frame.quasi_energies
        discriminant = state.p ** 2 + 2.0 * (energies[state.active] - energies[target]) / self.params.hbar_omega
        if discriminant < 0:
            return False, state.p
        root = math.sqrt(discriminant)
        if state.p != 0:
            # root on the same side as p is the smaller |kappa|
            return True, math.copysign(root, state.p)
        direction = float(np.real(state.frame.D[state.active, target]))
        return True, math.copysign(root, direction) if direction != 0 else root

    def _coupling_hop(self, state: TrajectoryState, target: int) -> None:
        accepted, p_new = self.rescale_momentum(state, target)
        if not accepted:
            state.frustrated_hops += 1
            if self.frustrated_hops == FRUSTRATED_REVERSE:
                state.p = -state.p
            logger.debug("Frustrated hop %d -> %d at t=%.6g.", state.active, target, state.t)
            return
        before = self.total_energy(state)
        state.p = p_new
        source = state.active
        state.active = target
        after = self.total_energy(state)
        if abs(after - before) > HOP_ENERGY_TOLERANCE:
            raise NumericalConsistencyError(
                f"Hop {source} -> {target} changed the total energy by {after - before:.3e}."
            )
        state.coupling_hops += 1
        logger.debug("Coupling hop %d -> %d at t=%.6g.", source, target, state.t)

    def attempt_hop(self, state: TrajectoryState, k_coupling, k_bath, dt: float) -> TrajectoryState:
        """
        One draw against the cumulative ladder: for each target M the bath
        segment k_bath[M] dt comes first, then the coupling segment
        k_coupling[M] dt. No hop when xi lands above the full ladder.
        """
        total = float(np.sum(k_coupling) + np.sum(k_bath)) * dt
        if total >= self.max_hop_probability:
            raise StepSizeError(
                f"Hop probability {total:.3f} per step at t={state.t:.6g} exceeds "
                f"{self.max_hop_probability}; reduce dt."
            )
        xi = state.rng.random()
        if xi >= total:
            return state
        cumulative = 0.0
        for target in range(state.frame.dim):
            if target == state.active:
                continue
            cumulative += k_bath[target] * dt
            if xi < cumulative:
                logger.debug("Bath hop %d -> %d at t=%.6g.", state.active, target, state.t)
                state.active = target
                state.bath_hops += 1
                return state
            cumulative += k_coupling[target] * dt
            if xi < cumulative:
                self._coupling_hop(state, target)
                return state
        return state

    def advance(self, state: TrajectoryState, dt: float) -> TrajectoryState:
        self.step(state, dt)
        k_coupling, k_bath = self.hop_rates(state)
        return self.attempt_hop(state, k_coupling, k_bath, dt)

    # observables

    def _donor_rows(self, estimator: str) -> list[int]:
        if estimator == ESTIMATOR_REFERENCE:
            return [self.donor_index, self.both_index]
        if estimator == ESTIMATOR_REPLICA_SUM:
            block = self.space.dim
            return [
                floquet_index(state, n, self.n_max, block)
                for n in range(-self.n_max, self.n_max + 1)
                for state in (DONOR_ONLY, BOTH_OCCUPIED)
            ]
        raise ValueError(f"estimator must be one of {ESTIMATORS}.")

    def donor_population(self, state: TrajectoryState, estimator: str = ESTIMATOR_REFERENCE) -> float:
        """
        Mixed estimator for <d_D^+ d_D>: active-surface weight plus the
        coherence sum, for both donor-occupied diabatic states.
        """
        U = state.frame.U
        sigma = state.sigma
        diagonal = np.real(np.diagonal(sigma))
        total = 0.0
        for row in self._donor_rows(estimator):
            u = U[row]
            weights = np.abs(u) ** 2
            coherence = float(np.real(u @ sigma @ u.conj())) - float(weights @ diagonal)
            total += float(weights[state.active]) + coherence
        return total

    def estimator_in_bounds(self, state: TrajectoryState, value: float) -> bool:
        """
        A donor estimate may leave [0, 1] by at most the largest coherence
        |sigma_NM|, N != M, of the sample it came from.
        """
        coherences = state.sigma - np.diag(np.diagonal(state.sigma))
        margin = float(np.abs(coherences).max()) + ESTIMATOR_SLACK
        return -margin <= value <= 1.0 + margin

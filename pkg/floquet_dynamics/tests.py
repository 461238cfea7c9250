import csv
import json
import math
import tempfile
from io import StringIO
from pathlib import Path

import numpy as np
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, TestCase, override_settings

from . import driven_model
from .config import RunConfig, SweepConfig, parse_config, serialize_config
from .dissipator import (
    RedfieldDissipator,
    build_jump_matrices,
    fermi,
    secular_rates,
)
from .driven_model import ModelParams
from .ensemble import (
    EnsembleConfig,
    TimeSeries,
    compare_series,
    output_grid,
    run_ensemble,
    steady_state_ordering,
)
from .exceptions import (
    ConfigError,
    DimensionMismatch,
    NonHermitianInput,
    PhononTruncationError,
    SeriesMismatch,
    StepSizeError,
    UnsupportedOrbitalCount,
)
from .floquet import (
    AdiabaticFrame,
    FloquetOperator,
    adiabatic_frame,
    assemble,
    diagonalize_continuous,
    floquet_index,
    force_and_coupling,
    lift_annihilators,
    many_body_components,
)
from .fock import (
    ACCEPTOR,
    BOTH_OCCUPIED,
    DONOR,
    DONOR_ONLY,
    EMPTY,
    build_fock_space,
    many_body_hamiltonian,
    one_body_operator,
)
from .frqme import (
    FloquetMasterEquation,
    boson_annihilator,
    build_vibronic_hamiltonian,
    build_vibronic_space,
    check_phonon_truncation,
)
from .frsh import FloquetSurfaceHopping, TrajectoryState, theta, trajectory_rng
from .models import SimulationRun
from .outputs import FRQME_COLUMNS, FRSH_COLUMNS, format_number, read_series, write_series


def random_density(dim, seed):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    rho = z @ z.conj().T
    return rho / np.trace(rho).real


def single_level(eps, kT=0.01, gamma=0.002):
    space = build_fock_space(1, allow_generic=True)
    frame = AdiabaticFrame(quasi_energies=np.array([0.0, eps]), U=np.eye(2, dtype=complex))
    jumps = build_jump_matrices(frame, [space.annihilator(0)], kT)
    return RedfieldDissipator(jumps, np.array([[gamma]]))


class FixedDraw:
    def __init__(self, value):
        self.value = value

    def random(self):
        return self.value


class FockSpaceTests(SimpleTestCase):
    def setUp(self):
        self.space = build_fock_space()

    def test_doubly_occupied_state_has_positive_sign(self):
        vacuum = np.zeros(4)
        vacuum[0] = 1.0
        state = self.space.creator(DONOR) @ self.space.creator(ACCEPTOR) @ vacuum
        self.assertEqual(state[BOTH_OCCUPIED], 1.0)

    def test_canonical_anticommutation(self):
        identity = np.eye(4)
        for i in range(2):
            for j in range(2):
                d_i, d_j = self.space.annihilator(i), self.space.annihilator(j)
                mixed = d_i @ d_j.T + d_j.T @ d_i
                np.testing.assert_allclose(mixed, identity if i == j else 0 * identity)
                np.testing.assert_allclose(d_i @ d_j + d_j @ d_i, 0 * identity)

    def test_number_operators_match_bit_strings(self):
        np.testing.assert_allclose(np.diag(self.space.number_operator(DONOR)), [0, 1, 0, 1])
        np.testing.assert_allclose(np.diag(self.space.number_operator(ACCEPTOR)), [0, 0, 1, 1])
        self.assertEqual(self.space.occupations(DONOR_ONLY), (1, 0))

    def test_diagonal_one_body_energies(self):
        H = many_body_hamiltonian(self.space, np.diag([1.0, 2.0]))
        np.testing.assert_allclose(np.diag(H), [0.0, 1.0, 2.0, 3.0])

    def test_hopping_connects_single_electron_states(self):
        W = 0.01
        H = one_body_operator(self.space, np.array([[0.0, W], [W, 0.0]]))
        self.assertAlmostEqual(H[2, 1], W)
        self.assertAlmostEqual(H[3, 3], 0.0)

    def test_hamiltonian_conserves_particle_number(self):
        rng = np.random.default_rng(3)
        number = self.space.total_number()
        for _ in range(10):
            z = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
            H = many_body_hamiltonian(self.space, z + z.conj().T, u0=0.3)
            np.testing.assert_allclose(H @ number - number @ H, 0, atol=1e-14)
            for i in range(self.space.dim):
                for j in range(self.space.dim):
                    if self.space.particle_number(i) != self.space.particle_number(j):
                        self.assertEqual(H[i, j], 0)

    def test_non_hermitian_input_rejected(self):
        with self.assertRaises(NonHermitianInput):
            many_body_hamiltonian(self.space, np.array([[0.0, 1.0], [0.0, 0.0]]))

    def test_orbital_count_guard(self):
        with self.assertRaises(UnsupportedOrbitalCount):
            build_fock_space(3)
        self.assertEqual(build_fock_space(3, allow_generic=True).dim, 8)


class DrivenModelTests(SimpleTestCase):
    def test_defaults_resolve_donor_level(self):
        params = ModelParams()
        self.assertAlmostEqual(params.eps_D, 2 * 0.0075 ** 2 / 0.003)
        self.assertAlmostEqual(params.W, 0.01)

    def test_fourier_components_reassemble_the_drive(self):
        params = ModelParams(A=0.02)
        components = driven_model.fourier_components(params, 0.4)
        for t in (0.0, 3.0, 17.5, 40.0):
            np.testing.assert_allclose(
                driven_model.reassemble(components, params.Omega, t),
                driven_model.one_body_h(params, 0.4, t),
                atol=1e-15,
            )

    def test_undriven_model_has_only_static_component(self):
        self.assertEqual(list(driven_model.fourier_components(ModelParams(A=0.0))), [0])

    def test_invalid_parameters(self):
        with self.assertRaises(ValueError):
            ModelParams(kT=-0.01)
        with self.assertRaises(ValueError):
            ModelParams(A=0.01, Omega=0.0)

    def test_replace_keeps_donor_level_tied_to_reorganization_energy(self):
        params = ModelParams().replace(g=0.01)
        self.assertAlmostEqual(params.eps_D, 2 * 0.01 ** 2 / 0.003)
        pinned = ModelParams(eps_D=0.05).replace(g=0.01)
        self.assertEqual(pinned.eps_D, 0.05)

    def test_drive_repeats_after_one_period(self):
        params = ModelParams(A=0.02)
        for t in (0.0, 1.3, 25.0):
            np.testing.assert_allclose(
                driven_model.one_body_h(params, 0.2, t + 2 * math.pi / params.Omega),
                driven_model.one_body_h(params, 0.2, t),
                atol=1e-15,
            )

    def test_thermal_width(self):
        self.assertAlmostEqual(driven_model.thermal_width(ModelParams()), math.sqrt(0.01 / 0.003))


class FloquetTests(SimpleTestCase):
    def setUp(self):
        self.space = build_fock_space()
        self.params = ModelParams()

    def test_undriven_blocks_are_shifted_copies(self):
        params = ModelParams(A=0.0)
        op = assemble(many_body_components(params, self.space, 0.3), 1, params.Omega)
        static = many_body_components(params, self.space, 0.3)[0]
        np.testing.assert_allclose(op.block(1, 0), 0)
        np.testing.assert_allclose(op.block(1, 1), static + params.Omega * np.eye(4))
        expected = np.sort(np.concatenate([np.linalg.eigvalsh(static) + m * params.Omega for m in (-1, 0, 1)]))
        np.testing.assert_allclose(np.linalg.eigvalsh(op.matrix), expected, atol=1e-12)

    def test_driven_operator_is_hermitian_with_drive_blocks(self):
        op = assemble(many_body_components(self.params, self.space, 0.1), 2, self.params.Omega)
        np.testing.assert_allclose(op.matrix, op.matrix.conj().T, atol=1e-12)
        drive = one_body_operator(self.space, driven_model.fourier_components(self.params)[1])
        np.testing.assert_allclose(op.block(1, 0), drive)
        self.assertEqual(op.index(DONOR_ONLY, 0), floquet_index(DONOR_ONLY, 0, 2, 4))

    def test_negative_truncation_rejected(self):
        with self.assertRaises(ValueError):
            assemble({0: np.eye(4)}, -1, 0.1)

    def test_hellmann_feynman_force_matches_finite_difference(self):
        x, h = 0.7, 1e-5
        frame = adiabatic_frame(self.params, self.space, x, 2)
        plus = adiabatic_frame(self.params, self.space, x + h, 2, frame)
        minus = adiabatic_frame(self.params, self.space, x - h, 2, frame)
        numeric = -(plus.quasi_energies - minus.quasi_energies) / (2 * h)
        analytic = np.real(np.diag(frame.F))
        relative = np.abs(numeric - analytic) / np.abs(analytic)
        self.assertLess(relative.max(), 1e-6)

    def test_continuity_fixes_phases_and_labels(self):
        frame = adiabatic_frame(self.params, self.space, -0.5, 1)
        for x in np.linspace(-0.45, 0.5, 20):
            nxt = adiabatic_frame(self.params, self.space, x, 1, frame)
            overlaps = np.diag(frame.U.conj().T @ nxt.U)
            self.assertTrue(np.all(np.abs(overlaps.imag) < 1e-12))
            self.assertTrue(np.all(overlaps.real > 0))
            frame = nxt

    def test_derivative_coupling_is_antihermitian(self):
        frame = adiabatic_frame(self.params, self.space, 0.2, 1)
        np.testing.assert_allclose(frame.D + frame.D.conj().T, 0, atol=1e-12)
        np.testing.assert_allclose(np.diag(frame.D), 0)

    def static_operator(self, x=0.3, n_max=0):
        return assemble(many_body_components(self.params, self.space, x), n_max, self.params.Omega)

    def test_zero_truncation_is_the_static_hamiltonian(self):
        op = self.static_operator()
        np.testing.assert_array_equal(op.matrix, many_body_components(self.params, self.space, 0.3)[0])

    def test_rediagonalising_the_same_operator_keeps_the_frame(self):
        op = self.static_operator(n_max=1)
        first = diagonalize_continuous(op)
        second = diagonalize_continuous(op, first)
        np.testing.assert_allclose(second.U, first.U, atol=1e-12)
        np.testing.assert_array_equal(second.quasi_energies, first.quasi_energies)
        self.assertEqual(second.ambiguous_matches, 0)

    def test_diagonal_operator_keeps_diabatic_labels(self):
        energies = np.array([0.3, 0.1, 0.4, 0.2])
        frame = diagonalize_continuous(assemble({0: np.diag(energies)}, 0, 0.1))
        np.testing.assert_allclose(frame.U, np.eye(4), atol=1e-12)
        np.testing.assert_allclose(frame.quasi_energies, energies)

    def test_small_perturbation_moves_eigenvectors_linearly(self):
        op = self.static_operator()
        frame = diagonalize_continuous(op)
        rng = np.random.default_rng(1)
        z = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        delta = 0.01 * (z + z.conj().T)
        distances = []
        for eps in (1e-6, 1e-7):
            moved = FloquetOperator(op.matrix + eps * delta, op.n_max, op.omega_drive, op.block_dim)
            perturbed = diagonalize_continuous(moved, frame)
            distances.append(np.linalg.norm(perturbed.U - frame.U, axis=0).max())
        self.assertLess(distances[0], 1e-3)
        self.assertAlmostEqual(distances[0] / distances[1], 10.0, delta=0.5)

    def test_ambiguous_match_takes_lower_index(self):
        previous = AdiabaticFrame(
            quasi_energies=np.zeros(2),
            U=np.array([[1.0, 1.0], [1.0, -1.0]], dtype=complex) / math.sqrt(2),
        )
        op = assemble({0: np.diag([0.0, 1.0])}, 0, 0.0)
        with self.assertLogs("floquet_dynamics.floquet", "WARNING"):
            frame = diagonalize_continuous(op, previous)
        self.assertEqual(frame.ambiguous_matches, 1)
        np.testing.assert_allclose(frame.quasi_energies, [0.0, 1.0])

    def test_degenerate_pair_has_no_derivative_coupling(self):
        frame = AdiabaticFrame(quasi_energies=np.array([0.0, 0.0, 1.0]), U=np.eye(3, dtype=complex))
        force = np.array([[0.1, 0.2, 0.3], [0.2, 0.1, 0.0], [0.3, 0.0, 0.5]], dtype=complex)
        op = FloquetOperator(matrix=force, n_max=0, omega_drive=0.0, block_dim=3)
        with self.assertLogs("floquet_dynamics.floquet", "WARNING"):
            F, D = force_and_coupling(op, frame)
        np.testing.assert_array_equal(F, force)
        self.assertEqual(D[0, 1], 0)
        self.assertEqual(D[1, 0], 0)
        np.testing.assert_allclose(D[0, 2], -0.3)
        self.assertEqual(frame.degenerate_pairs, 1)


class DissipatorTests(SimpleTestCase):
    def test_fermi_function(self):
        self.assertEqual(fermi(0.0, 0.01), 0.5)
        self.assertEqual(fermi(-1e3, 1e-3), 1.0)
        self.assertEqual(fermi(1e3, 1e-3), 0.0)

    def test_single_level_golden_rule_rates(self):
        eps, kT, gamma = 0.013, 0.01, 0.002
        rates = single_level(eps, kT, gamma).secular_rates()
        f = 1.0 / (math.exp(eps / kT) + 1.0)
        self.assertAlmostEqual(rates[0, 1], gamma * f, places=12)
        self.assertAlmostEqual(rates[1, 0], gamma * (1 - f), places=12)

    def test_fermi_dirac_state_is_stationary(self):
        eps, kT = 0.004, 0.01
        f = fermi(eps, kT)
        rho = np.diag([1 - f, f]).astype(complex)
        np.testing.assert_allclose(single_level(eps, kT)(rho), 0, atol=1e-15)

    def test_detailed_balance_on_floquet_transitions(self):
        params = ModelParams()
        space = build_fock_space()
        frame = adiabatic_frame(params, space, 0.3, 1)
        jumps = build_jump_matrices(frame, lift_annihilators(space, 1), params.kT)
        rates = secular_rates(jumps, driven_model.hybridization_matrix(params))
        E = frame.quasi_energies
        checked = 0
        for N in range(frame.dim):
            for M in range(frame.dim):
                if N != M and rates[N, M] > 1e-7 and rates[M, N] > 1e-7:
                    expected = math.exp(-(E[M] - E[N]) / params.kT)
                    self.assertAlmostEqual(rates[N, M] / rates[M, N], expected, delta=1e-8 * max(1.0, expected))
                    checked += 1
        self.assertGreater(checked, 0)

    def test_trace_and_hermiticity_preserved_on_random_states(self):
        params = ModelParams()
        space = build_fock_space()
        frame = adiabatic_frame(params, space, -0.2, 1)
        jumps = build_jump_matrices(frame, lift_annihilators(space, 1), params.kT)
        gamma = np.array([[0.001, 0.0005], [0.0005, 0.002]])
        dissipator = RedfieldDissipator(jumps, gamma)
        for seed in range(20):
            out = dissipator(random_density(frame.dim, seed))
            self.assertLess(abs(np.trace(out)), 1e-10)
            np.testing.assert_allclose(out, out.conj().T, atol=1e-10)

    def test_secular_rates_match_projected_populations(self):
        params = ModelParams()
        space = build_fock_space()
        frame = adiabatic_frame(params, space, 0.3, 1)
        jumps = build_jump_matrices(frame, lift_annihilators(space, 1), params.kT)
        dissipator = RedfieldDissipator(jumps, np.array([[0.001, 0.0005], [0.0005, 0.002]]))
        rates = dissipator.secular_rates()
        for N in range(frame.dim):
            projector = np.zeros((frame.dim, frame.dim), dtype=complex)
            projector[N, N] = 1.0
            expected = np.real(np.diagonal(dissipator(projector))).copy()
            expected[N] = 0.0
            np.testing.assert_allclose(rates[N], expected, atol=1e-15)

    def test_zero_hybridization(self):
        dissipator = single_level(0.01, gamma=0.0)
        self.assertTrue(dissipator.is_zero)
        np.testing.assert_array_equal(dissipator.secular_rates(), 0)

    def test_shape_mismatch(self):
        space = build_fock_space(1, allow_generic=True)
        frame = AdiabaticFrame(quasi_energies=np.array([0.0, 0.1]), U=np.eye(2, dtype=complex))
        jumps = build_jump_matrices(frame, [space.annihilator(0)], 0.01)
        with self.assertRaises(DimensionMismatch):
            RedfieldDissipator(jumps, np.zeros((2, 2)))
        with self.assertRaises(DimensionMismatch):
            RedfieldDissipator(jumps, np.eye(1))(np.eye(3))


class SurfaceHoppingTests(SimpleTestCase):
    def setUp(self):
        self.params = ModelParams()
        self.propagator = FloquetSurfaceHopping(self.params, n_max=1)

    def toy_state(self, p=2.0, active=0):
        frame = AdiabaticFrame(
            quasi_energies=np.array([0.0, 0.001, 0.002, 0.003]),
            U=np.eye(4, dtype=complex),
            F=np.zeros((4, 4), dtype=complex),
            D=np.zeros((4, 4), dtype=complex),
        )
        sigma = np.zeros((4, 4), dtype=complex)
        sigma[active, active] = 1.0
        return TrajectoryState(x=0.0, p=p, active=active, sigma=sigma, frame=frame, rng=FixedDraw(0.5))

    def test_theta(self):
        self.assertEqual(theta(-1.0), 0.0)
        self.assertEqual(theta(2.0), 2.0)

    def test_trajectory_streams_are_reproducible_and_distinct(self):
        first = trajectory_rng(7, 3).random(4)
        np.testing.assert_array_equal(first, trajectory_rng(7, 3).random(4))
        self.assertFalse(np.array_equal(first, trajectory_rng(7, 4).random(4)))

    def test_boltzmann_width_of_sampled_positions(self):
        rng = trajectory_rng(0, 0)
        samples = np.array([self.propagator.sample_phase_space(rng) for _ in range(100000)])
        variance = samples.var(axis=0)
        expected = self.params.kT / self.params.hbar_omega
        np.testing.assert_allclose(variance, expected, rtol=0.03)

    def test_initial_density_matrix(self):
        state = self.propagator.sample_initial(11, 0)
        self.assertAlmostEqual(np.trace(state.sigma).real, 1.0, places=12)
        np.testing.assert_allclose(state.sigma, state.sigma.conj().T)
        self.assertTrue(0 <= state.active < state.frame.dim)

    def test_donor_estimator_is_unbiased_at_preparation(self):
        state = self.propagator.sample_initial(5, 2)
        weights = np.abs(state.frame.U[self.propagator.donor_index]) ** 2
        average = 0.0
        for label, weight in enumerate(weights):
            state.active = label
            average += weight * self.propagator.donor_population(state)
        self.assertAlmostEqual(average, 1.0, places=12)

    def test_frozen_diabatic_trajectory_counts_as_donor(self):
        propagator = FloquetSurfaceHopping(self.params, n_max=0)
        state = self.toy_state(active=DONOR_ONLY)
        self.assertAlmostEqual(propagator.donor_population(state), 1.0)
        self.assertAlmostEqual(propagator.donor_population(state, "replica_sum"), 1.0)

    def test_rescaling_conserves_energy(self):
        state = self.toy_state(p=2.0)
        accepted, p_new = self.propagator.rescale_momentum(state, 3)
        self.assertTrue(accepted)
        before = 0.5 * self.params.hbar_omega * 4.0
        after = 0.5 * self.params.hbar_omega * p_new ** 2 + 0.003
        self.assertAlmostEqual(before, after, delta=1e-10)
        self.assertGreater(p_new, 0)

    def test_frustrated_hop_policies(self):
        state = self.toy_state(p=-0.1)
        self.propagator._coupling_hop(state, 3)
        self.assertEqual((state.active, state.p, state.frustrated_hops), (0, -0.1, 1))
        reverse = FloquetSurfaceHopping(self.params, n_max=1, frustrated_hops="reverse")
        reverse._coupling_hop(state, 3)
        self.assertEqual((state.active, state.p, state.frustrated_hops), (0, 0.1, 2))

    def test_hop_ladder_orders_bath_before_coupling(self):
        k_bath = np.array([0.0, 0.01, 0.0, 0.0])
        k_coupling = np.array([0.0, 0.0, 0.02, 0.0])

        state = self.toy_state()
        state.rng = FixedDraw(0.005)
        self.propagator.attempt_hop(state, k_coupling, k_bath, 1.0)
        self.assertEqual((state.active, state.bath_hops, state.p), (1, 1, 2.0))

        state = self.toy_state()
        state.rng = FixedDraw(0.015)
        self.propagator.attempt_hop(state, k_coupling, k_bath, 1.0)
        self.assertEqual((state.active, state.coupling_hops), (2, 1))
        self.assertAlmostEqual(state.p, math.sqrt(4.0 - 2 * 0.002 / 0.003))

        state = self.toy_state()
        state.rng = FixedDraw(0.05)
        self.propagator.attempt_hop(state, k_coupling, k_bath, 1.0)
        self.assertEqual(state.active, 0)

    def test_large_hop_probability_rejected(self):
        state = self.toy_state()
        with self.assertRaises(StepSizeError):
            self.propagator.attempt_hop(state, np.zeros(4), np.array([0.0, 0.2, 0.0, 0.0]), 1.0)

    def test_hop_rates_from_coherence_and_bath(self):
        propagator = FloquetSurfaceHopping(self.params, n_max=0)
        state = self.toy_state(p=-1.5)
        state.sigma[0, 0], state.sigma[1, 1] = 0.6, 0.4
        state.sigma[0, 1], state.sigma[1, 0] = 0.2 - 0.3j, 0.2 + 0.3j
        state.frame.D[1, 0], state.frame.D[0, 1] = 0.3 + 0.1j, -0.3 + 0.1j

        k_coupling, k_bath = propagator.hop_rates(state)
        self.assertAlmostEqual(k_coupling[1], 0.00135, places=15)
        np.testing.assert_array_equal(k_coupling[[0, 2, 3]], 0)
        bath_row = propagator.dissipator_for(state.frame).secular_rates()[0]
        np.testing.assert_allclose(k_bath, bath_row)
        self.assertEqual(k_bath[0], 0)

        # moving the other way makes the flux negative
        state.p = 1.5
        k_coupling, _ = propagator.hop_rates(state)
        self.assertEqual(k_coupling[1], 0)

        state.sigma[0, 0] = 0.0
        k_coupling, _ = propagator.hop_rates(state)
        np.testing.assert_array_equal(k_coupling, 0)
        self.assertEqual(state.starvation_events, 1)

    def count_hops(self, k_bath, seed, draws):
        state = self.toy_state()
        state.rng = trajectory_rng(seed, 0)
        counts = np.zeros(4, dtype=int)
        for _ in range(draws):
            state.active = 0
            self.propagator.attempt_hop(state, np.zeros(4), k_bath, 1.0)
            counts[state.active] += 1
        return counts

    def test_hop_frequency_matches_rate(self):
        rate, draws = 0.05, 100000
        counts = self.count_hops(np.array([0.0, 0.0, rate, 0.0]), 2024, draws)
        spread = math.sqrt(draws * rate * (1 - rate))
        self.assertLess(abs(counts[2] - draws * rate), 3 * spread)
        self.assertEqual(counts[1] + counts[3], 0)

    def test_relabelling_targets_relabels_hop_counts(self):
        rates = np.array([0.0, 0.01, 0.02, 0.03])
        relabel = np.array([0, 3, 1, 2])
        permuted = np.zeros(4)
        permuted[relabel] = rates
        draws = 20000
        for seed in (1, 2):
            counts = self.count_hops(rates, seed, draws)
            moved = self.count_hops(permuted, seed, draws)
            for target in (1, 2, 3):
                spread = math.sqrt(draws * rates[target] * (1 - rates[target]))
                self.assertLess(abs(counts[target] - draws * rates[target]), 5 * spread)
                self.assertLess(abs(moved[relabel[target]] - counts[target]), 5 * spread)

    def test_uncoupled_coherence_rotates_with_quasi_energy_gap(self):
        params = ModelParams(W=0.0, A=0.0, g=0.0, Gamma=0.0, eps_D=0.02)
        propagator = FloquetSurfaceHopping(params, n_max=0)
        sigma = np.zeros((4, 4), dtype=complex)
        sigma[np.ix_([EMPTY, DONOR_ONLY], [EMPTY, DONOR_ONLY])] = 0.5
        state = TrajectoryState(
            x=0.3, p=0.2, active=EMPTY, sigma=sigma, frame=propagator.frame_at(0.3), rng=FixedDraw(0.5)
        )
        for _ in range(200):
            propagator.step(state, 0.5)
        gap = state.frame.gaps[EMPTY, DONOR_ONLY]
        self.assertAlmostEqual(gap, -0.02, places=12)
        expected = 0.5 * np.exp(-1j * gap * state.t)
        self.assertLess(abs(state.sigma[EMPTY, DONOR_ONLY] - expected), 1e-8)

    def test_empty_surface_follows_harmonic_ellipse(self):
        params = ModelParams(Gamma=0.0)
        propagator = FloquetSurfaceHopping(params, n_max=0)
        sigma = np.zeros((4, 4), dtype=complex)
        sigma[EMPTY, EMPTY] = 1.0
        state = TrajectoryState(
            x=1.0, p=1.0, active=EMPTY, sigma=sigma, frame=propagator.frame_at(1.0), rng=FixedDraw(0.5)
        )
        start = propagator.total_energy(state)
        period = 2 * math.pi / params.hbar_omega
        drift = 0.0
        for _ in range(round(period / 0.5)):
            propagator.step(state, 0.5)
            drift = max(drift, abs(propagator.total_energy(state) - start))
        self.assertLess(drift, 1e-8)
        self.assertAlmostEqual(state.x, 1.0, delta=0.01)
        self.assertAlmostEqual(state.p, 1.0, delta=0.01)

    def test_trace_holds_over_a_thousand_steps(self):
        state = self.propagator.sample_initial(3, 0)
        for _ in range(1000):
            self.propagator.step(state, 0.5)
        self.assertLess(abs(np.trace(state.sigma).real - 1.0), 1e-10)

    def test_estimator_bound_follows_largest_coherence(self):
        state = self.toy_state(active=0)
        self.assertTrue(self.propagator.estimator_in_bounds(state, 1.0))
        self.assertFalse(self.propagator.estimator_in_bounds(state, 1.05))
        state.sigma[0, 1] = state.sigma[1, 0] = 0.1
        self.assertTrue(self.propagator.estimator_in_bounds(state, 1.05))
        self.assertTrue(self.propagator.estimator_in_bounds(state, -0.05))
        self.assertFalse(self.propagator.estimator_in_bounds(state, 1.2))

    def test_advance_keeps_sigma_a_density_matrix(self):
        state = self.propagator.sample_initial(3, 0)
        for _ in range(20):
            self.propagator.advance(state, 0.5)
        self.assertAlmostEqual(np.trace(state.sigma).real, 1.0, places=8)
        np.testing.assert_allclose(state.sigma, state.sigma.conj().T, atol=1e-14)
        self.assertAlmostEqual(state.t, 10.0)

    def test_uncoupled_donor_never_leaves(self):
        params = ModelParams(W=0.0, Gamma=0.0, A=0.0)
        config = EnsembleConfig(n_traj=3, dt=0.5, t_end=10.0, output_stride=5)
        series = run_ensemble(config, params, n_max=0)
        np.testing.assert_allclose(series.means["pop_D"], 1.0, atol=1e-12)
        self.assertEqual(series.diagnostics["estimator_out_of_bounds"], 0)

    def test_undriven_results_do_not_depend_on_fourier_truncation(self):
        params = ModelParams(A=0.0)
        config = EnsembleConfig(n_traj=2, dt=0.5, t_end=20.0, output_stride=4)
        small = run_ensemble(config, params, n_max=0)
        large = run_ensemble(config, params, n_max=1)
        np.testing.assert_allclose(small.means["pop_D"], large.means["pop_D"], atol=1e-8)
        np.testing.assert_allclose(small.means["kinetic"], large.means["kinetic"], atol=1e-8)


class MasterEquationTests(SimpleTestCase):
    # hbar_omega = 0.05 keeps thermal phonon numbers small enough for tiny ladders
    toy = dict(hbar_omega=0.05, g=0.02, W=0.01, Omega=0.137)

    def test_truncated_ladder_commutator(self):
        a = boson_annihilator(5)
        commutator = a @ a.T - a.T @ a
        np.testing.assert_allclose(np.diag(commutator)[:-1], 1.0)

    def test_truncation_guard(self):
        with self.assertRaises(PhononTruncationError):
            check_phonon_truncation(ModelParams(), 5)
        with self.assertLogs("floquet_dynamics.frqme", "WARNING"):
            check_phonon_truncation(ModelParams(), 40)

    def test_hamiltonian_is_hermitian(self):
        space = build_vibronic_space(6, 1)
        H = build_vibronic_hamiltonian(ModelParams(**self.toy), space).matrix
        np.testing.assert_allclose(H, H.conj().T, atol=1e-12)

    def test_decoupled_spectrum(self):
        params = ModelParams(g=0.0, W=0.0, A=0.0, eps_D=0.02, hbar_omega=0.05, Omega=0.137)
        space = build_vibronic_space(4, 1)
        spectrum = np.linalg.eigvalsh(build_vibronic_hamiltonian(params, space).matrix)
        expected = sorted(
            0.05 * (n + 0.5) + occupation + m * 0.137
            for n in range(4)
            for occupation in (0.0, 0.02, 0.0, 0.02)
            for m in (-1, 0, 1)
        )
        np.testing.assert_allclose(spectrum, expected, atol=1e-12)

    def test_polaron_shift_of_donor_sector(self):
        params = ModelParams(W=0.0, A=0.0)
        space = build_vibronic_space(30, 0)
        H = build_vibronic_hamiltonian(params, space).matrix
        donor = [space.index(n, DONOR_ONLY, 0) for n in range(30)]
        ground = np.linalg.eigvalsh(H[np.ix_(donor, donor)])[0]
        expected = 0.5 * params.hbar_omega - params.reorganization_energy + params.eps_D
        self.assertAlmostEqual(ground, expected, places=9)

    def test_initial_observables(self):
        params = ModelParams(g=0.0)
        solver = FloquetMasterEquation(params, build_vibronic_space(40, 0))
        values = solver.observables(solver.initial_state())
        self.assertAlmostEqual(values.donor_population, 1.0, places=12)
        self.assertAlmostEqual(values.acceptor_population, 0.0, places=12)
        levels = np.arange(40)
        nbar = float(solver.thermal_phonon_populations() @ levels)
        self.assertAlmostEqual(values.kinetic_energy, 0.5 * params.hbar_omega * (nbar + 0.5), places=12)
        self.assertAlmostEqual(values.kinetic_energy, 0.00502, delta=5e-5)

    def test_closed_system_conserves_trace_and_energy(self):
        params = ModelParams(Gamma=0.0, A=0.0, **self.toy)
        solver = FloquetMasterEquation(params, build_vibronic_space(6, 0))
        rho0 = solver.initial_state()
        rho = solver.evolve(rho0, 200.0, 5.0)
        H = solver.hamiltonian.matrix
        self.assertAlmostEqual(np.trace(rho).real, 1.0, places=10)
        self.assertAlmostEqual(np.trace(rho @ H).real, np.trace(rho0 @ H).real, places=10)

    def test_particle_number_sectors_stay_decoupled_without_bath(self):
        params = ModelParams(Gamma=0.0, A=0.01, **self.toy)
        space = build_vibronic_space(4, 1)
        solver = FloquetMasterEquation(params, space)
        rho = solver.evolve(solver.initial_state(), 100.0, 2.0)
        electrons = np.array([space.electronic.particle_number(k % space.electronic.dim) for k in range(space.dim)])
        outside = (electrons[:, None] != 1) | (electrons[None, :] != 1)
        self.assertLess(np.abs(rho[outside]).max(), 1e-12)
        self.assertAlmostEqual(np.trace(rho).real, 1.0, places=12)

    def test_single_level_equilibrates_at_half_filling(self):
        params = ModelParams(g=0.0, W=0.0, A=0.0, hbar_omega=0.05)
        solver = FloquetMasterEquation(params, build_vibronic_space(2, 0))
        series = solver.run(5000.0, 10.0, output_stride=100)
        self.assertAlmostEqual(series.means["pop_A"][-1], 0.5, delta=1e-4)
        self.assertAlmostEqual(series.means["pop_D"][-1], 1.0, places=8)

    def test_undriven_results_do_not_depend_on_fourier_truncation(self):
        params = ModelParams(A=0.0, **self.toy)
        small = FloquetMasterEquation(params, build_vibronic_space(4, 0)).run(200.0, 2.0, 10)
        large = FloquetMasterEquation(params, build_vibronic_space(4, 1)).run(200.0, 2.0, 10)
        for name in ("pop_D", "kinetic"):
            np.testing.assert_allclose(small.means[name], large.means[name], atol=1e-8)


class EnsembleTests(SimpleTestCase):
    def series(self, t, pop, kinetic=None):
        t = np.asarray(t, dtype=float)
        kinetic = np.zeros_like(t) if kinetic is None else kinetic
        return TimeSeries(t=t, means={"pop_D": np.asarray(pop, dtype=float), "kinetic": kinetic})

    def test_output_grid(self):
        times, n_steps = output_grid(10.0, 0.5, 4)
        self.assertEqual(n_steps, 20)
        np.testing.assert_allclose(times, [0, 2, 4, 6, 8, 10])

    def test_invalid_configs(self):
        with self.assertRaises(ValueError):
            EnsembleConfig(n_traj=0)
        with self.assertRaises(ValueError):
            EnsembleConfig(estimator="all")

    def test_results_do_not_depend_on_worker_count(self):
        params = ModelParams()
        config = EnsembleConfig(n_traj=4, dt=0.5, t_end=5.0, output_stride=2, master_seed=9)
        serial = run_ensemble(config, params, n_max=0)
        parallel = run_ensemble(EnsembleConfig(**{**vars(config), "worker_count": 2}), params, n_max=0)
        for name in ("pop_D", "kinetic"):
            np.testing.assert_array_equal(serial.means[name], parallel.means[name])
            np.testing.assert_array_equal(serial.stderr[name], parallel.stderr[name])

    def test_single_trajectory_has_zero_stderr(self):
        config = EnsembleConfig(n_traj=1, dt=0.5, t_end=2.0, output_stride=2)
        series = run_ensemble(config, ModelParams(), n_max=0)
        np.testing.assert_array_equal(series.stderr["pop_D"], 0)
        self.assertEqual(series.raw["pop_D"].shape, (1, 3))

    def test_identical_series_have_zero_deviation(self):
        a = self.series(np.arange(11), np.linspace(1, 0.5, 11))
        report = compare_series(a, a)
        self.assertEqual(report.max_deviation, 0.0)

    def test_constant_offset(self):
        t = np.arange(101)
        report = compare_series(self.series(t, np.full(101, 0.53)), self.series(t, np.full(101, 0.5)))
        self.assertAlmostEqual(report.max_deviation, 0.03, places=12)
        self.assertAlmostEqual(report.observables["pop_D"].steady_state_difference, 0.03, places=12)

    def test_interpolates_onto_common_grid(self):
        coarse = self.series([0, 10, 20], [0.0, 1.0, 2.0])
        fine = self.series(np.arange(0, 21, 5), 0.1 * np.arange(0, 21, 5))
        self.assertAlmostEqual(compare_series(fine, coarse).max_deviation, 0.0, places=12)

    def test_disjoint_ranges(self):
        with self.assertRaises(SeriesMismatch):
            compare_series(self.series([0, 1], [1, 1]), self.series([2, 3], [1, 1]))

    def test_amplitude_ordering(self):
        self.assertEqual(steady_state_ordering({0.005: 0.51, 0.01: 0.55, 0.02: 0.62}), "pass")
        self.assertEqual(steady_state_ordering({0.005: 0.51, 0.01: 0.50, 0.02: 0.62}), "fail")
        self.assertEqual(
            steady_state_ordering({0.005: 0.51, 0.01: 0.52}, errors={0.005: 0.01, 0.01: 0.01}), "fail"
        )

    def test_steady_state_warns_on_drift(self):
        t = np.linspace(0, 100, 51)
        with self.assertLogs("floquet_dynamics.ensemble", "WARNING"):
            result = self.series(t, 1e-3 * t).steady_state()
        self.assertGreater(result["pop_D"], 0.08)


class ConfigTests(SimpleTestCase):
    def test_empty_document_uses_defaults(self):
        config = parse_config("{}")
        self.assertEqual(config, RunConfig())
        self.assertEqual(config.params.W, 0.01)
        self.assertEqual(config.params.Gamma, 0.002)
        self.assertEqual(config.ensemble.output_stride, 200)

    def test_error_paths(self):
        cases = {
            '{"params": {"kT": -0.01}}': "params.kT",
            '{"params": {"mass": 2000}}': "params.mass",
            '{"ensemble": {"n_traj": true}}': "ensemble.n_traj",
            '{"params": {"W": "0.01"}}': "params.W",
            '{"method": "exact"}': "method",
            '{"sweep": {}}': "sweep.amplitudes",
            '{"floquet": 3}': "floquet",
            '{"extras": {}}': "extras",
        }
        for text, path in cases.items():
            with self.subTest(text=text):
                with self.assertRaises(ConfigError) as ctx:
                    parse_config(text)
                self.assertEqual(ctx.exception.path, path)
                self.assertTrue(str(ctx.exception).startswith(path))

    def test_malformed_json(self):
        with self.assertRaises(ConfigError):
            parse_config("{not json")

    def test_round_trip(self):
        config = parse_config(
            json.dumps(
                {
                    "method": "compare",
                    "params": {"A": 0.02, "W": 0.005, "eps_D": 0.04},
                    "ensemble": {"n_traj": 2000, "master_seed": 2**63 + 5, "estimator": "replica_sum"},
                    "floquet": {"n_max": 4},
                    "io": {"output": "runs/w005.csv", "stride": 50},
                    "sweep": {"amplitudes": [0.005, 0.01, 0.02]},
                }
            )
        )
        self.assertEqual(config.sweep, SweepConfig(amplitudes=(0.005, 0.01, 0.02)))
        self.assertEqual(parse_config(serialize_config(config)), config)


class OutputTests(SimpleTestCase):
    def test_number_format_is_full_precision(self):
        self.assertEqual(format_number(0.1), "0.10000000000000001")
        self.assertEqual(float(format_number(1 / 3)), 1 / 3)

    def test_written_series_reads_back(self):
        series = TimeSeries(
            t=np.array([0.0, 100.0]),
            means={"pop_D": np.array([1.0, 0.7]), "kinetic": np.array([0.005, 1 / 300])},
            stderr={"pop_D": np.array([0.0, 0.01]), "kinetic": np.array([0.0, 1e-4])},
        )
        with tempfile.TemporaryDirectory() as tmp:
            path = write_series(series, Path(tmp) / "out.csv", FRSH_COLUMNS)
            self.assertEqual(path.read_text().splitlines()[0], ",".join(FRSH_COLUMNS))
            loaded = read_series(path)
        self.assertEqual(loaded.means["kinetic"][1], 1 / 300)
        self.assertEqual(loaded.stderr["pop_D"][1], 0.01)


@override_settings(FLOQUET_WORKERS=None)
class RunSimulationCommandTests(TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.root = Path(self.tmp.name)

    def write_config(self, document, name="run.json"):
        path = self.root / name
        path.write_text(json.dumps(document))
        return path

    def smoke_config(self, output):
        return {
            "method": "frsh",
            "params": {"W": 0.005},
            "ensemble": {"n_traj": 3, "dt": 0.5, "t_end": 5.0, "master_seed": 4},
            "floquet": {"n_max": 0},
            "io": {"output": str(output), "stride": 2},
        }

    def read_rows(self, path):
        with path.open() as handle:
            return list(csv.reader(handle))

    def test_frsh_smoke_run_is_recorded(self):
        output = self.root / "smoke.csv"
        stdout = StringIO()
        call_command("run_simulation", config=str(self.write_config(self.smoke_config(output))), record=True, stdout=stdout)
        rows = self.read_rows(output)
        self.assertEqual(tuple(rows[0]), FRSH_COLUMNS)
        times = [float(row[0]) for row in rows[1:]]
        self.assertEqual(len(times), 6)
        self.assertEqual(times, sorted(times))
        self.assertTrue(all(len(row) == 5 for row in rows))

        manifest = json.loads((self.root / "smoke.manifest.json").read_text())
        self.assertEqual(manifest["master_seed"], 4)
        self.assertIn(str(output), manifest["outputs"])

        run = SimulationRun.objects.get()
        self.assertEqual(run.status, "SUCCEEDED")
        self.assertEqual(run.method, "frsh")
        self.assertIn("frsh", run.diagnostics)
        self.assertIn("finished", stdout.getvalue())

    def test_rerun_with_same_seed_is_byte_identical(self):
        first = self.root / "first.csv"
        second = self.root / "second.csv"
        config = self.write_config(self.smoke_config(first))
        call_command("run_simulation", config=str(config), stdout=StringIO())
        call_command("run_simulation", config=str(config), out=str(second), stdout=StringIO())
        self.assertEqual(first.read_bytes(), second.read_bytes())
        call_command("run_simulation", config=str(config), out=str(second), seed=5, stdout=StringIO())
        self.assertNotEqual(first.read_bytes(), second.read_bytes())

    def test_frqme_run(self):
        output = self.root / "qme.csv"
        document = {
            "method": "frqme",
            "params": {"g": 0.0, "hbar_omega": 0.05, "A": 0.0},
            "ensemble": {"dt": 0.5, "t_end": 20.0},
            "floquet": {"n_max": 0, "n_phonon": 2},
            "qme": {"dt": 2.0},
            "io": {"output": str(output), "stride": 8},
        }
        call_command("run_simulation", config=str(self.write_config(document)), stdout=StringIO())
        rows = self.read_rows(output)
        self.assertEqual(tuple(rows[0]), FRQME_COLUMNS)
        self.assertEqual([float(row[0]) for row in rows[1:]], [0.0, 4.0, 8.0, 12.0, 16.0, 20.0])
        self.assertAlmostEqual(float(rows[1][1]), 1.0, places=12)

    def write_compare_inputs(self):
        t = np.linspace(0, 100, 11)
        frsh = TimeSeries(
            t=t,
            means={"pop_D": np.full(11, 0.6), "kinetic": np.full(11, 0.005)},
            stderr={"pop_D": np.zeros(11), "kinetic": np.zeros(11)},
        )
        frqme = TimeSeries(t=t, means={"pop_D": np.full(11, 0.58), "kinetic": np.full(11, 0.005)})
        return (
            write_series(frsh, self.root / "a.csv", FRSH_COLUMNS),
            write_series(frqme, self.root / "b.csv", FRQME_COLUMNS),
        )

    def test_compare_existing_csvs(self):
        frsh_path, frqme_path = self.write_compare_inputs()
        output = self.root / "cmp.csv"
        call_command(
            "run_simulation",
            method="compare",
            out=str(output),
            frsh_csv=str(frsh_path),
            frqme_csv=str(frqme_path),
            stdout=StringIO(),
        )
        report = json.loads((self.root / "cmp.report.json").read_text())
        self.assertAlmostEqual(report["max_deviation"], 0.02, places=12)

    def test_relative_paths_resolve_under_output_root(self):
        self.write_compare_inputs()
        with self.settings(FLOQUET_OUTPUT_ROOT=self.root):
            call_command(
                "run_simulation",
                method="compare",
                out="reports/cmp.csv",
                frsh_csv="a.csv",
                frqme_csv="b.csv",
                stdout=StringIO(),
            )
        report = json.loads((self.root / "reports" / "cmp.report.json").read_text())
        self.assertAlmostEqual(report["max_deviation"], 0.02, places=12)
        self.assertTrue((self.root / "reports" / "cmp.manifest.json").exists())

    def test_ledger_keeps_full_64_bit_seed(self):
        seed = 2 ** 64 - 1
        config = self.write_config(self.smoke_config(self.root / "seed.csv"))
        call_command("run_simulation", config=str(config), seed=seed, record=True, stdout=StringIO())
        run = SimulationRun.objects.get()
        self.assertEqual(int(run.master_seed), seed)
        manifest = json.loads((self.root / "seed.manifest.json").read_text())
        self.assertEqual(manifest["master_seed"], seed)

    def test_invalid_config_is_a_command_error(self):
        path = self.write_config({"params": {"kT": 0}})
        with self.assertRaisesMessage(CommandError, "params.kT"):
            call_command("run_simulation", config=str(path), stdout=StringIO())

    def test_csv_inputs_require_compare(self):
        with self.assertRaises(CommandError):
            call_command("run_simulation", method="frsh", frsh_csv="x.csv", stdout=StringIO())

"""
Extended-space (Floquet) Hamiltonian and its adiabatic frame.

The composite index is Fourier-major: harmonic n in [-n_max, n_max] is
the outer index and the inner (Fock, or phonon x Fock) index runs
fastest, so state ``(inner, n)`` sits at ``(n + n_max) * block_dim + inner``.
Block ``(m + n, m)`` carries H^(n) and diagonal blocks add ``m * Omega``.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from . import driven_model
from .fock import ElectronicFockSpace, many_body_hamiltonian, one_body_operator

logger = logging.getLogger(__name__)

AMBIGUITY_TOLERANCE = 1e-6
DEGENERACY_FRACTION = 1e-10
PHASE_FLOOR = 1e-12


@dataclass(frozen=True)
class FloquetOperator:
    matrix: np.ndarray = field(repr=False)
    n_max: int
    omega_drive: float
    block_dim: int

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def index(self, inner: int, n: int) -> int:
        if not -self.n_max <= n <= self.n_max:
            raise IndexError(f"Harmonic {n} outside truncation +/-{self.n_max}.")
        return (n + self.n_max) * self.block_dim + inner

    def block(self, m: int, m_prime: int) -> np.ndarray:
        row = self.index(0, m)
        col = self.index(0, m_prime)
        return self.matrix[row:row + self.block_dim, col:col + self.block_dim]


def floquet_index(inner: int, n: int, n_max: int, block_dim: int) -> int:
    return (n + n_max) * block_dim + inner


def assemble(components: dict[int, np.ndarray], n_max: int, Omega: float) -> FloquetOperator:
    if n_max < 0:
        raise ValueError(f"n_max must be non-negative, got {n_max}.")
    block_dim = components[0].shape[0]
    n_blocks = 2 * n_max + 1
    matrix = np.zeros((n_blocks * block_dim, n_blocks * block_dim), dtype=complex)
    for m in range(-n_max, n_max + 1):
        col = (m + n_max) * block_dim
        for n, h_n in components.items():
            target = m + n
            if not -n_max <= target <= n_max:
                continue
            row = (target + n_max) * block_dim
            matrix[row:row + block_dim, col:col + block_dim] += h_n
        matrix[col:col + block_dim, col:col + block_dim] += m * Omega * np.eye(block_dim)
    return FloquetOperator(matrix=matrix, n_max=n_max, omega_drive=Omega, block_dim=block_dim)


def block_diagonal(op: np.ndarray, n_max: int) -> np.ndarray:
    """op_F = I_Fourier (x) op, i.e. ladder order zero."""
    return np.kron(np.eye(2 * n_max + 1), op)


def lift_annihilators(space: ElectronicFockSpace, n_max: int, n_phonon: int = 1) -> list[np.ndarray]:
    phonon_identity = np.eye(n_phonon)
    return [
        block_diagonal(np.kron(phonon_identity, space.annihilator(m)), n_max)
        for m in range(space.num_orbitals)
    ]


def many_body_components(params, space: ElectronicFockSpace, x: float) -> dict[int, np.ndarray]:
    components = {}
    for n, h_n in driven_model.fourier_components(params, x).items():
        if n == 0:
            u0 = driven_model.nuclear_potential(params, x)
            components[n] = many_body_hamiltonian(space, h_n, u0)
        else:
            components[n] = one_body_operator(space, h_n)
    return components


def derivative_operator(params, space: ElectronicFockSpace, x: float, n_max: int) -> FloquetOperator:
    """-dH^F/dx, which lives entirely in the diagonal Fourier blocks."""
    grad = one_body_operator(space, driven_model.one_body_gradient(params))
    grad = grad - driven_model.nuclear_force_static(params, x) * np.eye(space.dim)
    return assemble({0: -grad.astype(complex)}, n_max, 0.0)


@dataclass
class AdiabaticFrame:
    quasi_energies: np.ndarray
    U: np.ndarray = field(repr=False)
    x: float | None = None
    F: np.ndarray | None = field(default=None, repr=False)
    D: np.ndarray | None = field(default=None, repr=False)
    ambiguous_matches: int = 0
    degenerate_pairs: int = 0
    # per-frame dissipator cache, filled lazily by the propagators
    dissipator: object = field(default=None, repr=False, compare=False)

    @property
    def dim(self) -> int:
        return self.quasi_energies.shape[0]

    @property
    def gaps(self) -> np.ndarray:
        """Delta Lambda_NM = E_N - E_M."""
        e = self.quasi_energies
        return e[:, None] - e[None, :]


def diagonalize_continuous(op: FloquetOperator, previous: AdiabaticFrame | None = None) -> AdiabaticFrame:
    """
    Diagonalise ``op`` and label its eigenvectors by maximum overlap.

    The reference basis is ``previous.U`` or, for a first frame, the
    diabatic basis itself. Each column's phase is then fixed so that its
    overlap with the matched reference column is real and positive.
    """
    evals, evecs = linalg.eigh(op.matrix)
    dim = evals.shape[0]
    reference = previous.U if previous is not None else np.eye(dim)
    overlap = reference.conj().T @ evecs
    magnitude = np.abs(overlap)

    order = np.empty(dim, dtype=int)
    taken = np.zeros(dim, dtype=bool)
    ambiguous = 0
    # confident matches claim their columns first
    for ref_col in np.argsort(-magnitude.max(axis=1), kind="stable"):
        candidates = np.where(taken, -1.0, magnitude[ref_col])
        best = int(np.argmax(candidates))
        ranked = np.sort(candidates)
        if (
            dim > 1
            and ranked[-1] > AMBIGUITY_TOLERANCE
            and ranked[-2] >= 0
            and ranked[-1] - ranked[-2] < AMBIGUITY_TOLERANCE
        ):
            ambiguous += 1
        order[ref_col] = best
        taken[best] = True

    U = evecs[:, order]
    phases = overlap[np.arange(dim), order]
    mags = np.abs(phases)
    fix = mags > PHASE_FLOOR
    U[:, fix] = U[:, fix] * (phases[fix].conj() / mags[fix])

    if ambiguous and previous is not None:
        logger.warning(
            "Eigenvector continuity: %d ambiguous overlap matches (degenerate quasi-energies); "
            "lower index taken.",
            ambiguous,
        )
    return AdiabaticFrame(
        quasi_energies=evals[order],
        U=U,
        ambiguous_matches=ambiguous,
    )


def force_and_coupling(
    op_derivative: FloquetOperator,
    frame: AdiabaticFrame,
    degeneracy_epsilon: float | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    U = frame.U
    F = U.conj().T @ op_derivative.matrix @ U
    energies = frame.quasi_energies
    if degeneracy_epsilon is None:
        spread = float(energies.max() - energies.min()) if energies.size else 0.0
        degeneracy_epsilon = DEGENERACY_FRACTION * spread if spread > 0 else DEGENERACY_FRACTION
    gaps = frame.gaps
    nondegenerate = np.abs(gaps) > degeneracy_epsilon
    D = np.zeros_like(F)
    np.divide(F, gaps, out=D, where=nondegenerate)
    np.fill_diagonal(D, 0.0)

    off_diagonal = ~np.eye(frame.dim, dtype=bool)
    coupled = (~nondegenerate) & off_diagonal & (np.abs(F) > PHASE_FLOOR)
    frame.degenerate_pairs = int(coupled.sum()) // 2
    if frame.degenerate_pairs:
        logger.warning(
            "%d degenerate quasi-energy pairs with nonzero force coupling; derivative coupling zeroed.",
            frame.degenerate_pairs,
        )
    return F, D


def adiabatic_frame(
    params,
    space: ElectronicFockSpace,
    x: float,
    n_max: int,
    previous: AdiabaticFrame | None = None,
) -> AdiabaticFrame:
    op = assemble(many_body_components(params, space, x), n_max, params.Omega)
    frame = diagonalize_continuous(op, previous)
    frame.x = x
    frame.F, frame.D = force_and_coupling(derivative_operator(params, space, x, n_max), frame)
    return frame

"""
Many-body Fock space of the donor/acceptor molecule.

Basis states are occupation bit strings: bit ``i`` is orbital ``i``
(0 = donor, 1 = acceptor), so for two orbitals the basis order is
``|00>, |10>, |01>, |11>``. Fermionic signs follow Jordan-Wigner with
lower orbital indices to the left, i.e. ``|11> = d_D^+ d_A^+ |00>``.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .exceptions import NonHermitianInput, UnsupportedOrbitalCount

logger = logging.getLogger(__name__)

DONOR = 0
ACCEPTOR = 1

# Basis indices of the four diabatic states of the built-in model.
EMPTY = 0
DONOR_ONLY = 1
ACCEPTOR_ONLY = 2
BOTH_OCCUPIED = 3

HERMITIAN_TOLERANCE = 1e-12


def _is_occupied(state: int, orbital: int) -> bool:
    return bool((state >> orbital) & 1)


def _phase_for(orbital: int, state: int) -> int:
    """Return (-1)^(number of occupied orbitals with index < orbital)."""
    mask = (1 << orbital) - 1
    return -1 if (state & mask).bit_count() % 2 else 1


def _annihilation_matrix(num_orbitals: int, orbital: int) -> np.ndarray:
    dim = 1 << num_orbitals
    matrix = np.zeros((dim, dim))
    for state in range(dim):
        if not _is_occupied(state, orbital):
            continue
        matrix[state & ~(1 << orbital), state] = _phase_for(orbital, state)
    return matrix


@dataclass(frozen=True)
class ElectronicFockSpace:
    num_orbitals: int
    d_ops: tuple = field(repr=False)

    @property
    def dim(self) -> int:
        return 1 << self.num_orbitals

    def annihilator(self, orbital: int) -> np.ndarray:
        return self.d_ops[orbital]

    def creator(self, orbital: int) -> np.ndarray:
        return self.d_ops[orbital].T

    def number_operator(self, orbital: int) -> np.ndarray:
        return self.creator(orbital) @ self.annihilator(orbital)

    def total_number(self) -> np.ndarray:
        return sum(self.number_operator(i) for i in range(self.num_orbitals))

    def occupations(self, state: int) -> tuple[int, ...]:
        return tuple(int(_is_occupied(state, i)) for i in range(self.num_orbitals))

    def particle_number(self, state: int) -> int:
        return state.bit_count()


def build_fock_space(num_orbitals: int = 2, allow_generic: bool = False) -> ElectronicFockSpace:
    """
    Build the Fock space for ``num_orbitals`` spinless orbitals.

    Only two orbitals are supported unless ``allow_generic`` is set; the
    generic construction is the same bit-string recipe.
    """
    if num_orbitals != 2 and not allow_generic:
        raise UnsupportedOrbitalCount(
            f"Only the two-orbital donor/acceptor space is supported, got {num_orbitals}."
        )
    if num_orbitals < 1:
        raise UnsupportedOrbitalCount(f"Need at least one orbital, got {num_orbitals}.")
    d_ops = tuple(_annihilation_matrix(num_orbitals, i) for i in range(num_orbitals))
    return ElectronicFockSpace(num_orbitals=num_orbitals, d_ops=d_ops)


def one_body_operator(space: ElectronicFockSpace, h: np.ndarray) -> np.ndarray:
    """Lift an arbitrary one-body matrix to sum_ij h_ij d_i^+ d_j."""
    h = np.asarray(h)
    n = space.num_orbitals
    if h.shape != (n, n):
        raise ValueError(f"One-body matrix must be {n}x{n}, got {h.shape}.")
    dtype = np.result_type(h.dtype, np.float64)
    out = np.zeros((space.dim, space.dim), dtype=dtype)
    for i in range(n):
        for j in range(n):
            if h[i, j] != 0:
                out += h[i, j] * (space.creator(i) @ space.annihilator(j))
    return out


def many_body_hamiltonian(space: ElectronicFockSpace, h: np.ndarray, u0: float = 0.0) -> np.ndarray:
    h = np.asarray(h)
    if not np.allclose(h, h.conj().T, atol=HERMITIAN_TOLERANCE, rtol=0.0):
        raise NonHermitianInput("One-body matrix h must be Hermitian.")
    return one_body_operator(space, h) + u0 * np.eye(space.dim)

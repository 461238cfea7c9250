"""
Driven donor-acceptor-metal model in dimensionless oscillator units.

The nuclear coordinate is x = x_phys * sqrt(m w / hbar) and the momentum
p = p_phys / sqrt(m hbar w), so the nuclear mass never appears:

    h_DD(x)  = sqrt(2) g x + eps_D
    h_AA     = 0
    h_DA(t)  = W + A sin(Omega t)
    U_0(x)   = hbar_omega x^2 / 2,     kinetic = hbar_omega p^2 / 2

The acceptor is the only orbital hybridised with the metal (Gamma_AA).
"""

import math
from dataclasses import dataclass

import numpy as np

from .fock import ACCEPTOR, DONOR

SQRT2 = math.sqrt(2.0)

# Parameters of the donor-acceptor-metal benchmark.
DEFAULT_PARAMS = {
    "kT": 0.01,
    "hbar_omega": 0.003,
    "g": 0.0075,
    "W": 0.01,
    "Gamma": 0.002,
    "A": 0.01,
    "Omega": 0.1,
}


@dataclass(frozen=True)
class ModelParams:
    kT: float = DEFAULT_PARAMS["kT"]
    hbar_omega: float = DEFAULT_PARAMS["hbar_omega"]
    g: float = DEFAULT_PARAMS["g"]
    eps_D: float | None = None
    W: float = DEFAULT_PARAMS["W"]
    Gamma: float = DEFAULT_PARAMS["Gamma"]
    A: float = DEFAULT_PARAMS["A"]
    Omega: float = DEFAULT_PARAMS["Omega"]

    def __post_init__(self):
        if self.eps_D is None:
            object.__setattr__(self, "eps_D", 2.0 * self.reorganization_energy)
        values = {name: getattr(self, name) for name in self.__dataclass_fields__}
        for name, value in values.items():
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value}.")
        if self.kT <= 0:
            raise ValueError("kT must be positive.")
        if self.hbar_omega <= 0:
            raise ValueError("hbar_omega must be positive.")
        if self.Gamma < 0:
            raise ValueError("Gamma must be non-negative.")
        if self.A != 0 and self.Omega <= 0:
            raise ValueError("Omega must be positive when the drive amplitude A is nonzero.")

    @property
    def reorganization_energy(self) -> float:
        return self.g ** 2 / self.hbar_omega

    def replace(self, **changes) -> "ModelParams":
        values = {name: getattr(self, name) for name in self.__dataclass_fields__}
        if ("g" in changes or "hbar_omega" in changes) and "eps_D" not in changes:
            # keep eps_D tied to 2 E_r unless it was set explicitly
            if math.isclose(self.eps_D, 2.0 * self.reorganization_energy):
                values["eps_D"] = None
        values.update(changes)
        return ModelParams(**values)


def one_body_h(params: ModelParams, x: float, t: float) -> np.ndarray:
    coupling = params.W + params.A * math.sin(params.Omega * t)
    return np.array(
        [
            [SQRT2 * params.g * x + params.eps_D, coupling],
            [coupling, 0.0],
        ]
    )


def one_body_gradient(params: ModelParams) -> np.ndarray:
    """d h / d x; only the donor level depends on the nuclear coordinate."""
    grad = np.zeros((2, 2))
    grad[DONOR, DONOR] = SQRT2 * params.g
    return grad


def fourier_components(params: ModelParams, x: float = 0.0) -> dict[int, np.ndarray]:
    """
    Fourier coefficients h^(n) of h(x, t) = sum_n h^(n) exp(i n Omega t).

    sin(Omega t) = (e^{i Omega t} - e^{-i Omega t}) / 2i puts -iA/2 on the
    n = +1 coupling and +iA/2 on n = -1.
    """
    static = np.array(
        [
            [SQRT2 * params.g * x + params.eps_D, params.W],
            [params.W, 0.0],
        ],
        dtype=complex,
    )
    components = {0: static}
    if params.A != 0:
        drive = np.zeros((2, 2), dtype=complex)
        drive[DONOR, ACCEPTOR] = drive[ACCEPTOR, DONOR] = -0.5j * params.A
        components[1] = drive
        components[-1] = drive.conj().T
    return components


def reassemble(components: dict[int, np.ndarray], Omega: float, t: float) -> np.ndarray:
    return sum(h_n * np.exp(1j * n * Omega * t) for n, h_n in components.items())


def nuclear_potential(params: ModelParams, x: float) -> float:
    return 0.5 * params.hbar_omega * x * x


def nuclear_force_static(params: ModelParams, x: float) -> float:
    return -params.hbar_omega * x


def hybridization_matrix(params: ModelParams) -> np.ndarray:
    gamma = np.zeros((2, 2))
    gamma[ACCEPTOR, ACCEPTOR] = params.Gamma
    return gamma


def thermal_width(params: ModelParams) -> float:
    """Standard deviation of x and p in the classical Boltzmann distribution."""
    return math.sqrt(params.kT / params.hbar_omega)

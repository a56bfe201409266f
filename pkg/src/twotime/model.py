"""Lindblad models and the Liouvillian acting on arbitrary (skew) operators.

Jump operators carry their rates, so every model obeys

    dX/dt = sum_k (2 s_k X s_k^+ - s_k^+ s_k X - X s_k^+ s_k) - i[H, X]

with no further prefactors.  Basis orders are fixed: two-level systems use
(|g>, |e>), the parametric oscillator uses mode-1-major Fock ordering
``index = n1 * (n2_max + 1) + n2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import StructuralError
from .hilbert import MAX_DIM, Operator, annihilation, identity, projector, tensor


@dataclass(frozen=True, eq=False)
class LindbladModel:
    hamiltonian: Operator
    channels: tuple[Operator, ...]
    labels: tuple[str, ...] = field(default=())

    def __post_init__(self):
        dim = self.hamiltonian.dim
        object.__setattr__(self, "channels", tuple(self.channels))
        for c in self.channels:
            if c.dim != dim:
                raise StructuralError(f"channel dim {c.dim} != hamiltonian dim {dim}")
        if not self.labels:
            object.__setattr__(self, "labels", tuple(f"c{k}" for k in range(len(self.channels))))
        elif len(self.labels) != len(self.channels):
            raise StructuralError("one label per channel required")
        if not self.hamiltonian.is_hermitian(1e-12):
            raise StructuralError("hamiltonian is not Hermitian")

    @property
    def dim(self) -> int:
        return self.hamiltonian.dim

    @cached_property
    def jump_products(self) -> tuple[Operator, ...]:
        """s_k^+ s_k for every channel."""
        return tuple(c.dag() @ c for c in self.channels)

    @cached_property
    def effective_hamiltonian(self) -> Operator:
        """sum_k s_k^+ s_k + iH, the generator of the no-jump evolution (up to sign)."""
        h = 1j * self.hamiltonian
        for n in self.jump_products:
            h = h + n
        return h

    @cached_property
    def rate_scale(self) -> float:
        """Upper bound on the fastest rate in the model (inverse time)."""
        total = sum((n.norm_bound() for n in self.jump_products), 0.0)
        return 2.0 * total + self.hamiltonian.norm_bound()


def default_dt(model: LindbladModel) -> float:
    """Fixed step with ``dt * rate_scale <= 0.05``."""
    scale = model.rate_scale
    return 0.05 / scale if scale > 0 else 0.05


def two_level_decay(gamma: float) -> LindbladModel:
    if not gamma > 0:
        raise StructuralError("gamma must be positive")
    sigma = math.sqrt(gamma) * projector(2, 0, 1)
    return LindbladModel(Operator(np.zeros((2, 2))), (sigma,), ("decay",))


def driven_two_level(gamma: float, omega: float) -> LindbladModel:
    """Resonantly driven atom, H = (omega/2)(|e><g| + |g><e|)."""
    base = two_level_decay(gamma)
    h = 0.5 * omega * (projector(2, 0, 1) + projector(2, 1, 0))
    return LindbladModel(h, base.channels, base.labels)


@dataclass(frozen=True)
class DopoParams:
    """Degenerate parametric oscillator parameters (rates in inverse time)."""

    kappa: float
    epsilon: float
    gamma1: float
    gamma2: float
    n1_max: int = 48
    n2_max: int = 16

    def __post_init__(self):
        if not (self.kappa > 0 and self.gamma1 > 0 and self.gamma2 > 0):
            raise StructuralError("kappa, gamma1, gamma2 must be positive")
        if self.epsilon < 0:
            raise StructuralError("epsilon must be non-negative")
        if self.n1_max < 1 or self.n2_max < 1:
            raise StructuralError("truncations must be >= 1")

    @classmethod
    def from_pump_ratio(cls, lam: float, kappa: float = 1.0, gamma1: float = 1.0,
                        gamma2: float = 4.0, n1_max: int = 48, n2_max: int = 16) -> "DopoParams":
        return cls(kappa, lam * gamma1 * gamma2 / kappa, gamma1, gamma2, n1_max, n2_max)

    @property
    def epsilon_th(self) -> float:
        return self.gamma1 * self.gamma2 / self.kappa

    @property
    def pump_ratio(self) -> float:
        return self.epsilon / self.epsilon_th

    @property
    def G(self) -> float:
        return scaled_coupling_G(self)

    @property
    def sigma(self) -> float:
        return 1.0 - self.G ** 2 / 2

    @property
    def classical_amplitude(self) -> float:
        """Positive classical fundamental amplitude above threshold (0 below)."""
        return math.sqrt(max(0.0, 2.0 / self.kappa * (self.epsilon - self.epsilon_th)))

    @property
    def dim(self) -> int:
        return (self.n1_max + 1) * (self.n2_max + 1)


def scaled_coupling_G(p: DopoParams) -> float:
    return p.kappa / math.sqrt(2.0 * p.gamma1 * p.gamma2)


def dopo_modes(p: DopoParams) -> tuple[Operator, Operator]:
    """(a1, a2) on the truncated two-mode space."""
    a1 = tensor(annihilation(p.n1_max), identity(p.n2_max + 1))
    a2 = tensor(identity(p.n1_max + 1), annihilation(p.n2_max))
    return a1, a2


def dopo(p: DopoParams, *, max_dim: int | None = None) -> LindbladModel:
    limit = MAX_DIM if max_dim is None else max_dim
    if p.dim > limit:
        from .errors import ResourceError

        raise ResourceError(f"DOPO dimension {p.dim} exceeds maximum {limit}")
    a1, a2 = dopo_modes(p)
    a1d, a2d = a1.dag(), a2.dag()
    h_int = (0.5j * p.kappa) * (a1d @ a1d @ a2 - a1 @ a1 @ a2d)
    h_pump = 1j * (p.epsilon * a2d - np.conj(p.epsilon) * a2)
    return LindbladModel(
        h_int + h_pump,
        (math.sqrt(p.gamma1) * a1, math.sqrt(p.gamma2) * a2),
        ("fundamental", "pump"),
    )


def liouvillian_apply(m: LindbladModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=complex)
    if X.shape != (m.dim, m.dim):
        raise StructuralError(f"expected {(m.dim, m.dim)} matrix, got {X.shape}")
    h = m.hamiltonian
    out = -1j * (h.left(X) - h.right(X))
    for c, n in zip(m.channels, m.jump_products):
        out += 2.0 * c.left(c.dag().right(X)) - n.left(X) - n.right(X)
    return out

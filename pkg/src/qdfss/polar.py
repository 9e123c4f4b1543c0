"""Two-mode polarization algebra in the {H, V} basis.

Jones vectors, 2x2 polarization density matrices, the birefringent channel
that rotates the exciton eigenstates, and the waveplate measurement states.
All angles are in radians.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

NORM_TOL = 1e-12


class WaveplateKind(str, enum.Enum):
    QWP = "QWP"
    HWP = "HWP"


@dataclass(frozen=True)
class JonesVector:
    h: complex
    v: complex

    def as_array(self) -> np.ndarray:
        return np.array([self.h, self.v], dtype=complex)

    def norm(self) -> float:
        return math.sqrt(abs(self.h) ** 2 + abs(self.v) ** 2)

    def inner(self, other: JonesVector) -> complex:
        """Return <self|other>."""
        return self.h.conjugate() * other.h + self.v.conjugate() * other.v

    def equals_up_to_phase(self, other: JonesVector, tol: float = 1e-12) -> bool:
        return abs(abs(self.inner(other)) - self.norm() * other.norm()) <= tol


@dataclass(frozen=True)
class PolDensity:
    m: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m, dtype=complex)
        if m.shape != (2, 2):
            raise ValueError(f"density matrix must be 2x2, got {m.shape}")
        m.setflags(write=False)
        object.__setattr__(self, "m", m)

    def expectation(self, state: JonesVector) -> float:
        """Return <state|rho|state> (real for a Hermitian rho)."""
        a = state.as_array()
        return float(np.real(a.conj() @ self.m @ a))

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.m)


@dataclass(frozen=True)
class ChannelParams:
    """Birefringent channel: polarization rotation ``theta`` and phase ``phi``."""

    theta: float
    phi: float = 0.0


@dataclass(frozen=True)
class WaveplateSetting:
    kind: WaveplateKind
    chi: float

    def __post_init__(self):
        object.__setattr__(self, "kind", WaveplateKind(self.kind))
        object.__setattr__(self, "chi", float(self.chi) % math.pi)

    @classmethod
    def from_degrees(cls, kind, chi_deg: float) -> WaveplateSetting:
        return cls(kind, math.radians(chi_deg))


def rotated_eigenstate(index: int, ch: ChannelParams) -> JonesVector:
    """Image of |H> (index 1) or |V> (index 2) after the birefringent channel."""
    c = math.cos(ch.theta / 2)
    s = math.sin(ch.theta / 2)
    phase = complex(math.cos(ch.phi), math.sin(ch.phi))
    if index == 1:
        return JonesVector(complex(c), s * phase)
    if index == 2:
        return JonesVector(complex(s), -c * phase)
    raise ValueError(f"eigenstate index must be 1 or 2, got {index!r}")


def _projector(state: JonesVector) -> np.ndarray:
    a = state.as_array()
    return np.outer(a, a.conj())


def propagate_density(p: float, ch: ChannelParams) -> PolDensity:
    """Density matrix of a doublet with polarization degree ``p`` after the channel."""
    if not -1.0 <= p <= 1.0:
        raise ValueError(f"polarization degree p must lie in [-1, 1], got {p}")
    b1 = rotated_eigenstate(1, ch)
    b2 = rotated_eigenstate(2, ch)
    m = 0.5 * (1 + p) * _projector(b1) + 0.5 * (1 - p) * _projector(b2)
    return PolDensity(m)


def measurement_state(wp: WaveplateSetting) -> JonesVector:
    """State selected by the waveplate at ``wp.chi`` followed by an H polarizer."""
    c2 = math.cos(2 * wp.chi)
    s2 = math.sin(2 * wp.chi)
    if wp.kind is WaveplateKind.QWP:
        r = 1 / math.sqrt(2)
        return JonesVector(r * complex(c2, 1.0), complex(r * s2))
    return JonesVector(complex(c2), complex(s2))


def projection_weights(m: JonesVector, ch: ChannelParams) -> tuple[float, float]:
    """Return (alpha_1, alpha_2) with alpha_j = |<M|B_j>|^2."""
    if abs(m.norm() - 1.0) > 1e-9:
        raise ValueError(f"measurement state must be normalized, |M| = {m.norm()}")
    a1 = abs(m.inner(rotated_eigenstate(1, ch))) ** 2
    a2 = abs(m.inner(rotated_eigenstate(2, ch))) ** 2
    return a1, a2


def measurement_amplitudes(kind: WaveplateKind | str, chi) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized (M_h, M_v) for an array of waveplate angles."""
    chi = np.asarray(chi, dtype=float)
    c2 = np.cos(2 * chi)
    s2 = np.sin(2 * chi)
    if WaveplateKind(kind) is WaveplateKind.QWP:
        return (c2 + 1j) / np.sqrt(2), s2 / np.sqrt(2) + 0j
    return c2 + 0j, s2 + 0j


def projection_weights_grid(kind, theta, phi, chi) -> tuple[np.ndarray, np.ndarray]:
    """Broadcasting version of :func:`projection_weights` by explicit inner products."""
    theta, phi, chi = np.broadcast_arrays(
        np.asarray(theta, float), np.asarray(phi, float), np.asarray(chi, float)
    )
    mh, mv = measurement_amplitudes(kind, chi)
    c = np.cos(theta / 2)
    s = np.sin(theta / 2)
    e = np.exp(1j * phi)
    a1 = np.abs(mh.conj() * c + mv.conj() * s * e) ** 2
    a2 = np.abs(mh.conj() * s - mv.conj() * c * e) ** 2
    return a1, a2

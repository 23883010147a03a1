"""Closed-form two-path beat of a single idealized atom.

After the first H photon the atom sits in a superposition of g_{m-1} and
g_{m+1}. Re-excitation by the pi-polarized drive maps it onto e_{m-1} and
e_{m+1} with amplitudes

    A_-(tau) = c_- exp(+i dg tau) / (gamma - i (m-1) Delta)
    A_+(tau) = c_+ exp(-i dg tau) / (gamma + i (m+1) Delta)

and the second H photon returns it to g_m through either path. The delayed
coincidence rate is |s_- A_- + s_+ A_+|^2 with s_+- the emission weights of
the second photon, so it oscillates at 2 dg with visibility V and phase theta
fixed by the four complex weights. Paths to g_{m+-2} are left out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "IdealBeatParams",
    "excited_superposition",
    "ideal_g2",
    "ideal_beat_frequency",
    "ideal_g2_shape",
    "precession_phase",
    "visibility_phase",
]


@dataclass(frozen=True)
class IdealBeatParams:
    delta_g: float  # rad/s
    delta_e: float  # rad/s
    gamma: float  # rad/s, amplitude damping used in the denominators
    cg_minus: complex = 1.0  # first-emission times excitation weight, path via m-1
    cg_plus: complex = 1.0
    m: int = 0
    emit_minus: complex = 1.0  # second-emission weight e_{m-1} -> g_m
    emit_plus: complex = 1.0  # second-emission weight e_{m+1} -> g_m
    drive_detuning: float = 0.0  # rad/s, common shift of both denominators

    @property
    def Delta(self) -> float:
        return self.delta_e - self.delta_g

    @classmethod
    def from_config(cls, cfg, m: int = 0) -> "IdealBeatParams":
        """Weights from the level scheme of ``cfg``; gamma is the amplitude rate gamma/2."""
        from .trajectory import W_MINUS, W_PLUS

        sch = cfg.scheme
        z = cfg.zeeman

        def cg(mg, q):
            return sch.cg_dyn(mg, q) if abs(mg) <= sch.Fg and abs(mg + q) <= sch.Fe else 0.0

        # first photon: e_m -> g_{m-1} is q=+1, e_m -> g_{m+1} is q=-1
        first_minus = W_PLUS * cg(m - 1, 1)
        first_plus = W_MINUS * cg(m + 1, -1)
        return cls(
            delta_g=z.delta_g, delta_e=z.delta_e, gamma=0.5 * cfg.cavity.gamma,
            cg_minus=first_minus * cg(m - 1, 0), cg_plus=first_plus * cg(m + 1, 0), m=m,
            emit_minus=W_MINUS * cg(m, -1), emit_plus=W_PLUS * cg(m, 1),
            drive_detuning=cfg.drive.detuning)


def precession_phase(tau, delta_g: float):
    """phi(tau) = delta_g * tau."""
    return delta_g * np.asarray(tau, dtype=float) if np.ndim(tau) else delta_g * float(tau)


def excited_superposition(tau, p: IdealBeatParams):
    """(A_-, A_+) at delay ``tau``."""
    if p.gamma <= 0:
        raise ValueError("gamma must be positive")
    phi = precession_phase(tau, p.delta_g)
    dm = p.gamma - 1j * ((p.m - 1) * p.Delta - p.drive_detuning)
    dp = p.gamma + 1j * ((p.m + 1) * p.Delta - p.drive_detuning)
    return p.cg_minus * np.exp(1j * phi) / dm, p.cg_plus * np.exp(-1j * phi) / dp


def visibility_phase(p: IdealBeatParams) -> tuple[float, float]:
    """(V, theta) with |s_- A_- + s_+ A_+|^2 proportional to 1 + V cos(2 dg tau + theta)."""
    am, ap = excited_superposition(0.0, p)
    u = p.emit_minus * am
    w = p.emit_plus * ap
    den = abs(u) ** 2 + abs(w) ** 2
    if den == 0:
        return 0.0, 0.0
    x = u * np.conj(w)
    return float(2 * abs(x) / den), float(np.angle(x))


def ideal_g2_shape(tau_grid, p: IdealBeatParams, transit_sigma: float):
    """exp(-(tau/sigma)^2) [1 + V cos(2 dg tau + theta)].

    This is the small-nbar limit of the one-atom channel of the full model,
    up to its height; ``transit_sigma`` is the 1/e half-width of the envelope.
    """
    if transit_sigma <= 0:
        raise ValueError("transit_sigma must be positive")
    t = np.asarray(tau_grid, dtype=float)
    V, th = visibility_phase(p)
    return np.exp(-(t / transit_sigma) ** 2) * (1.0 + V * np.cos(2 * p.delta_g * np.abs(t) + th))


def ideal_g2(tau_grid, p: IdealBeatParams, transit_sigma: float, height: float = 1.0):
    """Raised curve 1 + height * shape, on the same footing as a normalized g2."""
    return 1.0 + height * ideal_g2_shape(tau_grid, p, transit_sigma)


def ideal_beat_frequency(p: IdealBeatParams) -> float:
    """2 delta_g / 2 pi in Hz."""
    return abs(2 * p.delta_g) / (2 * math.pi)

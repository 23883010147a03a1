"""Angular-momentum algebra for a single F -> F' dipole transition.

Clebsch-Gordan coefficients follow the Condon-Shortley phase convention and
are evaluated exactly from the Racah closed form (integer arithmetic under the
square root), so every value is correctly rounded to double precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

MU_B_OVER_H = 1.399624e6  # Hz per gauss

__all__ = [
    "MU_B_OVER_H",
    "AngmomError",
    "LevelScheme",
    "ZeemanSplitting",
    "clebsch_gordan",
    "lande_gF",
    "level_scheme",
    "rb85_scheme",
    "zeeman_detunings",
]


class AngmomError(ValueError):
    """Invalid quantum numbers."""


def _fact(n: int) -> int:
    return math.factorial(n)


def _cg_doubled(j1: int, m1: int, j2: int, m2: int, J: int, M: int) -> float:
    # All arguments are twice the physical quantum numbers.
    if M != m1 + m2:
        return 0.0
    if abs(m1) > j1 or abs(m2) > j2 or abs(M) > J:
        return 0.0
    if (j1 + m1) % 2 or (j2 + m2) % 2 or (J + M) % 2:
        return 0.0
    if J > j1 + j2 or J < abs(j1 - j2) or (j1 + j2 + J) % 2:
        return 0.0

    def h(x: int) -> int:
        return x // 2

    pre = Fraction(
        (J + 1)
        * _fact(h(J + j1 - j2))
        * _fact(h(J - j1 + j2))
        * _fact(h(j1 + j2 - J))
        * _fact(h(J + M))
        * _fact(h(J - M))
        * _fact(h(j1 - m1))
        * _fact(h(j1 + m1))
        * _fact(h(j2 - m2))
        * _fact(h(j2 + m2)),
        _fact(h(j1 + j2 + J) + 1),
    )
    kmin = max(0, h(j2 - J - m1), h(j1 - J + m2))
    kmax = min(h(j1 + j2 - J), h(j1 - m1), h(j2 + m2))
    s = Fraction(0)
    for k in range(kmin, kmax + 1):
        den = (
            _fact(k)
            * _fact(h(j1 + j2 - J) - k)
            * _fact(h(j1 - m1) - k)
            * _fact(h(j2 + m2) - k)
            * _fact(h(J - j2 + m1) + k)
            * _fact(h(J - j1 - m2) + k)
        )
        s += Fraction((-1) ** k, den)
    if s == 0:
        return 0.0
    val2 = pre * s * s
    return math.copysign(math.sqrt(val2.numerator) / math.sqrt(val2.denominator), s)


def clebsch_gordan(Fg: int, m: int, q: int, Fe: int) -> float:
    """<Fg m; 1 q | Fe m+q> in the Condon-Shortley convention."""
    for name, v in (("Fg", Fg), ("Fe", Fe), ("m", m), ("q", q)):
        if int(v) != v:
            raise AngmomError(f"{name} must be an integer, got {v!r}")
    if Fg < 0 or Fe < 0:
        raise AngmomError(f"negative angular momentum (Fg={Fg}, Fe={Fe})")
    if abs(m) > Fg:
        raise AngmomError(f"|m|={abs(m)} exceeds Fg={Fg}")
    if q not in (-1, 0, 1):
        raise AngmomError(f"q must be -1, 0 or +1, got {q}")
    if abs(Fe - Fg) > 1:
        raise AngmomError(f"dipole transition needs |Fe-Fg|<=1 (Fg={Fg}, Fe={Fe})")
    if abs(m + q) > Fe:
        return 0.0
    return _cg_doubled(2 * Fg, 2 * m, 2, 2 * q, 2 * Fe, 2 * (m + q))


def lande_gF(F: float, J: float, I: float, gJ: float) -> float:
    """Hyperfine Landé factor with the nuclear moment neglected."""
    if F <= 0:
        raise AngmomError("gF undefined for F=0")
    if not (abs(J - I) <= F <= J + I) or (F - J - I) % 1:
        raise AngmomError(f"F={F} violates the triangle rule with J={J}, I={I}")
    return gJ * (F * (F + 1) + J * (J + 1) - I * (I + 1)) / (2 * F * (F + 1))


@dataclass(frozen=True)
class ZeemanSplitting:
    delta_g: float  # rad/s per unit m
    delta_e: float
    Delta: float


@dataclass(frozen=True)
class LevelScheme:
    Fg: int
    Fe: int
    I2: int  # twice the nuclear spin
    gF_ground: float
    gF_excited: float
    cg: dict = field(repr=False, compare=False, default_factory=dict)

    def __post_init__(self):
        if abs(self.Fe - self.Fg) > 1 or (self.Fg == 0 and self.Fe == 0) or min(self.Fg, self.Fe) < 0:
            raise AngmomError(f"not a dipole transition: Fg={self.Fg}, Fe={self.Fe}")
        if not self.cg:
            table = {
                (m, q): clebsch_gordan(self.Fg, m, q, self.Fe)
                for m in range(-self.Fg, self.Fg + 1)
                for q in (-1, 0, 1)
            }
            object.__setattr__(self, "cg", table)

    def cg_raw(self, m: int, q: int) -> float:
        """Bare coefficient; zero outside the ground manifold."""
        return self.cg.get((m, q), 0.0)

    @property
    def cg_scale(self) -> float:
        """Divisor that maps the bare table onto the dynamics convention.

        The coupling constant is quoted on the m=0 -> m'=0 line, so the
        dynamics use cg/cg(0,0). When that line is forbidden (Fg=Fe integer)
        the largest coefficient is used instead.
        """
        c00 = self.cg_raw(0, 0) if self.Fg >= 0 else 0.0
        if abs(c00) > 1e-12:
            return c00
        return max(abs(v) for v in self.cg.values())

    def cg_dyn(self, m: int, q: int) -> float:
        return self.cg_raw(m, q) / self.cg_scale


def level_scheme(Fg: int, Fe: int, J2_ground: int = 1, J2_excited: int = 3, I2: int = 5,
                 gJ_ground: float = 2.002, gJ_excited: float = 4.0 / 3.0) -> LevelScheme:
    gg = lande_gF(Fg, J2_ground / 2, I2 / 2, gJ_ground) if Fg > 0 else 0.0
    ge = lande_gF(Fe, J2_excited / 2, I2 / 2, gJ_excited) if Fe > 0 else 0.0
    return LevelScheme(Fg=Fg, Fe=Fe, I2=I2, gF_ground=gg, gF_excited=ge)


def rb85_scheme(gJ_ground: float = 2.002, gJ_excited: float = 4.0 / 3.0) -> LevelScheme:
    """85Rb D2 line, F=3 -> F'=4."""
    return level_scheme(3, 4, 1, 3, 5, gJ_ground, gJ_excited)


def zeeman_detunings(B: float, scheme: LevelScheme) -> ZeemanSplitting:
    if B < 0:
        raise AngmomError("field magnitude must be non-negative")
    dg = 2 * math.pi * scheme.gF_ground * MU_B_OVER_H * B
    de = 2 * math.pi * scheme.gF_excited * MU_B_OVER_H * B
    return ZeemanSplitting(dg, de, de - dg)

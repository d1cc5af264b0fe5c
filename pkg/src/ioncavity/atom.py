"""Level structure of 40Ca+ (S1/2, P1/2, D3/2) and angular-momentum weights.

Units: angular frequencies in rad/us, magnetic field in gauss.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

#: Bohr magneton over Planck constant, MHz per gauss.
MU_B_MHZ_PER_G = 1.399624

TWO_PI = 2.0 * math.pi


def mhz(f: float) -> float:
    """Linear frequency in MHz -> angular frequency in rad/us."""
    return TWO_PI * f


class ForbiddenTransition(ValueError):
    pass


class Term(enum.Enum):
    S12 = "S12"
    P12 = "P12"
    D32 = "D32"

    @property
    def l(self) -> int:
        return {"S12": 0, "P12": 1, "D32": 2}[self.value]

    @property
    def s(self) -> Fraction:
        return Fraction(1, 2)

    @property
    def j(self) -> Fraction:
        return {"S12": Fraction(1, 2), "P12": Fraction(1, 2), "D32": Fraction(3, 2)}[self.value]


class Pol(enum.IntEnum):
    """Light polarization, labelled by q = m_upper - m_lower of the absorption."""

    SIGMA_MINUS = -1
    PI = 0
    SIGMA_PLUS = 1

    @property
    def key(self) -> str:
        return {-1: "sigma_minus", 0: "pi", 1: "sigma_plus"}[int(self)]

    @classmethod
    def parse(cls, value: "str | int | Pol") -> "Pol":
        if isinstance(value, Pol):
            return value
        if isinstance(value, int):
            return cls(value)
        aliases = {
            "sigma_minus": -1, "sigma-": -1, "s-": -1, "σ-": -1, "σ⁻": -1,
            "pi": 0, "π": 0,
            "sigma_plus": 1, "sigma+": 1, "s+": 1, "σ+": 1, "σ⁺": 1,
        }
        try:
            return cls(aliases[value.strip().lower()])
        except KeyError:
            raise ValueError(f"unknown polarization {value!r}") from None


@dataclass(frozen=True, order=True)
class Level:
    term: Term
    m: float

    def __post_init__(self):
        twice_m = 2 * self.m
        if twice_m != round(twice_m) or abs(self.m) > float(self.term.j):
            raise ValueError(f"m={self.m} is not a sublevel of {self.term.value}")
        if int(round(twice_m)) % 2 == 0:
            raise ValueError(f"m={self.m} must be half-integer")

    @property
    def label(self) -> str:
        num = int(round(2 * self.m))
        sign = "+" if num > 0 else "-"
        return f"{self.term.value}:{sign}{abs(num)}/2"

    @classmethod
    def parse(cls, text: str) -> "Level":
        """Parse labels such as ``"S12:-1/2"`` or ``"D32:+3/2"``."""
        try:
            term, m = text.split(":")
            m = float(Fraction(m.strip().replace("+", "")))
            return cls(Term(term.strip().upper()), m)
        except (ValueError, KeyError) as exc:
            raise ValueError(f"cannot parse level {text!r}: {exc}") from None

    def __str__(self) -> str:
        return self.label


def _sublevels(term: Term) -> list[Level]:
    j2 = int(2 * term.j)
    return [Level(term, m2 / 2) for m2 in range(-j2, j2 + 1, 2)]


#: Fixed basis order: S-, S+, P-, P+, D-3/2, D-1/2, D+1/2, D+3/2.
LEVELS: tuple[Level, ...] = tuple(
    _sublevels(Term.S12) + _sublevels(Term.P12) + _sublevels(Term.D32)
)
LEVEL_INDEX = {lvl: i for i, lvl in enumerate(LEVELS)}


def levels_of(term: Term) -> list[Level]:
    return [lvl for lvl in LEVELS if lvl.term is term]


def lande_g(term: Term) -> float:
    """Lande g-factor with g_s = 2 (first-order LS coupling)."""
    l, s, j = Fraction(term.l), term.s, term.j
    g = 1 + (j * (j + 1) + s * (s + 1) - l * (l + 1)) / (2 * j * (j + 1))
    return float(g)


def zeeman_shift(level: Level, B: float) -> float:
    """Linear Zeeman shift in rad/us for a field of ``B`` gauss."""
    if B < 0:
        raise ValueError("B must be non-negative")
    return TWO_PI * lande_g(level.term) * level.m * MU_B_MHZ_PER_G * B


# Clebsch-Gordan coefficients, Racah closed form on doubled quantum numbers.

def _fact(n2: int) -> int:
    # n2 is twice an integer
    return math.factorial(n2 // 2)


@lru_cache(maxsize=None)
def clebsch_gordan(j1: Fraction, m1: Fraction, j2: Fraction, m2: Fraction,
                   J: Fraction, M: Fraction) -> float:
    """<j1 m1; j2 m2 | J M> (Condon-Shortley phase)."""
    a, b, c = int(2 * j1), int(2 * j2), int(2 * J)
    ma, mb, mc = int(2 * m1), int(2 * m2), int(2 * M)
    if ma + mb != mc:
        return 0.0
    if c < abs(a - b) or c > a + b or (a + b + c) % 2:
        return 0.0
    if abs(ma) > a or abs(mb) > b or abs(mc) > c:
        return 0.0
    if (a + ma) % 2 or (b + mb) % 2 or (c + mc) % 2:
        return 0.0

    pref = Fraction(
        (c + 1) * _fact(c + a - b) * _fact(c - a + b) * _fact(a + b - c),
        _fact(a + b + c + 2),
    )
    pref *= (_fact(c + mc) * _fact(c - mc) * _fact(a - ma) * _fact(a + ma)
             * _fact(b - mb) * _fact(b + mb))
    total = Fraction(0)
    k2 = 0
    while True:
        args = (a + b - c - k2, a - ma - k2, b + mb - k2,
                c - b + ma + k2, c - a - mb + k2)
        if args[0] < 0 or args[1] < 0 or args[2] < 0:
            break
        if args[3] >= 0 and args[4] >= 0:
            den = _fact(k2)
            for x in args:
                den *= _fact(x)
            total += Fraction((-1) ** (k2 // 2), den)
        k2 += 2
    return math.copysign(math.sqrt(pref * total * total), total) if total else 0.0


_DECAY_CHANNELS = {(Term.P12, Term.S12), (Term.P12, Term.D32)}


def dipole_weight(upper: Level, lower: Level, q: "Pol | int") -> float:
    """Relative dipole amplitude of ``lower <-> upper`` for polarization ``q``.

    ``q`` follows the absorption convention ``m_upper - m_lower``. The weight
    is <j_lower m_lower; 1 q | j_upper m_upper>, so squared weights from one
    upper sublevel into one lower term sum to one.
    """
    q = int(q)
    if (upper.term, lower.term) not in _DECAY_CHANNELS:
        raise ForbiddenTransition(f"{lower} <-> {upper} is not dipole-connected")
    dm = upper.m - lower.m
    if abs(dm) > 1 or dm != q:
        raise ForbiddenTransition(
            f"{lower} <-> {upper} has m_upper - m_lower = {dm:+g}, polarization q = {q:+d}"
        )
    f = Fraction
    return clebsch_gordan(lower.term.j, f(lower.m).limit_denominator(2), f(1), f(q),
                          upper.term.j, f(upper.m).limit_denominator(2))


def allowed_pairs(upper_term: Term, lower_term: Term) -> list[tuple[Level, Level, Pol]]:
    """All (upper, lower, q) dipole pairs with nonzero weight between two terms."""
    out = []
    for up in levels_of(upper_term):
        for lo in levels_of(lower_term):
            dm = up.m - lo.m
            if abs(dm) <= 1:
                q = Pol(int(dm))
                if dipole_weight(up, lo, q) != 0.0:
                    out.append((up, lo, q))
    return out

"""Integrability exponents and the moment conditions built from them."""

from dataclasses import dataclass, asdict
from fractions import Fraction
import math

from ..errors import ValidationError

INF = math.inf


def conjugate(p):
    """Hoelder conjugate p/(p-1), with 1 <-> inf."""
    if p == 1:
        return INF
    if p == INF:
        return 1.0
    return p / (p - 1.0)


def _recip(v):
    # exact 1/v for the rational comparisons below
    return Fraction(0) if v == INF else 1 / Fraction(v)


@dataclass(frozen=True)
class ExponentSet:
    d: int
    p: float
    q: float
    m: float | None = None
    s: float | None = None

    def __post_init__(self):
        if self.d < 1:
            raise ValidationError("d must be >= 1")
        if not (self.p > 1 and self.q > 1):
            raise ValidationError("p and q must lie in (1, inf]", p=self.p, q=self.q)

    @property
    def p_star(self):
        return conjugate(self.p)

    @property
    def q_star(self):
        return conjugate(self.q)

    @property
    def rho(self):
        denom = self.d - 2 + (0.0 if self.q == INF else self.d / self.q)
        return INF if denom == 0 else self.d / denom

    @property
    def kappa(self):
        rho = self.rho
        return 1.0 if rho == INF else (rho - 1.0) / rho

    @property
    def theta(self):
        return (1.0 + self.kappa) / self.p_star

    @property
    def gamma(self):
        """Distance exponent of mu_*: (d(p-1)+4p)/(p+1)."""
        if self.p == INF:
            return self.d + 4.0
        return (self.d * (self.p - 1) + 4 * self.p) / (self.p + 1)

    @property
    def c_power(self):
        """Conductance exponent of mu_*: 2p/(p+1)."""
        return 2.0 if self.p == INF else 2 * self.p / (self.p + 1)

    @property
    def gamma0(self):
        return self.gamma / self.c_power

    @property
    def sublinear_exponent(self):
        """Exponent 2p/(p-1) of the averaged corrector norm."""
        return 2.0 * self.p_star

    def to_dict(self):
        out = asdict(self)
        out.update(
            p_star=self.p_star, q_star=self.q_star, rho=self.rho, kappa=self.kappa,
            theta=self.theta, gamma=self.gamma, gamma0=self.gamma0, c_power=self.c_power,
        )
        return out


@dataclass(frozen=True)
class AssumptionReport:
    exponents: ExponentSet
    ergodic_moment: bool          # 1/p + 1/q < 2/d
    llt_first: bool               # 1/p + 1/q <= (1 + 1/p)/d
    llt_second: bool              # 1/(p-1) + 1/q < 2/d
    sobolev: bool                 # (1 - 1/d)/p + 1/q <= 1/d
    q_infinite_note: str | None

    @property
    def llt(self):
        return self.llt_first and self.llt_second

    def to_dict(self):
        e = self.exponents
        return {
            "exponents": e.to_dict(),
            "ergodic_moment": self.ergodic_moment,
            "llt_first": self.llt_first,
            "llt_second": self.llt_second,
            "llt": self.llt,
            "sobolev": self.sobolev,
            "q_infinite_note": self.q_infinite_note,
        }


def check_assumptions(exponents):
    """Evaluate the moment conditions for ``exponents`` exactly (rational arithmetic)."""
    e = exponents
    if e.p <= 1 or e.q <= 1:
        raise ValidationError("p and q must lie in (1, inf]")
    d = Fraction(e.d)
    ip, iq = _recip(e.p), _recip(e.q)
    ipm1 = Fraction(0) if e.p == INF else 1 / (Fraction(e.p) - 1)
    note = None
    if e.q == INF:
        note = "q = inf: equivalent to inf over nearest-neighbour conductances > 0"
    return AssumptionReport(
        exponents=e,
        ergodic_moment=ip + iq < 2 / d,
        llt_first=ip + iq <= (1 + ip) / d,
        llt_second=ipm1 + iq < 2 / d,
        sobolev=(1 - 1 / d) * ip + iq <= 1 / d,
        q_infinite_note=note,
    )

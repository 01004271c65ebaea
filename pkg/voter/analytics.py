# voter/analytics.py
"""
Closed-form quantities behind the fixation criterion, evaluated in exact
rational arithmetic. Roots are located by bisection on dyadic rationals,
so every bracket carries a checkable sign change.
"""
import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, List, Optional, Tuple, Union

import sympy
from django.core.exceptions import ValidationError

from .choices import PhaseClass
from .core import DensityVector, Params

logger = logging.getLogger(__name__)

ROOT_TOLERANCE = Fraction(1, 10 ** 12)

# ascending powers, P(X) = 9000 - 39150 X - ... + 3000 X^6
P_COEFFICIENTS = (9000, -39150, -37635, 115251, -23080, -8204, 3000)


@dataclass(frozen=True)
class WeightFunction:
    """phi(e) as a function of j = |xi_0(e)|."""
    theta: int

    def weight(self, j: int) -> int:
        if j < 0:
            raise ValidationError(f"Pile size must be non-negative, got {j}", code='invalid_argument')
        if j <= self.theta:
            return -j
        return j - 2 * self.theta

    __call__ = weight


def phi_weight(j: int, theta: int) -> int:
    return WeightFunction(theta).weight(j)


@dataclass(frozen=True)
class SymmetricDensity:
    F: int
    rho1: Fraction
    rho2: Fraction

    def __post_init__(self):
        object.__setattr__(self, 'rho1', Fraction(self.rho1))
        object.__setattr__(self, 'rho2', Fraction(self.rho2))
        if self.rho1 <= 0 or self.rho2 < 0:
            raise ValidationError("Symmetric density needs rho1 > 0 and rho2 >= 0", code='invalid_density')
        if self.F > 2 and 2 * self.rho1 + (self.F - 2) * self.rho2 != 1:
            raise ValidationError("2 rho1 + (F - 2) rho2 must equal 1", code='invalid_density')
        if self.F == 2 and self.rho1 != Fraction(1, 2):
            raise ValidationError("F = 2 forces rho1 = 1/2", code='invalid_density')

    @classmethod
    def from_rho2(cls, F: int, rho2) -> 'SymmetricDensity':
        rho2 = Fraction(rho2)
        if F == 2:
            return cls(2, Fraction(1, 2), Fraction(0))
        return cls(F, (1 - (F - 2) * rho2) / 2, rho2)

    @classmethod
    def uniform(cls, F: int) -> 'SymmetricDensity':
        return cls.from_rho2(F, Fraction(1, F))

    def as_density_vector(self) -> DensityVector:
        if self.F == 2:
            return DensityVector((self.rho1, self.rho1))
        return DensityVector((self.rho1,) + (self.rho2,) * (self.F - 2) + (self.rho1,))


def s1(n):
    return Fraction(n * (n + 1), 2)


def s2(n):
    return Fraction(n * (n + 1) * (2 * n + 1), 6)


def s3(n):
    return Fraction(n * n * (n + 1) * (n + 1), 4)


def sums(theta: int) -> Tuple[Fraction, Fraction, Fraction]:
    """Power sums of 1..theta."""
    if theta < 0:
        raise ValidationError(f"theta must be non-negative, got {theta}", code='invalid_argument')
    return s1(theta), s2(theta), s3(theta)


def edge_type_prob(params: Params, density: Union[DensityVector, SymmetricDensity], j: int) -> Fraction:
    """P(|xi_0(e)| = j) for independent endpoint opinions."""
    if not 0 <= j <= params.F - 1:
        raise ValidationError(f"j must lie in 0..{params.F - 1}, got {j}", code='invalid_argument')
    if isinstance(density, SymmetricDensity):
        return _edge_type_prob_symmetric(params.F, density, j)
    if density.F != params.F:
        raise ValidationError("Density length differs from F", code='invalid_density')
    rho = density.rho
    if j == 0:
        return sum(value * value for value in rho)
    return 2 * sum(rho[i] * rho[i + j] for i in range(params.F - j))


def _edge_type_prob_symmetric(F: int, density: SymmetricDensity, j: int) -> Fraction:
    rho1, rho2 = density.rho1, density.rho2
    if F == 2:
        return Fraction(1, 2)
    if j == 0:
        return 2 * rho1 * rho1 + (F - 2) * rho2 * rho2
    if j == F - 1:
        return 2 * rho1 * rho1
    return 4 * rho1 * rho2 + 2 * (F - j - 2) * rho2 * rho2


def q_polynomial(F: int, theta: int, x, y):
    """Q(X, Y); works on Fractions and on sympy expressions alike."""
    n = F - 2 * theta - 2
    tail = n * (n + 1) // 2
    return (-6 * y * (2 * x + (F - theta - 2) * y) * theta ** 2
            + 2 * y * (6 * x + (F - 2 * theta - 3) * y) * tail
            + 6 * x * x * (F - 2 * theta - 1))


def expected_phi(params: Params, density: SymmetricDensity) -> Fraction:
    y = Fraction(0) if params.F == 2 else density.rho2
    return q_polynomial(params.F, params.theta, density.rho1, y) / 3


def expected_phi_oracle(params: Params, density: Union[DensityVector, SymmetricDensity]) -> Fraction:
    weights = WeightFunction(params.theta)
    return sum(weights(j) * edge_type_prob(params, density, j) for j in range(1, params.F))


def expected_phi_uniform(params: Params) -> Fraction:
    F, theta = params.F, params.theta
    spread = (F - 2 * theta - 1) * (F - 2 * theta) * (F - 2 * theta + 1)
    return Fraction(-6 * (F - theta) * theta ** 2 + spread, 3 * F * F)


@dataclass(frozen=True)
class ContributionBounds:
    fA: Fraction
    fB: Fraction
    fC: Fraction

    @property
    def total(self) -> Fraction:
        return self.fA + self.fB + self.fC


def contribution_bounds_uniform(params: Params, statement_variant: bool = False) -> ContributionBounds:
    """
    Lower bounds for the three blockade-destroying events under the uniform
    density. `statement_variant` swaps (2F - 5 theta - 2) in f(B) for
    (2F - 5 theta - 1).
    """
    F, t = params.F, params.theta
    pair = t * (t + 1)
    shift = 1 if statement_variant else 2
    fA = Fraction(pair * (2 * F * (2 * t + 1) - 3 * pair), 9 * F ** 3)
    fB = Fraction(pair * (3 * (t + 1) * (2 * F - 5 * t - shift) + 2 * (2 * t + 1) * (3 * t - F + 2)), 9 * F ** 3)
    fC = Fraction(pair * (6 * F * (F - 2 * t - 1) - 2 * (2 * t + 1) * (2 * F - 2 * t - 1) + 9 * pair), 12 * F ** 3)
    return ContributionBounds(fA, fB, fC)


def contribution_sums_uniform(params: Params) -> ContributionBounds:
    """Unsimplified double sums; they agree with the closed forms when F >= 2 theta + 2."""
    F, t = params.F, params.theta
    fA = sum(min(i, j) * (F - max(i, j)) for i in range(1, t + 1) for j in range(1, t + 1))
    fB = sum((i + j - t) * (F - i - j) for i in range(1, t + 1) for j in range(t + 1 - i, t + 1))
    fC = sum(i * (F - i - j) for i in range(1, t + 1) for j in range(t + 1, F - i + 1))
    scale = Fraction(1, F ** 3)
    return ContributionBounds(Fraction(4, 3) * fA * scale, Fraction(4, 3) * fB * scale, 2 * fC * scale)


def fixation_margin_terms(params: Params) -> Tuple[int, int, int, int]:
    F, t = params.F, params.theta
    pair = t * (t + 1)
    return (
        12 * F * ((F - 2 * t - 1) * (F - 2 * t) * (F - 2 * t + 1) - 6 * t * t * (F - t)),
        4 * pair * (2 * F * (2 * t + 1) - 3 * pair),
        4 * pair * (3 * (t + 1) * (2 * F - 5 * t - 2) + 2 * (2 * t + 1) * (3 * t - F + 2)),
        3 * pair * (6 * F * (F - 2 * t - 1) - 2 * (2 * t + 1) * (2 * F - 2 * t - 1) + 9 * pair),
    )


def fixation_predicate_uniform(params: Params) -> Tuple[bool, int]:
    """Grand inequality under the uniform density; margin = 36 F^3 (E phi + fA + fB + fC)."""
    margin = sum(fixation_margin_terms(params))
    return margin > 0, margin


def asymptotic_weight_sign(x):
    """Limit of 3 F^2 E phi / F^3 along theta = x F."""
    return (1 - 2 * x) ** 3 - 6 * x * x * (1 - x)


def asymptotic_margin(x):
    """Limit of the grand-inequality margin divided by F^4 along theta = x F."""
    return 12 * (1 - 2 * x) ** 3 + 9 * x * x * (3 * x * x + 4 * x - 6)


@dataclass(frozen=True)
class RootBracket:
    lo: Fraction
    hi: Fraction

    @property
    def midpoint(self) -> Fraction:
        return (self.lo + self.hi) / 2

    @property
    def width(self) -> Fraction:
        return self.hi - self.lo

    def __float__(self):
        return float(self.midpoint)


def bisect_root(f: Callable[[Fraction], Fraction], lo, hi, tol: Fraction = ROOT_TOLERANCE) -> RootBracket:
    lo, hi = Fraction(lo), Fraction(hi)
    f_lo, f_hi = f(lo), f(hi)
    if f_lo == 0:
        return RootBracket(lo, lo)
    if f_hi == 0:
        return RootBracket(hi, hi)
    if (f_lo > 0) == (f_hi > 0):
        raise ValidationError(f"No sign change on [{lo}, {hi}]", code='no_bracket')
    while hi - lo > tol:
        mid = (lo + hi) / 2
        f_mid = f(mid)
        if f_mid == 0:
            return RootBracket(mid, mid)
        if (f_mid > 0) == (f_lo > 0):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    return RootBracket(lo, hi)


def asymptotic_slope_brackets() -> Tuple[RootBracket, RootBracket]:
    return (bisect_root(asymptotic_weight_sign, 0, Fraction(1, 2)),
            bisect_root(asymptotic_margin, 0, Fraction(1, 2)))


def asymptotic_slope_roots() -> Tuple[float, float]:
    """(c_minus, c_plus): slopes theta/F below which E phi > 0, resp. the grand inequality holds."""
    minus, plus = asymptotic_slope_brackets()
    return float(minus), float(plus)


def _check_rho2(rho2) -> Fraction:
    rho2 = Fraction(rho2)
    if not 0 <= rho2 <= Fraction(1, 2):
        raise ValidationError(f"rho2 must lie in [0, 1/2], got {rho2}", code='invalid_argument')
    return rho2


def expected_phi_special(rho2) -> Fraction:
    """E phi for F = 4, theta = 1 under the symmetric density."""
    x = _check_rho2(rho2)
    return 4 * x * x - 4 * x + Fraction(1, 2)


def _special_bounds(x, a):
    d1 = 5 * x + 20
    d2 = 3 * x + 6
    fA = Fraction(181, 225) * x * x + 2 * a * a * x * (1 - Fraction(26, 75) * x - 2 * x * (1 - x) / d1)
    fB = 4 * a * x * x * (Fraction(203, 225) - Fraction(13, 75) * x + x * (1 - x) / d1)
    fC = 4 * a * a * x * (1 - Fraction(5, 9) * x - 2 * x * (1 - x) / d2)
    return fA, fB, fC


def contribution_bounds_special(rho2) -> ContributionBounds:
    x = _check_rho2(rho2)
    return ContributionBounds(*_special_bounds(x, Fraction(1, 2) - x))


def special_sum(rho2) -> Fraction:
    return expected_phi_special(rho2) + contribution_bounds_special(rho2).total


def special_oracle(rho2) -> Fraction:
    x = _check_rho2(rho2)
    return (5 * x + 20) * (3 * x + 6) * special_sum(x)


def polynomial_P(x) -> Fraction:
    x = Fraction(x)
    value = Fraction(0)
    for coefficient in reversed(P_COEFFICIENTS):
        value = value * x + coefficient
    return value


def root_P() -> RootBracket:
    return bisect_root(polynomial_P, 0, Fraction(1, 2))


def fixation_threshold_special() -> Fraction:
    """Largest rho2 (F = 4, theta = 1) for which fixation is proved: the root of P."""
    return root_P().midpoint


def special_oracle_root() -> RootBracket:
    return bisect_root(special_oracle, 0, Fraction(1, 2))


def contribution_curves_special(grid: Iterable) -> List[Tuple[Fraction, ...]]:
    """Rows (rho2, E phi, fA, fB, fC, sum) for F = 4, theta = 1."""
    rows = []
    for rho2 in grid:
        x = _check_rho2(rho2)
        bounds = contribution_bounds_special(x)
        phi = expected_phi_special(x)
        rows.append((x, phi, bounds.fA, bounds.fB, bounds.fC, phi + bounds.total))
    return rows


def _to_fraction(value) -> Fraction:
    value = sympy.Rational(value)
    return Fraction(int(value.p), int(value.q))


def expanded_special_polynomial() -> List[Fraction]:
    """Ascending coefficients of (5x + 20)(3x + 6)(E phi + fA + fB + fC) in x = rho2."""
    x = sympy.Symbol('x')
    a = sympy.Rational(1, 2) - x
    fA, fB, fC = _special_bounds_symbolic(x, a)
    phi = 4 * x ** 2 - 4 * x + sympy.Rational(1, 2)
    expression = sympy.cancel((5 * x + 20) * (3 * x + 6) * (phi + fA + fB + fC))
    coefficients = sympy.Poly(expression, x).all_coeffs()
    return [_to_fraction(c) for c in reversed(coefficients)]


def _special_bounds_symbolic(x, a):
    R = sympy.Rational
    d1 = 5 * x + 20
    d2 = 3 * x + 6
    fA = R(181, 225) * x ** 2 + 2 * a ** 2 * x * (1 - R(26, 75) * x - 2 * x * (1 - x) / d1)
    fB = 4 * a * x ** 2 * (R(203, 225) - R(13, 75) * x + x * (1 - x) / d1)
    fC = 4 * a ** 2 * x * (1 - R(5, 9) * x - 2 * x * (1 - x) / d2)
    return fA, fB, fC


def weight_polynomial(params: Params) -> List[Fraction]:
    """Coefficients of E phi in rho2 under the symmetric family, highest power first."""
    if params.F == 2:
        return [q_polynomial(2, params.theta, Fraction(1, 2), 0) / 3]
    y = sympy.Symbol('y')
    x = (1 - (params.F - 2) * y) / 2
    expression = sympy.expand(q_polynomial(params.F, params.theta, x, y) / 3)
    return [_to_fraction(c) for c in sympy.Poly(expression, y).all_coeffs()]


def fixation_threshold_rho1(params: Params, grid_points: int = 1000) -> Optional[Fraction]:
    """
    Smallest rho1 above which E phi > 0 along the symmetric family, or None
    when E phi > 0 for every admissible rho1. Defined for F > 2 theta + 1.
    """
    if params.in_fluctuation_regime:
        raise ValidationError("Threshold is only defined for F > 2 theta + 1", code='invalid_params')
    top = Fraction(1, params.F - 2)

    def phi_at(rho2: Fraction) -> Fraction:
        return expected_phi(params, SymmetricDensity(params.F, (1 - (params.F - 2) * rho2) / 2, rho2))

    previous = Fraction(0)
    for k in range(1, grid_points):
        current = top * k / grid_points
        if phi_at(current) <= 0:
            rho2 = bisect_root(phi_at, previous, current).midpoint
            return (1 - (params.F - 2) * rho2) / 2
        previous = current
    return None


def fixation_table(F_max: int) -> List[Tuple[int, int, Optional[Fraction]]]:
    return [(F, theta, fixation_threshold_rho1(Params(F, theta)))
            for F in range(4, F_max + 1) for theta in range(1, F) if F > 2 * theta + 1]


def mean_field_psi(rho2) -> float:
    """Mean-field exponent, kept as a reference curve."""
    rho2 = float(rho2)
    if not 0 <= rho2 <= 1:
        raise ValidationError(f"rho2 must lie in [0, 1], got {rho2}", code='invalid_argument')
    return -0.125 + (2 / math.pi ** 2) * math.acos((1 - 2 * rho2) / math.sqrt(2)) ** 2


def mean_field_domain_length(L: float, rho2) -> float:
    return float(L) ** (2 * mean_field_psi(rho2))


@dataclass(frozen=True)
class PhaseCell:
    F: int
    theta: int
    classification: str
    margin: int


def classify(params: Params) -> PhaseCell:
    """Fluctuation when F <= 2 theta + 1, else whether the uniform grand inequality holds."""
    proved, margin = fixation_predicate_uniform(params)
    if params.in_fluctuation_regime:
        classification = PhaseClass.FLUCTUATION
    elif proved:
        classification = PhaseClass.FIXATION_PROVED
    else:
        classification = PhaseClass.UNRESOLVED
    return PhaseCell(params.F, params.theta, classification, margin)


def phase_diagram(F_max: int) -> List[PhaseCell]:
    if F_max < 2:
        raise ValidationError(f"F_max must be >= 2, got {F_max}", code='invalid_argument')
    cells = [classify(Params(F, theta)) for F in range(2, F_max + 1) for theta in range(1, F)]
    logger.debug(f"Phase diagram up to F={F_max}: {len(cells)} cells")
    return cells

"""Lattice-point counts for the sum-zero cross-polytope and the limit distortion formulas.

The polytope is P_d = {x in R^K : sum x = 0, sum |x| <= 2d}.  N_d counts the integer
points on the boundary of the d-th dilation, L_P(d) the points inside it.  From these
come the generating-function evaluations E(theta) = sum N_d theta^d and
Ehr(theta) = sum L_P(d) theta^d, and the three equivalent closed forms of the limiting
optimal distortion dstar_limit(K, theta).

All counting is exact big-integer arithmetic; rational inputs stay rational through
the closed forms.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

from .histograms import CAP_ENV_VAR, CapacityError

__all__ = [
    "CrossPolytopeSpec",
    "FaceCountTable",
    "SeriesEval",
    "EhrhartPolynomial",
    "face_count_bruteforce",
    "face_count_closed",
    "FACE_COUNT_VARIANTS",
    "dilate_count",
    "fit_ehrhart_polynomial",
    "s_polynomial",
    "legendre",
    "e_pf",
    "ehrhart_series",
    "dstar_limit",
    "DSTAR_FORMS",
    "corollary_as_printed",
    "enumerate_face_points",
    "sample_face_point",
]

DEFAULT_BRUTEFORCE_CAP = 200_000_000
MAX_SERIES_TERMS = 1_000_000

FACE_COUNT_VARIANTS = ("pos-neg-split", "zero-split", "root-lattice")
DSTAR_FORMS = ("ehrhart", "s-form", "legendre-corrected")


@dataclass(frozen=True)
class CrossPolytopeSpec:
    """Ambient dimension K; the polytope itself lives in the sum-zero hyperplane (dim K-1)."""

    k: int

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("need K >= 2")


def bruteforce_cap(override: int | None = None) -> int:
    if override is not None:
        return int(override)
    env = os.environ.get(CAP_ENV_VAR)
    if env:
        return int(env)
    return DEFAULT_BRUTEFORCE_CAP


def face_count_bruteforce(k: int, d: int, cap: int | None = None) -> int:
    """Exact |{z in Z^k : sum z = 0, |z|_1 = 2d}| by exhaustive search."""
    if k < 2 or d < 1:
        raise ValueError("need K >= 2 and d >= 1")
    budget = bruteforce_cap(cap)
    if (4 * d + 1) ** (k - 1) > budget:
        raise CapacityError(
            f"brute-force space (4d+1)^(K-1) = {(4 * d + 1) ** (k - 1)} exceeds cap {budget}")

    def count(coords_left: int, partial_sum: int, abs_left: int) -> int:
        if coords_left == 1:
            return 1 if abs(partial_sum) == abs_left else 0
        total = 0
        for v in range(-abs_left, abs_left + 1):
            # the final coordinate must be able to absorb the running sum
            if abs(partial_sum + v) <= abs_left - abs(v):
                total += count(coords_left - 1, partial_sum + v, abs_left - abs(v))
        return total

    return count(k, 0, 2 * d)


def _face_count_pos_neg_split(k: int, d: int) -> int:
    # m coordinates strictly negative (a strict composition of d), the rest >= 0 (a weak one)
    total = 0
    for m in range(1, min(k - 1, d) + 1):
        total += (math.comb(k, m) * math.comb(d - 1, m - 1)
                  * math.comb(d + k - m - 1, k - m - 1))
    return total


def _face_count_zero_split(k: int, d: int) -> int:
    # split by the zero set, then strictly positive / strictly negative supports
    total = 0
    for z in range(0, k - 1):
        for p in range(1, k - z):
            m = k - z - p
            if m < 1:
                continue
            total += (math.comb(k, z) * math.comb(k - z, p)
                      * math.comb(d - 1, p - 1) * math.comb(d - 1, m - 1))
    return total


def _face_count_root_lattice(k: int, d: int) -> int:
    # point count on the A_{K-1} root lattice shell
    total = 0
    for j in range(0, k):
        if d - j < 0:
            continue
        total += math.comb(k - 1, j) ** 2 * math.comb(d + k - j - 2, d - j)
    return total


_FACE_COUNT_IMPLS: dict[str, Callable[[int, int], int]] = {
    "pos-neg-split": _face_count_pos_neg_split,
    "zero-split": _face_count_zero_split,
    "root-lattice": _face_count_root_lattice,
}


def face_count_closed(k: int, d: int, variant: str = "root-lattice") -> int:
    """N_d by one of three exact binomial-sum formulas; all agree with brute force."""
    if k < 2 or d < 1:
        raise ValueError("need K >= 2 and d >= 1")
    try:
        impl = _FACE_COUNT_IMPLS[variant]
    except KeyError:
        raise ValueError(f"unknown variant {variant!r}; pick from {FACE_COUNT_VARIANTS}") from None
    return impl(k, d)


def dilate_count(k: int, d: int) -> int:
    """L_P(d): lattice points in the d-th dilation; L_P(0) = 1."""
    if d < 0:
        raise ValueError("need d >= 0")
    return 1 + sum(face_count_closed(k, j) for j in range(1, d + 1))


@dataclass(frozen=True)
class FaceCountTable:
    """N_d and cumulative L_P(d) for d = 1..d_max."""

    k: int
    d_max: int
    face_counts: tuple[int, ...]
    cumulative: tuple[int, ...]  # L_P(0) .. L_P(d_max)

    @classmethod
    def build(cls, k: int, d_max: int, variant: str = "root-lattice") -> "FaceCountTable":
        counts = tuple(face_count_closed(k, d, variant) for d in range(1, d_max + 1))
        cum = [1]
        for nd in counts:
            cum.append(cum[-1] + nd)
        return cls(k, d_max, counts, tuple(cum))

    def write_csv(self, fh) -> None:
        fh.write("d,N_d,L_P(d)\n")
        for d in range(1, self.d_max + 1):
            fh.write(f"{d},{self.face_counts[d - 1]},{self.cumulative[d]}\n")


@dataclass(frozen=True)
class EhrhartPolynomial:
    """Exact rational-coefficient polynomial (low to high degree) with L_P(d) values."""

    k: int
    coeffs: tuple[Fraction, ...]

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    def __call__(self, d: int) -> Fraction:
        acc = Fraction(0)
        for c in reversed(self.coeffs):
            acc = acc * d + c
        return acc


def fit_ehrhart_polynomial(k: int) -> EhrhartPolynomial:
    """Interpolate L_P through d = 0..K-1 exactly; Ehrhart's theorem makes it degree K-1."""
    points = [(Fraction(d), Fraction(dilate_count(k, d))) for d in range(k)]
    # Lagrange interpolation accumulated in the monomial basis
    coeffs = [Fraction(0)] * k
    for i, (xi, yi) in enumerate(points):
        basis = [Fraction(1)]
        denom = Fraction(1)
        for j, (xj, _) in enumerate(points):
            if j == i:
                continue
            # multiply basis by (x - xj)
            nxt = [Fraction(0)] * (len(basis) + 1)
            for deg, c in enumerate(basis):
                nxt[deg] -= c * xj
                nxt[deg + 1] += c
            basis = nxt
            denom *= xi - xj
        scale = yi / denom
        for deg, c in enumerate(basis):
            coeffs[deg] += scale * c
    while len(coeffs) > 1 and coeffs[-1] == 0:
        coeffs.pop()
    poly = EhrhartPolynomial(k, tuple(coeffs))
    if poly.degree != k - 1:
        raise AssertionError(f"interpolation degree {poly.degree}, expected {k - 1}")
    return poly


def s_polynomial(k: int, theta):
    """S_{K-1}(theta) = sum_j theta^j C(K-1,j)^2 and its derivative; exact on rationals."""
    if k < 2:
        raise ValueError("need K >= 2")
    s = theta * 0
    s_prime = theta * 0
    for j in range(k):
        c2 = math.comb(k - 1, j) ** 2
        s = s + c2 * theta ** j
        if j >= 1:
            s_prime = s_prime + j * c2 * theta ** (j - 1)
    return s, s_prime


def legendre(m: int, x):
    """Legendre polynomial L_m(x) by the three-term recurrence; exact on rationals."""
    if m < 0:
        raise ValueError("need m >= 0")
    prev = x * 0 + 1
    if m == 0:
        return prev
    cur = x
    for i in range(1, m):
        prev, cur = cur, ((2 * i + 1) * x * cur - i * prev) / (i + 1)
    return cur


@dataclass(frozen=True)
class SeriesEval:
    """A generating-function evaluation: value, derivative, and truncation metadata."""

    k: int
    theta: float
    value: float
    derivative: float
    depth: int
    tail_bound: float

    def to_json_dict(self) -> dict:
        def enc(x):
            return str(x) if isinstance(x, Fraction) else x
        return {"k": self.k, "theta": enc(self.theta), "value": enc(self.value),
                "derivative": enc(self.derivative), "depth": self.depth,
                "tail_bound": enc(self.tail_bound)}


def _certified_series(k: int, theta: float, tol: float, coeff, ratio_degree: int,
                      first_term: float) -> SeriesEval:
    """Sum t_d = coeff(d)*theta^d and its theta-derivative with a certified stop.

    coeff(d) must be a positive polynomial in d of degree ratio_degree whose successive
    ratios satisfy coeff(d+1)/coeff(d) <= ((d+1)/d)^ratio_degree (true for non-negative
    polynomial coefficients); the geometric tail bound uses that envelope.
    """
    theta = float(theta)
    if not 0 < theta < 1:
        raise ValueError("series evaluation needs theta in (0,1)")
    if tol <= 0:
        raise ValueError("need tol > 0")
    value = first_term
    deriv = 0.0
    power = 1.0  # theta^(d-1) entering iteration d
    d = 0
    while True:
        d += 1
        if d > MAX_SERIES_TERMS:
            raise RuntimeError(f"series did not converge within {MAX_SERIES_TERMS} terms")
        nd = coeff(d)
        t_val = nd * power * theta
        t_der = d * nd * power
        value += t_val
        deriv += t_der
        power *= theta
        if d < 2 * k:
            continue
        rho_val = theta * ((d + 1) / d) ** ratio_degree
        rho_der = theta * ((d + 1) / d) ** (ratio_degree + 1)
        if (rho_val < 1 and rho_der < 1
                and t_val <= tol * value and t_der <= tol * deriv):
            tail = max(t_val * rho_val / (1 - rho_val), t_der * rho_der / (1 - rho_der))
            return SeriesEval(k, theta, value, deriv, d, tail)


def e_pf(k: int, theta, mode: str = "closed", tol: float = 1e-12) -> SeriesEval:
    """E(theta) = sum_d N_d theta^d and dE/dtheta.

    Closed form S_{K-1}(theta)/(1-theta)^{K-1} (exact on rational theta); series mode
    sums face counts with a certified geometric tail bound.
    """
    if k < 2:
        raise ValueError("need K >= 2")
    if mode == "closed":
        s, s_prime = s_polynomial(k, theta)
        base = (1 - theta) ** (k - 1)
        value = s / base
        deriv = s_prime / base + (k - 1) * s / ((1 - theta) ** k)
        return SeriesEval(k, theta, value, deriv, 0, theta * 0)
    if mode == "series":
        return _certified_series(k, theta, tol, lambda d: face_count_closed(k, d),
                                 k - 2, 1.0)
    raise ValueError(f"unknown mode {mode!r}")


def ehrhart_series(k: int, theta, tol: float = 1e-12) -> SeriesEval:
    """Ehr(theta) = sum_d L_P(d) theta^d and its derivative, via certified truncation."""
    cum = [1]

    def coeff(d: int) -> int:
        while len(cum) <= d:
            cum.append(cum[-1] + face_count_closed(k, len(cum)))
        return cum[d]

    return _certified_series(k, theta, tol, coeff, k - 1, 1.0)


def _as_y(theta):
    return (1 + theta) / (1 - theta)


def dstar_limit(k: int, theta, form: str = "s-form", tol: float = 1e-12):
    """Limiting optimal expected L1 distortion per record budget, three equivalent forms.

    s-form: 2*theta*((K-1)/(1-theta) + S'/S); exact on rational theta.
    legendre-corrected: K*(L_K(y)/L_{K-1}(y) - y) at y=(1+theta)/(1-theta); exact on
      rational theta.  This is the re-derived version of the printed ratio form, which
      as printed (see corollary_as_printed) contradicts its own K=2 special case.
    ehrhart: 2*theta*Ehr'/Ehr - 2*theta/(1-theta); series-evaluated for floats,
      closed (via the (1-theta)*Ehr = E bridge) for rational theta.
    """
    if k < 2:
        raise ValueError("need K >= 2")
    if not 0 < theta < 1:
        raise ValueError("need theta in (0,1)")
    if form == "s-form":
        s, s_prime = s_polynomial(k, theta)
        return 2 * theta * ((k - 1) / (1 - theta) + s_prime / s)
    if form == "legendre-corrected":
        y = _as_y(theta)
        return k * (legendre(k, y) / legendre(k - 1, y) - y)
    if form == "ehrhart":
        if isinstance(theta, Fraction):
            ev = e_pf(k, theta, "closed")
            ehr = ev.value / (1 - theta)
            ehr_prime = (ev.derivative * (1 - theta) + ev.value) / (1 - theta) ** 2
        else:
            se = ehrhart_series(k, theta, tol)
            ehr, ehr_prime = se.value, se.derivative
        return 2 * theta * ehr_prime / ehr - 2 * theta / (1 - theta)
    raise ValueError(f"unknown form {form!r}; pick from {DSTAR_FORMS}")


def corollary_as_printed(k: int, theta):
    """The printed ratio form K*(y + L_K/L_{K-1}); kept for documentation.

    Inconsistent with its own K=2 special case 4*theta/(1-theta^2) (at K=2,
    theta=1/2 it yields 44/3 instead of 8/3); see dstar_limit('legendre-corrected')
    for the re-derived version.
    """
    y = _as_y(theta)
    return k * (y + legendre(k, y) / legendre(k - 1, y))


def enumerate_face_points(k: int, d: int) -> list[tuple[int, ...]]:
    """All integer points with sum 0 and |z|_1 = 2d, in lexicographic order."""
    if d == 0:
        return [(0,) * k]
    out: list[tuple[int, ...]] = []

    def rec(prefix: list[int], partial: int, abs_left: int) -> None:
        if len(prefix) == k - 1:
            last = -partial
            if abs(last) == abs_left:
                out.append(tuple(prefix + [last]))
            return
        for v in range(-abs_left, abs_left + 1):
            if abs(partial + v) <= abs_left - abs(v):
                rec(prefix + [v], partial + v, abs_left - abs(v))

    rec([], 0, 2 * d)
    return out


def sample_face_point(k: int, d: int, rng) -> tuple[int, ...]:
    """Uniform integer point on {z : sum z = 0, |z|_1 = 2d}.

    Exact: pick the strictly-negative support size by its count weight, then the
    support sets and both compositions uniformly via stars-and-bars positions.
    """
    if d == 0:
        return (0,) * k
    if k < 2 or d < 0:
        raise ValueError("need K >= 2 and d >= 0")
    weights = [math.comb(k, m) * math.comb(d - 1, m - 1) * math.comb(d + k - m - 1, k - m - 1)
               for m in range(1, min(k - 1, d) + 1)]
    total = sum(weights)
    pick = rng.randrange(total)
    m = 1
    for w in weights:
        if pick < w:
            break
        pick -= w
        m += 1
    neg_set = sorted(rng.sample(range(k), m))
    neg_parts = _strict_composition(d, m, rng)
    pos_slots = [i for i in range(k) if i not in neg_set]
    pos_parts = _weak_composition(d, k - m, rng)
    z = [0] * k
    for idx, part in zip(neg_set, neg_parts):
        z[idx] = -part
    for idx, part in zip(pos_slots, pos_parts):
        z[idx] = part
    return tuple(z)


def _strict_composition(d: int, m: int, rng) -> list[int]:
    """Uniform composition of d into m parts >= 1 via cut positions."""
    cuts = sorted(rng.sample(range(1, d), m - 1))
    bounds = [0] + cuts + [d]
    return [b - a for a, b in zip(bounds, bounds[1:])]


def _weak_composition(d: int, r: int, rng) -> list[int]:
    """Uniform composition of d into r parts >= 0 via bar positions."""
    bars = sorted(rng.sample(range(d + r - 1), r - 1))
    parts = []
    prev = -1
    for b in bars:
        parts.append(b - prev - 1)
        prev = b
    parts.append(d + r - 1 - prev - 1)
    return parts

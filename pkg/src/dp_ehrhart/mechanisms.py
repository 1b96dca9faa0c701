"""Sanitizing mechanisms: the geometric kernel on the extended lattice, its
truncation back into the simplex, the explicit two-cell truncated-geometric table
with its anchor window, multiplicative-DP verification, distortion evaluation,
and exact samplers.

Probabilities are exact Fractions whenever theta (and the prior) are Fractions;
otherwise 64-bit floats.  Tables are immutable after construction.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction

from .ehrhart import (
    dstar_limit,
    e_pf,
    enumerate_face_points,
    face_count_closed,
    sample_face_point,
)
from .histograms import (
    ExtendedHistogram,
    Histogram,
    MultinomialPrior,
    enumerate_histograms,
    l1_distance,
    neighbors,
)

__all__ = [
    "DegenerateAnchorsError",
    "BallOutsideSimplexError",
    "KernelTable",
    "TruncationSpec",
    "AnchorData",
    "DPReport",
    "geometric_kernel_prob",
    "truncation_center",
    "truncation_map",
    "build_cascade_mechanism",
    "fold_mechanism_k2",
    "build_k2_mechanism",
    "compute_anchors",
    "dp_check",
    "expected_distortion",
    "expected_distortion_heavy",
    "geometric_distortion_closed",
    "geometric_distortion_series",
    "sample_distance",
    "sample_sanitized",
]


class DegenerateAnchorsError(Exception):
    """The anchor scan produced no valid fold window."""


class BallOutsideSimplexError(Exception):
    """The truncation ball does not fit inside the histogram simplex."""


def _is_rational(*values) -> bool:
    return all(isinstance(v, (Fraction, int)) for v in values)


@dataclass(frozen=True)
class KernelTable:
    """Row-stochastic conditional table W(g|h) over a finite output support per row."""

    n: int
    k: int
    theta: object
    rows: dict
    mode: str  # "float" or "rational"

    def inputs(self) -> list[Histogram]:
        return sorted(self.rows)

    def prob(self, g: Histogram, h: Histogram):
        return self.rows[h].get(g, 0 if self.mode == "rational" else 0.0)

    def row_sum(self, h: Histogram):
        return sum(self.rows[h].values())

    def to_json_dict(self) -> dict:
        def enc(p):
            return str(p) if isinstance(p, Fraction) else p
        return {
            "n": self.n,
            "k": self.k,
            "theta": enc(self.theta),
            "rows": [
                {"input": list(h.counts),
                 "outputs": [{"h": list(g.counts), "p": enc(p)}
                             for g, p in sorted(self.rows[h].items())]}
                for h in self.inputs()
            ],
        }

    def write_json(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=1)
            fh.write("\n")


@dataclass(frozen=True)
class TruncationSpec:
    """L1 ball around a center histogram; must fit inside the simplex."""

    center: Histogram
    radius: float

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError("radius must be non-negative")
        dip = self.max_graph_radius()
        low = min(self.center.counts)
        if low < dip:
            raise BallOutsideSimplexError(
                f"ball of L1 radius {self.radius} around {self.center} leaves the simplex "
                f"(min count {low} < max dip {dip}); use radius <= {2 * low} "
                f"(lower the radius constant or raise n)")

    @classmethod
    def around(cls, center: Histogram, radius_const: float = 1.0) -> "TruncationSpec":
        return cls(center, radius_const * center.n ** (2 / 3))

    def max_graph_radius(self) -> int:
        """Largest d with 2d <= radius: in-ball points satisfy d_G(g, center) <= this."""
        return int(math.floor(self.radius / 2 + 1e-12))

    def ball(self) -> list[Histogram]:
        """All histograms in the ball, center first, then by distance and lex order."""
        out = []
        c = self.center.counts
        for d in range(self.max_graph_radius() + 1):
            for z in enumerate_face_points(self.center.k, d):
                out.append(Histogram([a + b for a, b in zip(c, z)]))
        return out


@dataclass(frozen=True)
class AnchorData:
    """Forward/backward weighted sums and the fold window they induce."""

    f: tuple
    b: tuple
    a_n: int
    b_n: int


@dataclass(frozen=True)
class DPReport:
    passed: bool
    worst_ratio: float
    violation: tuple | None  # (h, hhat, g) histograms
    checked: int

    def to_json_dict(self) -> dict:
        viol = None
        if self.violation is not None:
            h, hhat, g = self.violation
            viol = {"h": list(h.counts), "hhat": list(hhat.counts), "g": list(g.counts)}
        return {"passed": self.passed, "worst_ratio": float(self.worst_ratio),
                "violation": viol, "checked": self.checked}


def geometric_kernel_prob(k: int, theta, g, h):
    """U(g|h) = theta^{d_G(g,h)} / E(theta); prior-independent by construction."""
    d = l1_distance(g, h) // 2
    e_val = e_pf(k, theta, "closed").value
    return theta ** d / e_val


def truncation_center(n: int, prior: MultinomialPrior) -> Histogram:
    """Round n*p to a histogram: floor, then largest remainders get the leftovers."""
    scaled = [n * pk for pk in prior.p]
    base = [math.floor(x) for x in scaled]
    short = n - sum(base)
    remainders = sorted(range(prior.k), key=lambda i: (-(scaled[i] - base[i]), i))
    for i in remainders[:short]:
        base[i] += 1
    return Histogram(base)


def truncation_map(g, trunc: TruncationSpec) -> Histogram:
    """The deterministic stage: points outside the ball collapse to the center."""
    if l1_distance(g, trunc.center) <= 2 * trunc.max_graph_radius():
        return g if isinstance(g, Histogram) else Histogram(g.counts)
    return trunc.center


def build_cascade_mechanism(n: int, k: int, theta, prior: MultinomialPrior,
                            trunc: TruncationSpec, cap: int | None = None) -> KernelTable:
    """Geometric stage followed by collapse-to-center truncation, as an exact table.

    In-ball outputs keep their geometric mass theta^{d_G}/E; the center absorbs the
    entire off-ball tail via row normalization, so each row sums to 1 exactly.
    """
    if trunc.center.n != n or trunc.center.k != k:
        raise ValueError("truncation center must live in H^n_K")
    rational = _is_rational(theta) and prior.rational
    one = Fraction(1) if rational else 1.0
    e_val = e_pf(k, theta, "closed").value
    ball = trunc.ball()
    center = trunc.center
    rows = {}
    for h in enumerate_histograms(n, k, cap):
        row = {}
        off_center = one * 0
        for g in ball:
            if g == center:
                continue
            p = theta ** (l1_distance(g, h) // 2) / e_val
            row[g] = p
            off_center += p
        row[center] = one - off_center
        rows[h] = row
    return KernelTable(n, k, theta, rows, "rational" if rational else "float")


def fold_mechanism_k2(n: int, theta, lo: int, hi: int) -> KernelTable:
    """Two-cell geometric kernel folded into the window [lo, hi] of first coordinates.

    Tail masses collapse onto the window endpoints (closed geometric sums), so this
    is the nearest-point truncation of the extended-lattice kernel.
    """
    if not 0 <= lo <= hi <= n:
        raise ValueError("need 0 <= lo <= hi <= n")
    rational = _is_rational(theta)
    one = Fraction(1) if rational else 1.0
    rows = {}
    for i in range(n + 1):
        row = {}
        for j in range(lo, hi + 1):
            if lo == hi:
                p = one
            elif lo < j < hi:
                p = theta ** abs(j - i) * (1 - theta) / (1 + theta)
            elif j == lo:
                p = (theta ** (i - lo) / (1 + theta) if i >= lo
                     else one - theta ** (lo - i + 1) / (1 + theta))
            else:  # j == hi
                p = (theta ** (hi - i) / (1 + theta) if i <= hi
                     else one - theta ** (i - hi + 1) / (1 + theta))
            row[Histogram((j, n - j))] = p
        rows[Histogram((i, n - i))] = row
    return KernelTable(n, 2, theta, rows, "rational" if rational else "float")


def compute_anchors(weights, theta) -> AnchorData:
    """Forward/backward sums f_i, b_i over the weights and the fold window [A_n, B_n].

    f_i = theta*f_{i-1} + 2*w_i, b_i = theta*b_{i+1} + 2*w_i;
    A_n = min{i : f_{k-1} - theta*b_k >= 0 for all k >= i},
    B_n = max{i : b_{k+1} - theta*f_k >= 0 for all k <= i}.
    """
    w = list(weights)
    n = len(w) - 1
    if n < 1:
        raise ValueError("need at least two weights")
    if any(x < 0 for x in w) or not any(x > 0 for x in w):
        raise ValueError("weights must be non-negative and not all zero")
    f = []
    prev = theta * 0
    for wi in w:
        prev = theta * prev + 2 * wi
        f.append(prev)
    b = [None] * (n + 1)
    nxt = theta * 0
    for i in range(n, -1, -1):
        nxt = theta * nxt + 2 * w[i]
        b[i] = nxt
    # k = 0 always fails (f_{-1} = 0), k = n+1-side always fails (b_{n+1} = 0)
    last_fail = 0
    for k in range(1, n + 1):
        if f[k - 1] - theta * b[k] < 0:
            last_fail = k
    if last_fail == n:
        raise DegenerateAnchorsError("forward scan never stabilizes: f_{n-1} < theta*b_n")
    a_n = last_fail + 1
    first_fail = n
    for k in range(n - 1, -1, -1):
        if b[k + 1] - theta * f[k] < 0:
            first_fail = k
    if first_fail == 0:
        raise DegenerateAnchorsError("backward scan never stabilizes: b_1 < theta*f_0")
    b_n = first_fail - 1
    return AnchorData(tuple(f), tuple(b), a_n, b_n)


def build_k2_mechanism(n: int, theta, prior: MultinomialPrior):
    """The optimal two-cell truncated-geometric table and its anchor data.

    Inputs and outputs are indexed by the first coordinate i of (i, n-i); outputs
    span the window [A_n - 1, B_n + 1] with the printed interior/edge/fold masses.
    """
    if prior.k != 2 or prior.n != n:
        raise ValueError("need a two-cell prior over n records")
    weights = [prior.mass(Histogram((i, n - i))) for i in range(n + 1)]
    anchors = compute_anchors(weights, theta)
    a, b = anchors.a_n, anchors.b_n
    if b < a - 2:
        raise DegenerateAnchorsError(f"inverted window: A_n={a}, B_n={b}")
    rational = _is_rational(theta) and prior.rational
    one = Fraction(1) if rational else 1.0
    lo, hi = a - 1, b + 1
    rows = {}
    for i in range(n + 1):
        row = {}
        for j in range(lo, hi + 1):
            if lo == hi:
                # single-point window: the constant mechanism
                p = one
            elif a <= j <= b:
                p = theta ** abs(j - i) * (1 - theta) / (1 + theta)
            elif j == lo:
                p = (theta ** abs(j - i) / (1 + theta) if i >= lo
                     else one - theta ** (a - i) / (1 + theta))
            else:  # j == hi
                p = (theta ** abs(j - i) / (1 + theta) if i <= hi
                     else one - theta ** (i - b) / (1 + theta))
            row[Histogram((j, n - j))] = p
        rows[Histogram((i, n - i))] = row
    table = KernelTable(n, 2, theta, rows, "rational" if rational else "float")
    return table, anchors


def dp_check(table: KernelTable, theta, tol: float = 1e-9) -> DPReport:
    """Exhaustive multiplicative-stability check over all neighboring input rows.

    Every ratio W(g|hhat)/W(g|h) must lie in [theta - tol, 1/theta + tol]; 0/0
    passes, positive-over-zero fails.  worst_ratio is the most extreme disparity
    max(r, 1/r) seen (inf when a one-sided zero occurs).
    """
    inputs = set(table.rows)
    lower, upper = theta - tol, 1 / theta + tol
    checked = 0
    worst = 1.0
    viol_triple = None
    viol_worst = 0.0
    passed = True
    for h in sorted(inputs):
        for hhat in neighbors(h):
            if hhat not in inputs:
                continue
            supports = set(table.rows[h]) | set(table.rows[hhat])
            for g in sorted(supports):
                checked += 1
                p = table.prob(g, h)
                q = table.prob(g, hhat)
                if p == 0 and q == 0:
                    continue
                if p == 0 or q == 0:
                    disparity = float("inf")
                    in_range = False
                    # the zero side still satisfies its one-sided bound; record r=0 or inf
                else:
                    r = q / p
                    disparity = float(max(r, 1 / r))
                    in_range = lower <= r <= upper
                worst = max(worst, disparity)
                if not in_range:
                    passed = False
                    if disparity >= viol_worst:
                        viol_worst = disparity
                        viol_triple = (h, hhat, g)
    return DPReport(passed, float(worst), viol_triple, checked)


def expected_distortion(table: KernelTable, prior: MultinomialPrior):
    """Sum_h prior(h) * sum_g W(g|h) * |g - h|_1 over the table support."""
    total = Fraction(0) if table.mode == "rational" and prior.rational else 0.0
    for h, row in table.rows.items():
        mass = prior.mass(h)
        row_term = sum(p * l1_distance(g, h) for g, p in row.items())
        total += mass * row_term
    return total


def expected_distortion_heavy(table: KernelTable, prior: MultinomialPrior, cutoff):
    """Distortion restricted to rows with prior mass >= cutoff, plus a tail bound.

    The neglected rows contribute at most 2n times their total prior mass.
    """
    total = Fraction(0) if table.mode == "rational" and prior.rational else 0.0
    neglected = total
    for h, row in table.rows.items():
        mass = prior.mass(h)
        if mass >= cutoff:
            total += mass * sum(p * l1_distance(g, h) for g, p in row.items())
        else:
            neglected += mass
    return total, 2 * table.n * neglected


def geometric_distortion_closed(k: int, theta):
    """Expected L1 distortion of the untruncated geometric stage: 2*theta*E'/E."""
    return dstar_limit(k, theta, "s-form")


def geometric_distortion_series(k: int, theta, tol: float = 1e-12) -> float:
    """Series evaluation sum_d 2d*N_d*theta^d / E, for cross-checking the closed form."""
    se = e_pf(k, theta, "series", tol=tol)
    return 2 * theta * se.derivative / se.value


def sample_distance(k: int, theta, rng) -> int:
    """Draw d with probability N_d*theta^d / E(theta)."""
    e_val = float(e_pf(k, float(theta), "closed").value)
    target = rng.random() * e_val
    acc = 1.0
    d = 0
    theta = float(theta)
    power = 1.0
    while acc < target:
        d += 1
        power *= theta
        acc += face_count_closed(k, d) * power
        if d > 1_000_000:
            raise RuntimeError("distance sampler failed to terminate")
    return d


def sample_sanitized(h: Histogram, n: int, k: int, theta, prior: MultinomialPrior,
                     trunc: TruncationSpec, rng) -> Histogram:
    """One draw of the cascade: geometric displacement, then collapse-to-center."""
    if h.n != n or h.k != k:
        raise ValueError("input histogram must live in H^n_K")
    d = sample_distance(k, theta, rng)
    if d == 0:
        return h
    z = sample_face_point(k, d, rng)
    g = ExtendedHistogram([a + b for a, b in zip(h.counts, z)])
    if any(c < 0 for c in g.counts):
        return trunc.center
    return truncation_map(Histogram(g.counts), trunc)

"""Histogram space H^n_K: count vectors, distances, neighbors, and the multinomial prior.

Everything downstream (point counting, mechanisms, LPs, certificates) works on the
types defined here.  Histograms are immutable value objects; all operations are pure.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Iterator, Sequence

__all__ = [
    "CapacityError",
    "IngestionError",
    "Histogram",
    "ExtendedHistogram",
    "Schema",
    "MultinomialPrior",
    "enumeration_cap",
    "count_histograms",
    "enumerate_histograms",
    "l1_distance",
    "graph_distance",
    "neighbors",
    "classify_neighbors",
    "prior_mass",
    "histogram_of_records",
    "read_records_csv",
]

DEFAULT_ENUMERATION_CAP = 5_000_000
SPARSE_K_THRESHOLD = 1024
CAP_ENV_VAR = "DP_EHRHART_CAP"


class CapacityError(Exception):
    """A requested enumeration would exceed the configured size cap."""


class IngestionError(ValueError):
    """A record does not conform to the schema."""


def enumeration_cap(override: int | None = None) -> int:
    """Effective enumeration cap: explicit override, else env var, else default."""
    if override is not None:
        return int(override)
    env = os.environ.get(CAP_ENV_VAR)
    if env:
        return int(env)
    return DEFAULT_ENUMERATION_CAP


class Histogram:
    """Non-negative integer count vector of length k summing to n.

    Dense tuple storage for k below SPARSE_K_THRESHOLD, sorted (index, count)
    cells above it.  Hashable and ordered lexicographically by the full vector.
    """

    __slots__ = ("k", "n", "_dense", "_cells")

    def __init__(self, counts: Sequence[int] | None = None, *, k: int | None = None,
                 cells: Iterable[tuple[int, int]] | None = None):
        if counts is not None:
            counts = tuple(int(c) for c in counts)
            if any(c < 0 for c in counts):
                raise ValueError("counts must be non-negative")
            self.k = len(counts)
            self.n = sum(counts)
            if self.k <= SPARSE_K_THRESHOLD:
                self._dense = counts
                self._cells = None
            else:
                self._dense = None
                self._cells = tuple((i, c) for i, c in enumerate(counts) if c)
        else:
            if k is None or cells is None:
                raise ValueError("need counts, or k and cells")
            cells = sorted((int(i), int(c)) for i, c in cells if c)
            if any(c < 0 for _, c in cells):
                raise ValueError("counts must be non-negative")
            if cells and not (0 <= cells[0][0] and cells[-1][0] < k):
                raise ValueError("cell index out of range")
            if len({i for i, _ in cells}) != len(cells):
                raise ValueError("duplicate cell index")
            self.k = int(k)
            self.n = sum(c for _, c in cells)
            if self.k <= SPARSE_K_THRESHOLD:
                dense = [0] * self.k
                for i, c in cells:
                    dense[i] = c
                self._dense = tuple(dense)
                self._cells = None
            else:
                self._dense = None
                self._cells = tuple(cells)

    @property
    def counts(self) -> tuple[int, ...]:
        if self._dense is None:
            dense = [0] * self.k
            for i, c in self._cells:
                dense[i] = c
            return tuple(dense)
        return self._dense

    def cells(self) -> tuple[tuple[int, int], ...]:
        """Nonzero (index, count) pairs in index order."""
        if self._dense is not None:
            return tuple((i, c) for i, c in enumerate(self._dense) if c)
        return self._cells

    def __getitem__(self, i: int) -> int:
        if self._dense is not None:
            return self._dense[i]
        if not 0 <= i < self.k:
            raise IndexError(i)
        for j, c in self._cells:
            if j == i:
                return c
        return 0

    def __len__(self) -> int:
        return self.k

    def __iter__(self) -> Iterator[int]:
        return iter(self.counts)

    def _key(self):
        return (self.k, self._dense if self._dense is not None else self._cells)

    def __eq__(self, other) -> bool:
        return isinstance(other, Histogram) and self._key() == other._key()

    def __hash__(self) -> int:
        return hash(self._key())

    def __lt__(self, other: "Histogram") -> bool:
        if not isinstance(other, Histogram) or self.k != other.k:
            raise TypeError("histograms of unequal dimension are unordered")
        if self._dense is not None and other._dense is not None:
            return self._dense < other._dense
        return self._sparse_lex_lt(other)

    def _sparse_lex_lt(self, other: "Histogram") -> bool:
        a, b = dict(self.cells()), dict(other.cells())
        for i in sorted(set(a) | set(b)):
            ca, cb = a.get(i, 0), b.get(i, 0)
            if ca != cb:
                return ca < cb
        return False

    def __repr__(self) -> str:
        if self._dense is not None:
            return f"Histogram({list(self._dense)})"
        return f"Histogram(k={self.k}, cells={list(self._cells)})"

    def to_json_dict(self) -> dict:
        if self._dense is not None:
            return {"n": self.n, "k": self.k, "counts": list(self._dense)}
        return {"n": self.n, "k": self.k, "cells": [[i, c] for i, c in self._cells]}

    @classmethod
    def from_json_dict(cls, d: dict) -> "Histogram":
        if "counts" in d:
            h = cls(d["counts"])
        else:
            h = cls(k=d["k"], cells=[(i, c) for i, c in d["cells"]])
        if "n" in d and h.n != d["n"]:
            raise ValueError(f"declared n={d['n']} but counts sum to {h.n}")
        if "k" in d and h.k != d["k"]:
            raise ValueError(f"declared k={d['k']} but got {h.k} counts")
        return h


class ExtendedHistogram:
    """Integer count vector summing to n, negatives allowed (the sum-n affine lattice)."""

    __slots__ = ("k", "n", "counts")

    def __init__(self, counts: Sequence[int]):
        self.counts = tuple(int(c) for c in counts)
        self.k = len(self.counts)
        self.n = sum(self.counts)

    def __getitem__(self, i: int) -> int:
        return self.counts[i]

    def __len__(self) -> int:
        return self.k

    def __iter__(self) -> Iterator[int]:
        return iter(self.counts)

    def cells(self) -> tuple[tuple[int, int], ...]:
        return tuple((i, c) for i, c in enumerate(self.counts) if c)

    def __eq__(self, other) -> bool:
        return isinstance(other, ExtendedHistogram) and self.counts == other.counts

    def __hash__(self) -> int:
        return hash(("ext", self.counts))

    def __repr__(self) -> str:
        return f"ExtendedHistogram({list(self.counts)})"


@dataclass(frozen=True)
class Schema:
    """Ordered attributes with finite value domains; cells are the product space."""

    attributes: tuple[tuple[str, tuple[str, ...]], ...]

    def __post_init__(self):
        if not self.attributes or any(not values for _, values in self.attributes):
            raise ValueError("every attribute needs a non-empty domain")

    @property
    def k(self) -> int:
        k = 1
        for _, values in self.attributes:
            k *= len(values)
        return k

    def cell_index(self, record: Sequence[str]) -> int:
        """Mixed-radix index of a record, last attribute varying fastest."""
        if len(record) != len(self.attributes):
            raise IngestionError(
                f"record has {len(record)} fields, schema has {len(self.attributes)}")
        idx = 0
        for (name, values), value in zip(self.attributes, record):
            try:
                pos = values.index(value)
            except ValueError:
                raise IngestionError(f"unknown value {value!r} for attribute {name!r}") from None
            idx = idx * len(values) + pos
        return idx

    def cell_record(self, index: int) -> tuple[str, ...]:
        if not 0 <= index < self.k:
            raise IndexError(index)
        out = []
        for _, values in reversed(self.attributes):
            index, pos = divmod(index, len(values))
            out.append(values[pos])
        return tuple(reversed(out))

    def to_json_dict(self) -> dict:
        return {"attributes": [{"name": n, "values": list(v)} for n, v in self.attributes]}

    @classmethod
    def from_json_dict(cls, d: dict) -> "Schema":
        return cls(tuple((a["name"], tuple(a["values"])) for a in d["attributes"]))

    @classmethod
    def load(cls, path: str) -> "Schema":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json_dict(json.load(fh))


@dataclass(frozen=True)
class MultinomialPrior:
    """Multinomial(n, p) over H^n_K; p entries strictly positive Fractions or floats."""

    n: int
    p: tuple

    def __post_init__(self):
        if any(not pk > 0 for pk in self.p):
            raise ValueError("every prior probability must be strictly positive")
        total = sum(self.p)
        if isinstance(total, Fraction):
            if total != 1:
                raise ValueError(f"prior probabilities sum to {total}, not 1")
        elif abs(total - 1.0) > 1e-9:
            raise ValueError(f"prior probabilities sum to {total}, not 1")

    @property
    def k(self) -> int:
        return len(self.p)

    @property
    def rational(self) -> bool:
        return all(isinstance(pk, Fraction) for pk in self.p)

    @classmethod
    def binary(cls, n: int, p1, exact: bool = False) -> "MultinomialPrior":
        """Two-cell prior (p1, 1−p1); exact=True converts via Fraction(str(p1))."""
        if exact and not isinstance(p1, Fraction):
            p1 = Fraction(str(p1))
        return cls(n, (p1, 1 - p1))

    def mass(self, h: Histogram):
        if h.k != self.k:
            raise ValueError(f"histogram has k={h.k}, prior has k={self.k}")
        if h.n != self.n:
            raise ValueError(f"histogram has n={h.n}, prior has n={self.n}")
        coeff = math.factorial(self.n)
        for _, c in h.cells():
            coeff //= math.factorial(c)
        out = coeff if self.rational else float(coeff)
        for i, c in h.cells():
            out *= self.p[i] ** c
        return out


def count_histograms(n: int, k: int) -> int:
    """|H^n_K| = C(n+k−1, k−1)."""
    return math.comb(n + k - 1, k - 1)


def enumerate_histograms(n: int, k: int, cap: int | None = None) -> Iterator[Histogram]:
    """Yield all of H^n_K in lexicographic order of the count vector."""
    if n < 0 or k < 1:
        raise ValueError("need n >= 0 and k >= 1")
    total = count_histograms(n, k)
    limit = enumeration_cap(cap)
    if total > limit:
        raise CapacityError(f"|H^{n}_{k}| = {total} exceeds cap {limit}")

    def rec(prefix: list[int], remaining: int, slots: int) -> Iterator[Histogram]:
        if slots == 1:
            yield Histogram(prefix + [remaining])
            return
        for c in range(remaining + 1):
            yield from rec(prefix + [c], remaining - c, slots - 1)

    return rec([], n, k)


def l1_distance(a, b) -> int:
    """Σ|a_i − b_i|; even whenever a and b share the same total."""
    if a.k != b.k:
        raise ValueError(f"dimension mismatch: {a.k} vs {b.k}")
    sparse_a = isinstance(a, Histogram) and a._dense is None
    sparse_b = isinstance(b, Histogram) and b._dense is None
    if sparse_a or sparse_b:
        ca, cb = dict(a.cells()), dict(b.cells())
        return sum(abs(ca.get(i, 0) - cb.get(i, 0)) for i in set(ca) | set(cb))
    return sum(abs(x - y) for x, y in zip(a, b))


def graph_distance(a: Histogram, b: Histogram) -> int:
    """Shortest-path length in the privacy-constraint graph; equals l1_distance/2."""
    return l1_distance(a, b) // 2


def neighbors(h: Histogram) -> list[Histogram]:
    """All histograms at L1 distance exactly 2: move one unit between two cells."""
    out = []
    counts = h.counts
    for i, c in enumerate(counts):
        if c == 0:
            continue
        for j in range(h.k):
            if j == i:
                continue
            moved = list(counts)
            moved[i] -= 1
            moved[j] += 1
            out.append(Histogram(moved))
    return out


def classify_neighbors(reference: Histogram, center: Histogram):
    """Partition neighbors(center) by L1 distance to reference vs |reference−center|₁.

    Returns (farther, closer, equidistant) lists.
    """
    base = l1_distance(reference, center)
    farther, closer, equi = [], [], []
    for g in neighbors(center):
        d = l1_distance(reference, g)
        if d > base:
            farther.append(g)
        elif d < base:
            closer.append(g)
        else:
            equi.append(g)
    return farther, closer, equi


def prior_mass(prior: MultinomialPrior, h: Histogram):
    return prior.mass(h)


def histogram_of_records(records: Iterable[Sequence[str]], schema: Schema) -> Histogram:
    tally: dict[int, int] = {}
    for row_no, record in enumerate(records, start=1):
        try:
            idx = schema.cell_index(record)
        except IngestionError as exc:
            raise IngestionError(f"row {row_no}: {exc}") from None
        tally[idx] = tally.get(idx, 0) + 1
    return Histogram(k=schema.k, cells=tally.items())


def read_records_csv(path: str, schema: Schema) -> list[tuple[str, ...]]:
    """Read a record CSV whose header must match the schema's attribute names."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError("empty records file") from None
        expected = [name for name, _ in schema.attributes]
        if header != expected:
            raise IngestionError(f"header {header} does not match schema attributes {expected}")
        return [tuple(row) for row in reader]

"""Compositions of an integer into nonnegative parts and their multinomial coefficients.

Every closed-form sum in this package runs over the compositions beta of
some order K into J parts (one slot per agent).  This module enumerates
them once, in a fixed deterministic order, and evaluates the attached
multinomial coefficients K! / (beta_1! ... beta_J!) in log space so large
orders cannot overflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

DEFAULT_COMPOSITION_CAP = 10_000_000


class CompositionCapExceeded(Exception):
    """Enumerating the compositions would materialize more entries than allowed."""

    def __init__(self, j: int, k: int, count: int, cap: int):
        self.j = j
        self.k = k
        self.count = count
        self.cap = cap
        super().__init__(
            f"C({k}+{j}-1, {j}-1) = {count} compositions exceeds the cap {cap}; "
            "reduce the risk-aversion order or the number of agents"
        )


@dataclass(frozen=True)
class MultiIndex:
    """A composition: nonnegative integer parts summing to `order`."""

    parts: tuple[int, ...]
    order: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(int(p) for p in self.parts))
        if len(self.parts) < 1:
            raise ValueError("parts must be nonempty")
        if any(p < 0 for p in self.parts):
            raise ValueError(f"parts must be nonnegative, got {self.parts}")
        object.__setattr__(self, "order", sum(self.parts))

    def dot(self, values: Sequence[float]) -> float:
        """Weighted sum sum_i parts[i] * values[i] (e.g. rho.beta, alpha.beta)."""
        if len(values) != len(self.parts):
            raise ValueError("values length must match number of parts")
        return sum(b * v for b, v in zip(self.parts, values))

    def plus_unit(self, j: int) -> "MultiIndex":
        """The composition with one more count in slot j (order goes up by one)."""
        parts = list(self.parts)
        parts[j] += 1
        return MultiIndex(tuple(parts))


def composition_count(j: int, k: int) -> int:
    """Number of compositions of k into j nonnegative parts: C(k+j-1, j-1)."""
    return math.comb(k + j - 1, j - 1)


def enumerate_compositions(
    j: int, k: int, cap: int = DEFAULT_COMPOSITION_CAP
) -> list[MultiIndex]:
    """All compositions of k into j nonnegative parts, lexicographically descending.

    The order is fixed so that any downstream output built from the list is
    reproducible byte for byte.
    """
    if j < 1:
        raise ValueError(f"need at least one part, got j={j}")
    if k < 0:
        raise ValueError(f"order must be nonnegative, got k={k}")
    count = composition_count(j, k)
    if count > cap:
        raise CompositionCapExceeded(j, k, count, cap)

    out: list[MultiIndex] = []
    parts = [0] * j

    def fill(slot: int, remaining: int):
        if slot == j - 1:
            parts[slot] = remaining
            out.append(MultiIndex(tuple(parts)))
            return
        for v in range(remaining, -1, -1):
            parts[slot] = v
            fill(slot + 1, remaining - v)

    fill(0, k)
    return out


def log_multinomial_coefficient(beta: MultiIndex) -> float:
    """log( order! / prod_i parts[i]! ), via log-gamma so large orders stay finite."""
    return math.lgamma(beta.order + 1) - sum(math.lgamma(b + 1) for b in beta.parts)


def multinomial_coefficient(beta: MultiIndex) -> int:
    """Exact integer multinomial coefficient; cross-check for the log variant."""
    num = math.factorial(beta.order)
    for b in beta.parts:
        num //= math.factorial(b)
    return num

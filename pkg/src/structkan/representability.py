"""Counting arguments for fixed nested-function topologies.

Two tests decide whether a fixed network can represent a smoothness class:

* the ratio test ``k'/n' > k/n`` (node smoothness per input dimension
  exceeding that of the target class rules out representing all targets),
* the derivative-counting test: at derivative order ``p`` a network with
  ``m`` univariate nodes has at most ``(p+1)m + m(n+m)`` free local
  parameters, while the number of order-``p`` partial derivatives of an
  ``n``-variate function grows like ``p**(n-1)``.  The quantity compared
  against the parameter bound is ``ceil(C(n,2) p^2 / 2)``.

All arithmetic is on Python integers / :class:`fractions.Fraction`; results
larger than :data:`MAX_RESULT` raise :class:`OverflowError` so that callers
porting the values into fixed-width storage never wrap silently.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Union

INFINITE = math.inf
"""Smoothness order of analytic targets."""

MAX_RESULT = 2**63 - 1
SCAN_LIMIT = 10**7

Order = Union[int, float]


@dataclass(frozen=True)
class SmoothnessSpec:
    k: Order
    n: int
    k_prime: Order
    n_prime: int

    def __post_init__(self):
        for name in ("n", "n_prime"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        for name in ("k", "k_prime"):
            v = getattr(self, name)
            if v == INFINITE:
                continue
            if isinstance(v, bool) or not isinstance(v, int) or v < 0:
                raise ValueError(f"{name} must be a non-negative integer or INFINITE, got {v!r}")


@dataclass(frozen=True)
class CountingReport:
    """One derivative order of the counting test.

    ``paper_lower_bound`` is stored rounded up to an integer; because the
    comparison is a strict ``>`` against an integer, rounding up does not
    change the verdict.
    """
    p: int
    m: int
    n: int
    n_p_bound: int
    deriv_dim_exact: int
    paper_lower_bound: int
    representable_all: bool

    @property
    def bound_exceeds_exact(self) -> bool:
        """The quadratic lower bound overshoots the true derivative count."""
        return self.paper_lower_bound > self.deriv_dim_exact

    def to_row(self) -> dict:
        return {
            "p": self.p,
            "N_p": self.n_p_bound,
            "deriv_dim_exact": self.deriv_dim_exact,
            "paper_bound": self.paper_lower_bound,
            "representable_all": self.representable_all,
        }


def _checked(v: int) -> int:
    if v > MAX_RESULT:
        raise OverflowError(f"result {v} exceeds 64-bit range")
    return v


def _posint(v, name: str, lo: int) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise TypeError(f"{name} must be an integer, got {v!r}")
    if v < lo:
        raise ValueError(f"{name} must be >= {lo}, got {v}")
    return v


def vitushkin_violates(spec: SmoothnessSpec) -> bool:
    """True iff ``k'/n' > k/n``, i.e. the node class cannot cover all ``C^k`` targets.

    An infinite ``k`` (analytic targets) violates whenever ``k'`` is finite and
    ``n' < n``.
    """
    k, n, kp, np_ = spec.k, spec.n, spec.k_prime, spec.n_prime
    if k == INFINITE:
        return kp != INFINITE and np_ < n
    if kp == INFINITE:
        return True
    # k'/n' > k/n  <=>  k'*n > k*n'
    return kp * n > k * np_


def param_bound(m: int, n: int, p: int) -> int:
    """Upper bound on free local parameters at derivative order ``p``."""
    _posint(m, "m", 1)
    _posint(n, "n", 1)
    _posint(p, "p", 0)
    return _checked((p + 1) * m + m * (n + m))


def deriv_dim_exact(n: int, p: int) -> int:
    """Number of distinct order-``p`` partials of an ``n``-variate function."""
    _posint(n, "n", 1)
    _posint(p, "p", 0)
    return _checked(math.comb(n + p - 1, p))


def paper_lower_bound_exact(n: int, p: int) -> Fraction:
    _posint(n, "n", 3)
    _posint(p, "p", 1)
    return Fraction(math.comb(n, 2) * p * p, 2)


def paper_lower_bound(n: int, p: int) -> int:
    """``ceil(C(n,2) * p**2 / 2)``, defined for ``n >= 3``.

    For small ``p`` this can exceed :func:`deriv_dim_exact` (e.g. 27 vs 20 at
    ``n=4, p=3``); the quantity is returned as is.
    """
    return _checked(math.ceil(paper_lower_bound_exact(n, p)))


def counting_report(m: int, n: int, p: int) -> CountingReport:
    _posint(m, "m", 1)
    _posint(n, "n", 3)
    _posint(p, "p", 1)
    nb = param_bound(m, n, p)
    lb = paper_lower_bound(n, p)
    return CountingReport(
        p=p, m=m, n=n,
        n_p_bound=nb,
        deriv_dim_exact=deriv_dim_exact(n, p),
        paper_lower_bound=lb,
        representable_all=not (lb > nb),
    )


def smoothness_limit(m: int, n: int) -> int:
    """Smallest derivative order ``p`` at which the counting test fails."""
    _posint(m, "m", 1)
    _posint(n, "n", 3)
    # C(n,2)/2 p^2 - m p - m(1+n+m) has one positive root; start just below it
    a = math.comb(n, 2) / 2
    c = m * (1 + n + m)
    root = (m + math.sqrt(m * m + 4 * a * c)) / (2 * a)
    p = max(1, int(root) - 1)
    while p > 1 and not counting_report(m, n, p - 1).representable_all:
        p -= 1
    steps = 0
    while counting_report(m, n, p).representable_all:
        p += 1
        steps += 1
        if steps > SCAN_LIMIT:
            raise RuntimeError(f"no smoothness limit found within {SCAN_LIMIT} steps")
    return p


def counting_series(m: int, n: int, max_p: int) -> list[CountingReport]:
    _posint(max_p, "max_p", 1)
    return [counting_report(m, n, p) for p in range(1, max_p + 1)]

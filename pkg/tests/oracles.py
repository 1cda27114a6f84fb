"""Independent brute-force references for the counting arithmetic."""
from fractions import Fraction
from functools import lru_cache
import itertools

INF = float("inf")


def ratio_violates(k, n, kp, n_prime):
    if k == INF:
        return kp != INF and n_prime < n
    if kp == INF:
        return True
    return Fraction(kp, n_prime) > Fraction(k, n)


def count_params(m, n, p):
    total = 0
    for _ in range(m):
        total += p + 1  # derivatives 0..p of the node function
        total += n + m  # coupling weights into the node
    return total


@lru_cache(maxsize=None)
def multisets(n, p):
    """Pascal-style recurrence for order-p partials of an n-variate function."""
    if p == 0:
        return 1
    if n == 0:
        return 0
    return multisets(n - 1, p) + multisets(n, p - 1)


def multisets_enumerated(n, p):
    return sum(1 for _ in itertools.combinations_with_replacement(range(n), p))


def quadratic_bound(n, p):
    pairs = sum(1 for _ in itertools.combinations(range(n), 2))
    num = pairs * p * p
    return num // 2 + (num % 2)


def first_failure(m, n):
    p = 1
    while quadratic_bound(n, p) <= count_params(m, n, p):
        p += 1
    return p


def gradient_check(topology, rng, n_samples=32, h=1e-5, floor=1e-2):
    """Max relative error of reverse-mode gradients against central differences.

    Loss is ``sum(c * output)`` for a fixed random ``c``.  Relative error uses
    ``max(|analytic|, |numeric|, floor)`` in the denominator so that exactly
    zero gradients are compared absolutely.
    """
    import numpy as np
    from structkan import training as T
    from structkan.nodefuncs import SplineNode

    params = T.init_smooth_params(topology, int(rng.integers(2**31)))
    for nid, p in params.items():
        if isinstance(p, SplineNode):
            p.coefficients = rng.standard_normal(p.n_params)
    X = rng.uniform(-1.5, 1.5, (n_samples, topology.input_dim))
    c = rng.standard_normal(n_samples)
    grads = T.flatten(T.backward(topology, params, X, c))
    theta = T.flatten(params)

    def loss(vec):
        return float(c @ T.predict(topology, T.unflatten(params, vec), X))

    worst = 0.0
    for j in range(theta.size):
        up = theta.copy()
        up[j] += h
        dn = theta.copy()
        dn[j] -= h
        fd = (loss(up) - loss(dn)) / (2 * h)
        err = abs(grads[j] - fd) / max(abs(grads[j]), abs(fd), floor)
        worst = max(worst, err)
    return worst, theta.size

"""Exact brute-force ground truth on small towers by cylinder enumeration.

Every Monte Carlo estimator in this package has a counterpart here that
integrates over a complete, disjoint, mass-one decomposition of the
invariant measure into (past prefix, future prefix, level) cells.
Evaluation goes through the pointwise observable contract and the
pointwise tower stepping — deliberately not through the batched engine,
so the two routes stay independent.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass

from .errors import DepthInsufficient, EnumerationTooLarge, ParameterOutOfRange
from .sampler import Observable
from .tower import TowerPoint, TowerSchema, step

ENUMERATION_BUDGET = 10 ** 7


@dataclass(frozen=True)
class CylinderWeight:
    """One cell of the finite resolution of the invariant measure.

    weight = (product of branch probabilities over all listed symbols)
    divided by the mean return time; summed over a complete enumeration
    the weights give exactly one.
    """

    past: tuple[int, ...]
    future: tuple[int, ...]
    level: int
    weight: float


def _budget_guard(schema: TowerSchema, future_depth: int, past_depth: int):
    cells = schema.n_branches ** (future_depth + past_depth) * schema.mean_return
    if cells > ENUMERATION_BUDGET:
        raise EnumerationTooLarge(
            f"~{cells:.3g} cylinders exceed the budget {ENUMERATION_BUDGET:g}")


def enumerate_cylinders(schema: TowerSchema, future_depth: int,
                        past_depth: int) -> list[CylinderWeight]:
    """Complete enumeration of (past, future, level) cells of given depths."""
    if future_depth < 1:
        raise ParameterOutOfRange("future_depth must be >= 1")
    if past_depth < 0:
        raise ParameterOutOfRange("past_depth must be >= 0")
    _budget_guard(schema, future_depth, past_depth)
    symbols = range(schema.n_branches)
    out = []
    inv_mean = 1.0 / schema.mean_return
    for past in itertools.product(symbols, repeat=past_depth):
        w_past = math.prod(schema.probs[b] for b in past)
        for future in itertools.product(symbols, repeat=future_depth):
            w = w_past * math.prod(schema.probs[b] for b in future) * inv_mean
            for level in range(schema.return_time(future[0])):
                out.append(CylinderWeight(past, future, level, w))
    return out


def total_mass(cylinders) -> float:
    return math.fsum(c.weight for c in cylinders)


def push_forward_mass(schema: TowerSchema, cylinders, k: int) -> dict:
    """Aggregate cylinder mass by (branch, level) after k tower steps."""
    agg: dict = {}
    for cyl in cylinders:
        pt = TowerPoint(cyl.past, cyl.future, cyl.level)
        for _ in range(k):
            step(schema, pt)
        key = (pt.future_symbol(0), pt.level)
        agg[key] = agg.get(key, 0.0) + cyl.weight
    return agg


def _obs_depths(observable: Observable):
    k = observable.kernel
    if k is None:
        raise DepthInsufficient(
            "the oracle needs a canonical observable with a declared window")
    return max(len(k.future_coefs), 1), len(k.past_coefs)


def _auto_cylinders(schema, observable, steps, future_depth, past_depth):
    D1, Kp = _obs_depths(observable)
    need_f = steps + D1 + 1
    need_p = Kp
    if future_depth is None:
        future_depth = need_f
    if past_depth is None:
        past_depth = need_p
    if future_depth < need_f or past_depth < need_p:
        raise DepthInsufficient(
            f"need future_depth >= {need_f} and past_depth >= {need_p}")
    return enumerate_cylinders(schema, future_depth, past_depth)


def _trace(schema, observable, cyl: CylinderWeight, length: int):
    pt = TowerPoint(cyl.past, cyl.future, cyl.level)
    vals = []
    for _ in range(length):
        vals.append(observable.evaluator(pt))
        step(schema, pt)
    return vals


def exact_ld(schema: TowerSchema, observable: Observable, epsilon: float,
             n: int, future_depth=None, past_depth=None) -> float:
    """Exact mass of the set where the time-n average exceeds epsilon."""
    if epsilon <= 0:
        raise ParameterOutOfRange("epsilon must be > 0")
    cylinders = _auto_cylinders(schema, observable, n, future_depth, past_depth)
    hit = []
    for cyl in cylinders:
        s = math.fsum(_trace(schema, observable, cyl, n))
        if abs(s) / n > epsilon:
            hit.append(cyl.weight)
    return math.fsum(hit)


def exact_mld(schema: TowerSchema, observable: Observable, epsilon: float,
              n: int, horizon: int, future_depth=None, past_depth=None) -> float:
    """Exact mass of the set where some average at time n..horizon exceeds epsilon."""
    if epsilon <= 0:
        raise ParameterOutOfRange("epsilon must be > 0")
    if horizon < n:
        raise ParameterOutOfRange(f"horizon {horizon} < n {n}")
    cylinders = _auto_cylinders(schema, observable, horizon, future_depth, past_depth)
    hit = []
    for cyl in cylinders:
        vals = _trace(schema, observable, cyl, horizon)
        s = 0.0
        worst = 0.0
        for k, v in enumerate(vals, start=1):
            s += v
            if k >= n:
                worst = max(worst, abs(s) / k)
        if worst > epsilon:
            hit.append(cyl.weight)
    return math.fsum(hit)


def exact_correlation(schema: TowerSchema, phi: Observable, psi: Observable,
                      n: int, future_depth=None, past_depth=None) -> float:
    """Exact |cov(phi, psi o f^n)| on the enumerated resolution."""
    D1p, Kpp = _obs_depths(psi)
    D1, Kp = _obs_depths(phi)
    need_f = n + max(D1, D1p) + 1
    need_p = max(Kp, Kpp)
    if future_depth is None:
        future_depth = need_f
    if past_depth is None:
        past_depth = need_p
    if future_depth < need_f or past_depth < need_p:
        raise DepthInsufficient(
            f"need future_depth >= {need_f} and past_depth >= {need_p}")
    cylinders = enumerate_cylinders(schema, future_depth, past_depth)
    t_prod, t_phi, t_psi = [], [], []
    for cyl in cylinders:
        pt = TowerPoint(cyl.past, cyl.future, cyl.level)
        v_phi = phi.evaluator(pt)
        for _ in range(n):
            step(schema, pt)
        v_psi = psi.evaluator(pt)
        t_prod.append(cyl.weight * v_phi * v_psi)
        t_phi.append(cyl.weight * v_phi)
        t_psi.append(cyl.weight * v_psi)
    return abs(math.fsum(t_prod) - math.fsum(t_phi) * math.fsum(t_psi))


# ---------------------------------------------------------------------------
# exact conditional expectations and the norm/correlation identity

def _backward_point(schema, past, fut, level, n):
    """The n-step backward image of (past, fut, level), on explicit tuples."""
    q = 0
    lvl = level
    back = n - level
    if back <= 0:
        return past[q:], fut, level - n
    consumed = 0
    while consumed < back:
        if q >= len(past):
            raise DepthInsufficient("backward stepping ran out of past symbols")
        consumed += schema.return_time(past[q])
        q += 1
    lvl = level + consumed - n
    new_future = tuple(reversed(past[:q])) + tuple(fut)
    return past[q:], new_future, lvl


def exact_cond_exp(schema: TowerSchema, observable: Observable, n: int):
    """The conditional expectation of phi o f^-n given (future, level),
    as an exact function computed by enumerating pasts.

    Returns (function fut_tuple, level -> value, window depth D1).
    """
    D1, Kp = _obs_depths(observable)
    pd = n + Kp
    _budget_guard(schema, D1, pd)
    symbols = range(schema.n_branches)
    pasts = [(p, math.prod(schema.probs[b] for b in p))
             for p in itertools.product(symbols, repeat=pd)]
    cache: dict = {}

    def cond(fut: tuple, level: int) -> float:
        key = (tuple(fut[:D1]), level)
        if key not in cache:
            terms = []
            for past, w in pasts:
                p2, f2, l2 = _backward_point(schema, past, key[0], level, n)
                pt = TowerPoint(p2, f2, l2)
                terms.append(w * observable.evaluator(pt))
            cache[key] = math.fsum(terms)
        return cache[key]

    return cond, D1


def exact_duality(schema: TowerSchema, observable: Observable, n: int,
                  p: float) -> tuple[float, float]:
    """Exact lhs = ||E(phi o f^-n | F_0)||_p^p and rhs = int phi (psi o f^n).

    psi = |E|^(p-1) sign(E) is built from the same exact conditional
    expectation; the two sides agree to roundoff because the identity is
    measure-theoretic, not asymptotic.
    """
    if p < 1:
        raise ParameterOutOfRange(f"p {p} must be >= 1")
    cond, D1 = exact_cond_exp(schema, observable, n)
    _, Kp = _obs_depths(observable)

    lhs_cells = enumerate_cylinders(schema, D1, 0)
    lhs = math.fsum(c.weight * abs(cond(c.future, c.level)) ** p for c in lhs_cells)

    rhs_cells = enumerate_cylinders(schema, n + D1 + 1, Kp)
    terms = []
    for cyl in rhs_cells:
        pt = TowerPoint(cyl.past, cyl.future, cyl.level)
        v_phi = observable.evaluator(pt)
        for _ in range(n):
            step(schema, pt)
        fut_n = tuple(pt.future_symbol(k) for k in range(D1))
        e = cond(fut_n, pt.level)
        psi = abs(e) ** (p - 1) * math.copysign(1.0, e) if e != 0.0 else 0.0
        terms.append(cyl.weight * v_phi * psi)
    rhs = math.fsum(terms)
    return lhs, rhs


def exact_cond_exp_norm(schema: TowerSchema, observable: Observable,
                        n: int, p: float) -> float:
    """Exact ||E(phi o f^-n | F_0)||_p via enumeration."""
    cond, D1 = exact_cond_exp(schema, observable, n)
    cells = enumerate_cylinders(schema, D1, 0)
    return math.fsum(c.weight * abs(cond(c.future, c.level)) ** p
                     for c in cells) ** (1.0 / p)


def dump_fixtures(path, entries) -> None:
    """Write a JSON list of (inputs, exact value) fixture records."""
    with open(path, "w") as fh:
        json.dump([{"inputs": inp, "value": val} for inp, val in entries],
                  fh, indent=2, sort_keys=True)

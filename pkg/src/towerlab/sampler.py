"""Tower builders with prescribed return-time tails and canonical observables.

The tail-to-branch mapping takes exactly one branch per return-time value
1..r_max, the minimal alphabet realizing a prescribed tail, renormalized
after truncation.  The discarded mass is recorded on the schema so result
envelopes can bound truncation bias.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import zeta

from .errors import ParameterOutOfRange
from .tower import (
    DEFAULT_PAST_DEPTH,
    TowerPoint,
    TowerSchema,
    make_tower_schema,
    sample_mu_delta,
)

__all__ = [
    "TailSpec", "Observable", "TowerKernel", "polynomial_tail_schema",
    "stretched_tail_schema", "schema_from_tailspec", "exact_tail",
    "canonical_observable", "sample_mu_delta", "DEFAULT_OBS_DEPTH",
]

DEFAULT_OBS_DEPTH = 16


@dataclass(frozen=True)
class TailSpec:
    """Return-time tail family: polynomial(beta) or stretched(tau, omega)."""

    kind: str
    r_max: int
    beta: float | None = None
    tau: float | None = None
    omega: float | None = None

    def __post_init__(self):
        if self.r_max < 2:
            raise ParameterOutOfRange(f"r_max {self.r_max} < 2")
        if self.kind == "polynomial":
            if self.beta is None or self.beta <= 0:
                raise ParameterOutOfRange(f"polynomial tail needs beta > 0, got {self.beta}")
        elif self.kind == "stretched":
            if self.tau is None or self.tau <= 0:
                raise ParameterOutOfRange(f"stretched tail needs tau > 0, got {self.tau}")
            if self.omega is None or not (0.0 < self.omega <= 1.0):
                raise ParameterOutOfRange(f"stretched tail needs omega in (0, 1], got {self.omega}")
        else:
            raise ParameterOutOfRange(f"unknown tail kind {self.kind!r}")

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "r_max": self.r_max}
        if self.kind == "polynomial":
            d["beta"] = self.beta
        else:
            d["tau"] = self.tau
            d["omega"] = self.omega
        return d


def polynomial_tail_schema(beta, r_max, theta=0.5, gamma=0.5,
                           past_depth=DEFAULT_PAST_DEPTH) -> TowerSchema:
    """One branch per return time n with weight n^-(beta+2).

    The resulting base tail mu(R > n) decays like n^-(beta+1).  The mass
    discarded by truncating at r_max (relative to the untruncated series)
    is reported in schema.tail_info["truncated_mass"].
    """
    spec = TailSpec("polynomial", int(r_max), beta=float(beta))
    n = np.arange(1, spec.r_max + 1, dtype=float)
    raw = n ** (-(beta + 2.0))
    probs = raw / math.fsum(raw)
    truncated = float(zeta(beta + 2.0, spec.r_max + 1) / zeta(beta + 2.0, 1))
    info = spec.to_dict()
    info["truncated_mass"] = truncated
    return make_tower_schema(
        [(float(p), k + 1) for k, p in enumerate(probs)],
        theta, gamma, past_depth, tail_info=info)


def stretched_tail_schema(tau, omega, r_max, theta=0.5, gamma=0.5,
                          past_depth=DEFAULT_PAST_DEPTH) -> TowerSchema:
    """One branch per return time n with weight exp(-tau n^omega) - exp(-tau (n+1)^omega).

    The weights telescope, so the truncated base tail is
    mu(R > n) = (e^{-tau (n+1)^omega} - e^{-tau (r_max+1)^omega}) / Z.
    """
    spec = TailSpec("stretched", int(r_max), tau=float(tau), omega=float(omega))
    n = np.arange(1, spec.r_max + 2, dtype=float)
    surv = np.exp(-tau * n ** omega)           # surv[k] = exp(-tau (k+1)^omega)
    raw = surv[:-1] - surv[1:]
    probs = raw / math.fsum(raw)
    truncated = float(surv[-1] / surv[0])
    info = spec.to_dict()
    info["truncated_mass"] = truncated
    return make_tower_schema(
        [(float(p), k + 1) for k, p in enumerate(probs)],
        theta, gamma, past_depth, tail_info=info)


def schema_from_tailspec(spec: TailSpec, theta=0.5, gamma=0.5,
                         past_depth=DEFAULT_PAST_DEPTH) -> TowerSchema:
    if spec.kind == "polynomial":
        return polynomial_tail_schema(spec.beta, spec.r_max, theta, gamma, past_depth)
    return stretched_tail_schema(spec.tau, spec.omega, spec.r_max, theta, gamma, past_depth)


def exact_tail(schema: TowerSchema, n: int) -> float:
    """Truncated tail mu(R > n) of the branch law, by direct summation."""
    mask = schema.returns > n
    return float(math.fsum(schema.probs[mask]))


@dataclass(frozen=True)
class TowerKernel:
    """Finite-window representation of a canonical tower observable.

    value(x) = sum_k future_coefs[k] * a[future[k]]
             + sum_k past_coefs[k-1] * a[past[k]]
             + level_weight * 1{level == 0} + const
    where a maps branch indices to bounded reals.  ``fut_ratio`` and
    ``past_ratio`` record geometric coefficient decay when present; the
    batched engine exploits them.
    """

    future_coefs: np.ndarray
    past_coefs: np.ndarray
    level_weight: float
    symbol_values: np.ndarray
    const: float
    fut_ratio: float | None = None
    past_ratio: float | None = None

    @property
    def future_depth(self) -> int:
        return len(self.future_coefs) - 1 if len(self.future_coefs) else -1

    @property
    def past_depth(self) -> int:
        return len(self.past_coefs)


@dataclass
class Observable:
    """Evaluator on system states with declared regularity and bounds.

    The evaluator returns centered values; ``declared_mean`` records the
    constant that was subtracted (the exact mean of the raw formula under
    the invariant measure).  ``sup_norm_bound`` bounds the centered values.
    """

    evaluator: Callable
    regularity: str
    declared_mean: float
    sup_norm_bound: float
    kind: str
    params: dict = field(default_factory=dict)
    kernel: TowerKernel | None = None
    domain: str = "tower"
    array_evaluator: Callable | None = None  # vector form on raw state arrays

    def descriptor(self) -> dict:
        return {"kind": self.kind, "regularity": self.regularity,
                "declared_mean": self.declared_mean,
                "sup_norm_bound": self.sup_norm_bound, **self.params}

    def __call__(self, point) -> float:
        return self.evaluator(point)


def _kernel_evaluator(kernel: TowerKernel) -> Callable:
    fc = kernel.future_coefs
    pc = kernel.past_coefs
    a = kernel.symbol_values

    def evaluate(point) -> float:
        total = kernel.const
        for k in range(len(fc)):
            if fc[k] != 0.0:
                total += fc[k] * a[point.future_symbol(k)]
        for k in range(len(pc)):
            if pc[k] != 0.0:
                total += pc[k] * a[point.past_symbol(k + 1)]
        if kernel.level_weight != 0.0 and point.level == 0:
            total += kernel.level_weight
        return total

    return evaluate


def _kernel_mean(schema: TowerSchema, kernel: TowerKernel) -> float:
    """Exact mean of the un-centered kernel under the invariant measure.

    future[0] carries the column weights; all other window symbols are
    i.i.d. with the branch law; the base indicator has mass 1/mean_return.
    """
    a = kernel.symbol_values
    mean_col = float(np.dot(schema.column_weights, a))
    mean_p = float(np.dot(schema.probs, a))
    total = 0.0
    fc = kernel.future_coefs
    if len(fc):
        total += fc[0] * mean_col + math.fsum(fc[1:]) * mean_p
    total += math.fsum(kernel.past_coefs) * mean_p
    total += kernel.level_weight / schema.mean_return
    return total


def canonical_observable(schema: TowerSchema, kind: str, theta_obs: float = 0.5,
                         depth: int = DEFAULT_OBS_DEPTH,
                         symbol_values=None) -> Observable:
    """Build one of the three canonical tower observables, centered exactly.

    symbol_weighted  phi = sum_k theta_obs^k a(future[k]) + sum_k gamma^k a(past[k])
    level_indicator  phi = 1{level == 0}
    past_sensitive   phi = a(past[1])
    with a(i) = (-1)^i unless ``symbol_values`` overrides it.  Centering
    constants come from exact finite sums over branch weights, never from
    sampling.
    """
    B = schema.n_branches
    if symbol_values is None:
        a = np.where(np.arange(B) % 2 == 0, 1.0, -1.0)
    else:
        a = np.asarray(symbol_values, dtype=float)
        if a.shape != (B,):
            raise ParameterOutOfRange(f"symbol_values must have shape ({B},)")
    K = schema.past_depth
    amax = float(np.max(np.abs(a))) if B else 0.0

    if kind == "symbol_weighted":
        if not (0.0 < theta_obs < 1.0):
            raise ParameterOutOfRange(f"theta_obs {theta_obs} outside (0, 1)")
        if depth < 0:
            raise ParameterOutOfRange(f"depth {depth} < 0")
        fc = theta_obs ** np.arange(depth + 1, dtype=float)
        pc = schema.gamma ** np.arange(1, K + 1, dtype=float)
        kernel = TowerKernel(fc, pc, 0.0, a, 0.0)
        mean = _kernel_mean(schema, kernel)
        kernel = TowerKernel(fc, pc, 0.0, a, -mean,
                             fut_ratio=theta_obs, past_ratio=schema.gamma)
        bound = amax * (float(np.sum(fc)) + float(np.sum(pc))) + abs(mean)
        regularity = f"dynamically_hoelder(theta={theta_obs}, depth={depth})"
        params = {"theta_obs": theta_obs, "depth": depth}
    elif kind == "level_indicator":
        kernel = TowerKernel(np.zeros(0), np.zeros(0), 1.0, a, 0.0)
        mean = 1.0 / schema.mean_return
        kernel = TowerKernel(np.zeros(0), np.zeros(0), 1.0, a, -mean)
        bound = max(1.0 - mean, mean)
        regularity = "dynamically_hoelder(theta=any, depth=0)"
        params = {}
    elif kind == "past_sensitive":
        if K < 1:
            raise ParameterOutOfRange("past_sensitive needs past_depth >= 1")
        pc = np.zeros(K)
        pc[0] = 1.0
        kernel = TowerKernel(np.zeros(0), pc, 0.0, a, 0.0)
        mean = _kernel_mean(schema, kernel)
        kernel = TowerKernel(np.zeros(0), pc, 0.0, a, -mean)
        bound = amax + abs(mean)
        regularity = "bounded_measurable"
        params = {}
    else:
        raise ParameterOutOfRange(f"unknown canonical observable kind {kind!r}")

    return Observable(
        evaluator=_kernel_evaluator(kernel),
        regularity=regularity,
        declared_mean=mean,
        sup_norm_bound=bound,
        kind=kind,
        params=params,
        kernel=kernel,
        domain="tower",
    )

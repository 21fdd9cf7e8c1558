"""Symbolic two-sided tower: schema, points, stepping, separation metric.

The base map is realized as the full shift on branch indices carrying a
Bernoulli measure, so the invariant tower measure is exactly sampleable.
A point keeps a truncated stable coordinate (``past``, most recent symbol
first), a lazily extended future symbol stream, and a level below the
return time of the current base cylinder.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import (
    DepthInsufficient,
    LevelMismatch,
    NonpositiveReturnTime,
    ParameterOutOfRange,
    ProbabilityNotNormalized,
)

PROB_TOL = 1e-12
DEFAULT_SEPARATION_CAP = 64
DEFAULT_PAST_DEPTH = 32

#: future symbols consumed before the buffer is compacted
_FUTURE_TRIM = 4096


@dataclass(frozen=True)
class TowerSchema:
    """Validated tower description: branch law, metric and contraction rates.

    ``branches`` is an ordered tuple of (probability, return_time) pairs.
    ``theta`` is the base of the separation metric, ``gamma`` the stable
    contraction rate, ``past_depth`` the truncation K of the stable
    coordinate.  Derived quantities (mean return time, column weights and
    sampling CDFs) are cached at construction.
    """

    branches: tuple[tuple[float, int], ...]
    theta: float
    gamma: float
    past_depth: int
    tail_info: dict | None = field(default=None, compare=False, repr=False)

    # caches, filled in __post_init__
    probs: np.ndarray = field(init=False, compare=False, repr=False)
    returns: np.ndarray = field(init=False, compare=False, repr=False)
    mean_return: float = field(init=False, compare=False, repr=False)
    column_weights: np.ndarray = field(init=False, compare=False, repr=False)
    branch_cdf: np.ndarray = field(init=False, compare=False, repr=False)
    column_cdf: np.ndarray = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        probs = np.array([p for p, _ in self.branches], dtype=float)
        returns = np.array([r for _, r in self.branches], dtype=np.int64)
        mean_return = float(np.dot(probs, returns))
        column_weights = probs * returns / mean_return
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "returns", returns)
        object.__setattr__(self, "mean_return", mean_return)
        object.__setattr__(self, "column_weights", column_weights)
        object.__setattr__(self, "branch_cdf", np.cumsum(probs))
        object.__setattr__(self, "column_cdf", np.cumsum(column_weights))

    @property
    def n_branches(self) -> int:
        return len(self.branches)

    def return_time(self, branch: int) -> int:
        return int(self.returns[branch])

    def to_dict(self) -> dict:
        d = {
            "branches": [[float(p), int(r)] for p, r in self.branches],
            "theta": self.theta,
            "gamma": self.gamma,
            "past_depth": self.past_depth,
        }
        if self.tail_info is not None:
            d["tail_info"] = dict(self.tail_info)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TowerSchema":
        return make_tower_schema(
            [(float(p), int(r)) for p, r in d["branches"]],
            d["theta"],
            d["gamma"],
            d["past_depth"],
            tail_info=d.get("tail_info"),
        )

    def descriptor(self) -> dict:
        """Compact description for result envelopes."""
        if self.tail_info is not None:
            core = dict(self.tail_info)
        else:
            core = {"kind": "explicit", "n_branches": self.n_branches}
        core.update(
            theta=self.theta,
            gamma=self.gamma,
            past_depth=self.past_depth,
            mean_return=self.mean_return,
        )
        return core


def make_tower_schema(branches, theta, gamma, past_depth, tail_info=None) -> TowerSchema:
    """Validate and build a TowerSchema.

    Raises ProbabilityNotNormalized, NonpositiveReturnTime or
    ParameterOutOfRange on bad input.
    """
    branches = tuple((float(p), int(r)) for p, r in branches)
    if not branches:
        raise ParameterOutOfRange("branch list must be nonempty")
    for p, r in branches:
        if not (0.0 < p <= 1.0):
            raise ParameterOutOfRange(f"branch probability {p} outside (0, 1]")
        if r < 1:
            raise NonpositiveReturnTime(f"return time {r} < 1")
    total = math.fsum(p for p, _ in branches)
    if abs(total - 1.0) > PROB_TOL:
        raise ProbabilityNotNormalized(f"sum of branch probabilities is {total!r}")
    if not (0.0 < theta < 1.0):
        raise ParameterOutOfRange(f"theta {theta} outside (0, 1)")
    if not (0.0 < gamma < 1.0):
        raise ParameterOutOfRange(f"gamma {gamma} outside (0, 1)")
    if int(past_depth) < 1:
        raise ParameterOutOfRange(f"past_depth {past_depth} < 1")
    return TowerSchema(branches, float(theta), float(gamma), int(past_depth),
                       tail_info=tail_info)


class TowerPoint:
    """A point of the two-sided tower, owned by one orbit.

    ``past`` lists the K most recent consumed symbols, most recent first.
    The future stream extends on demand from the point's own random
    stream, so long orbits need O(1) symbol memory beyond a sliding
    window.  Points built with an explicit future list and no stream are
    finite: reading past the provided symbols raises DepthInsufficient.
    """

    __slots__ = ("past", "level", "_future", "_base", "_rng", "_branch_cdf")

    def __init__(self, past, future, level, rng=None, branch_cdf=None):
        self.past = deque(past)
        self._future = list(future)
        self._base = 0
        self.level = int(level)
        self._rng = rng
        self._branch_cdf = branch_cdf

    def future_symbol(self, k: int) -> int:
        """Symbol k of the future stream (0 = current base cylinder)."""
        idx = self._base + k
        while idx >= len(self._future):
            if self._rng is None:
                raise DepthInsufficient(
                    f"future symbol {k} requested beyond the provided stream")
            u = self._rng.random()
            self._future.append(int(np.searchsorted(self._branch_cdf, u, side="right")))
        return self._future[idx]

    def past_symbol(self, k: int) -> int:
        """Symbol k of the stable coordinate (1 = most recently consumed)."""
        if k < 1 or k > len(self.past):
            raise DepthInsufficient(
                f"past symbol {k} outside the truncated window of depth {len(self.past)}")
        return self.past[k - 1]

    @property
    def past_len(self) -> int:
        return len(self.past)

    def clone(self) -> "TowerPoint":
        """Independent copy, including the random stream state."""
        rng = None
        if self._rng is not None:
            bg = np.random.Philox()
            bg.state = self._rng.bit_generator.state
            rng = np.random.Generator(bg)
        p = TowerPoint(self.past, [], self.level, rng=rng, branch_cdf=self._branch_cdf)
        p._future = self._future[self._base:]
        return p

    def __repr__(self):
        fut = self._future[self._base:self._base + 4]
        return f"TowerPoint(level={self.level}, future={fut}..., past_depth={len(self.past)})"


def sample_mu_delta(schema: TowerSchema, rng: np.random.Generator) -> TowerPoint:
    """Draw one point exactly from the invariant tower measure.

    The base cylinder is drawn with the column weights p_i R_i / sum p R,
    the level uniformly below its return time, and past symbols i.i.d.
    with the branch law (stationarity of the Bernoulli base).  The stream
    stays owned by the caller and keeps feeding the lazy future.
    """
    u = rng.random()
    first = int(np.searchsorted(schema.column_cdf, u, side="right"))
    first = min(first, schema.n_branches - 1)
    level = int(rng.random() * schema.return_time(first))
    past = [int(np.searchsorted(schema.branch_cdf, rng.random(), side="right"))
            for _ in range(schema.past_depth)]
    return TowerPoint(past, [first], level, rng=rng, branch_cdf=schema.branch_cdf)


def step(schema: TowerSchema, point: TowerPoint) -> TowerPoint:
    """Advance the tower map by one step (in place; returns the point).

    Below the top of the column the level increments; at the top the
    current symbol is consumed into the past (oldest entry dropped at
    depth K) and the point lands on the base of the next cylinder.
    Quotient stepping is the same operation ignoring the past field.
    """
    cur = point.future_symbol(0)
    if point.level + 1 < schema.return_time(cur):
        point.level += 1
        return point
    point.level = 0
    point.past.appendleft(cur)
    while len(point.past) > schema.past_depth:
        point.past.pop()
    point._base += 1
    if point._base >= _FUTURE_TRIM:
        del point._future[:point._base]
        point._base = 0
    point.future_symbol(0)  # materialize the new cylinder
    return point


def separation_time(x: TowerPoint, y: TowerPoint, cap: int = DEFAULT_SEPARATION_CAP):
    """First future index at which two base points disagree.

    Returns math.inf when the futures agree on all indices below ``cap``.
    """
    if x.level != 0 or y.level != 0:
        raise LevelMismatch("separation time is defined for base points only")
    if cap < 1:
        raise ParameterOutOfRange(f"cap {cap} < 1")
    for n in range(cap):
        if x.future_symbol(n) != y.future_symbol(n):
            return n
    return math.inf


class DTheta(NamedTuple):
    value: float
    truncated: bool


def d_theta(schema: TowerSchema, x: TowerPoint, y: TowerPoint,
            cap: int = DEFAULT_SEPARATION_CAP) -> DTheta:
    """Separation metric theta**s(x, y) on base points.

    When the separation exceeds the cap the value theta**cap is returned
    with the ``truncated`` flag set (the true value is smaller).
    """
    s = separation_time(x, y, cap)
    if math.isinf(s):
        return DTheta(schema.theta ** cap, True)
    return DTheta(schema.theta ** s, False)


@dataclass(frozen=True)
class ComponentAssignment:
    """Cyclic component structure induced by the gcd of return times."""

    s: int
    n_branches: int
    returns: tuple[int, ...]

    def component_of(self, branch: int, level: int) -> int:
        if not (0 <= branch < self.n_branches):
            raise ParameterOutOfRange(f"branch {branch} out of range")
        if not (0 <= level < self.returns[branch]):
            raise ParameterOutOfRange(f"level {level} outside column {branch}")
        return (level % self.s) + 1


def gcd_decompose(schema: TowerSchema) -> ComponentAssignment:
    """Split the tower into the s = gcd(return times) cyclic components.

    One tower step advances the component index by 1 mod s; s = 1 gives
    the single trivial class.
    """
    s = 0
    for _, r in schema.branches:
        s = math.gcd(s, r)
    return ComponentAssignment(s, schema.n_branches,
                               tuple(int(r) for _, r in schema.branches))


def h_n(schema: TowerSchema, point: TowerPoint, n: int) -> int:
    """Number of base visits among tower iterates 0..n of a point.

    Works on a clone, so the caller's point is untouched.
    """
    if n < 0:
        raise ParameterOutOfRange(f"n {n} < 0")
    p = point.clone()
    count = 1 if p.level == 0 else 0
    for _ in range(n):
        step(schema, p)
        if p.level == 0:
            count += 1
    return count

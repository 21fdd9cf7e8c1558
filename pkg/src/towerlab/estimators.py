"""Statistical functionals as Monte Carlo estimators over independent orbits.

Initial points are drawn exactly from the invariant measure (tower
measure for towers, collision measure for billiards), so no burn-in is
needed and stderr stays honest: orbits are independent by construction.
Conditional-expectation functionals are tower-only; they resample the
truncated stable coordinate (nested Monte Carlo) instead of applying
transfer-operator algebra.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .billiards import BilliardDomain, run_orbit_records, sample_liouville_arrays
from .engine import BILLIARD_BATCH, TOWER_BATCH, _draw_symbols, tower_blocks
from .errors import (
    HorizonExceeded,
    HorizonTooSmall,
    NotATowerSystem,
    ParameterOutOfRange,
)
from .sampler import Observable, TowerKernel
from .streams import stream
from .tower import TowerSchema

COND_EXP_INNER = 64
_COND_CHUNK = 2048


@dataclass
class EstimatePoint:
    n: int
    value: float
    stderr: float
    samples: int


@dataclass
class DecayEstimate:
    """A decay curve: (n, value, stderr, samples) plus run metadata."""

    points: list[EstimatePoint]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        ns = [p.n for p in self.points]
        if any(b <= a for a, b in zip(ns, ns[1:])):
            raise ParameterOutOfRange("estimate points must have strictly increasing n")
        if any(p.stderr < 0 for p in self.points):
            raise ParameterOutOfRange("stderr must be nonnegative")
        if self.meta.get("probability"):
            if any(not (0.0 <= p.value <= 1.0) for p in self.points):
                raise ParameterOutOfRange("probability-valued estimate outside [0, 1]")

    def ns(self) -> np.ndarray:
        return np.array([p.n for p in self.points], dtype=np.int64)

    def values(self) -> np.ndarray:
        return np.array([p.value for p in self.points])

    def stderrs(self) -> np.ndarray:
        return np.array([p.stderr for p in self.points])

    def samples(self) -> np.ndarray:
        return np.array([p.samples for p in self.points], dtype=np.int64)

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("n,value,stderr,samples\n")
            for p in self.points:
                fh.write(f"{p.n},{p.value:.17g},{p.stderr:.17g},{p.samples}\n")

    @classmethod
    def read_csv(cls, path, meta=None) -> "DecayEstimate":
        points = []
        with open(path) as fh:
            header = fh.readline().strip()
            if header != "n,value,stderr,samples":
                raise ParameterOutOfRange(f"unexpected CSV header {header!r}")
            for line in fh:
                if not line.strip():
                    continue
                n, value, stderr, samples = line.strip().split(",")
                points.append(EstimatePoint(int(n), float(value), float(stderr), int(samples)))
        return cls(points, meta or {})


_TOWER_BUDGET = 24_000_000   # stream entries per batch (memory guard)
_BILLIARD_BUDGET = 16_000_000


class TowerSystem:
    """Orbit source for a tower schema (batched symbolic engine)."""

    kind = "tower"

    def __init__(self, schema: TowerSchema, batch: int | None = None):
        self.schema = schema
        self.batch = batch

    def _batch_for(self, length: int) -> int:
        if self.batch is not None:
            return self.batch
        return min(TOWER_BATCH, max(256, _TOWER_BUDGET // max(length, 1)))

    def blocks(self, observables, n_orbits, length, seed, tag, record=None):
        for i0, outs in tower_blocks(self.schema, observables, n_orbits, length,
                                     seed, tag, record=record,
                                     batch=self._batch_for(length)):
            yield i0, outs, None

    def descriptor(self) -> dict:
        return {"type": "tower", **self.schema.descriptor()}

    def diagnostics(self) -> dict:
        info = self.schema.tail_info or {}
        return {"truncated_mass": info.get("truncated_mass", 0.0)}


class BilliardSystem:
    """Orbit source for a billiard table (compiled collision loops)."""

    kind = "billiard"

    def __init__(self, domain: BilliardDomain, batch: int | None = None):
        self.domain = domain
        self.batch = batch
        self._discarded = 0
        self._total = 0

    def _batch_for(self, n_rec: int) -> int:
        if self.batch is not None:
            return self.batch
        return min(BILLIARD_BATCH, max(1024, _BILLIARD_BUDGET // max(n_rec, 1)))

    def blocks(self, observables, n_orbits, length, seed, tag, record=None):
        steps = list(range(length)) if record is None else list(record)
        batch = self._batch_for(len(steps))
        done = 0
        batch_index = 0
        while done < n_orbits:
            b = min(batch, n_orbits - done)
            rng = stream(seed, tag, batch_index)
            s0, psi0 = sample_liouville_arrays(self.domain, b, rng)
            s_rec, psi_rec, status = run_orbit_records(self.domain, s0, psi0, steps)
            alive = status == 0
            outs = [obs.array_evaluator(s_rec, psi_rec) for obs in observables]
            self._discarded += int(b - alive.sum())
            self._total += b
            yield done, outs, alive
            done += b
            batch_index += 1

    def descriptor(self) -> dict:
        return {"type": "billiard", **self.domain.descriptor()}

    def diagnostics(self) -> dict:
        frac = self._discarded / self._total if self._total else 0.0
        return {"discarded_fraction": frac}


def birkhoff_sum(trace, k: int) -> float:
    """Compensated partial sum of the first k trace entries."""
    trace = np.asarray(trace)
    if k > len(trace):
        raise HorizonExceeded(f"k={k} exceeds trace length {len(trace)}")
    return math.fsum(map(float, trace[:k]))


def _check_n_list(n_list, minimum=1):
    n_list = sorted({int(n) for n in n_list})
    if not n_list:
        raise ParameterOutOfRange("n_list must be nonempty")
    if n_list[0] < minimum:
        raise ParameterOutOfRange(f"n values must be >= {minimum}")
    return n_list


def _suffix_max_at(g, cols, end):
    """Suffix maxima max_{j in [col, end)} g[:, j] at each start column.

    Single pass over g: columns between consecutive starts are reduced
    segment-wise and combined right to left.
    """
    out = np.empty((g.shape[0], len(cols)))
    running = np.full(g.shape[0], -np.inf)
    prev = end
    for i in range(len(cols) - 1, -1, -1):
        c = cols[i]
        if c < prev:
            running = np.maximum(running, g[:, c:prev].max(axis=1))
            prev = c
        out[:, i] = running
    return out


def _binomial_point(n, hits, total) -> EstimatePoint:
    value = hits / total
    stderr = math.sqrt(value * (1.0 - value) / total) if total else 0.0
    return EstimatePoint(int(n), value, stderr, int(total))


def _base_meta(system, observable, seed, **extra) -> dict:
    meta = {
        "seed": seed,
        "system": system.descriptor(),
        "observable": observable.descriptor(),
    }
    meta.update(extra)
    return meta


def estimate_ld(system, observable, epsilon, n_list, n_orbits, seed) -> DecayEstimate:
    """Fraction of orbits whose time-n average exceeds epsilon in modulus.

    Initial points follow the invariant measure; the observable must be
    centered (canonical observables are).  stderr is the binomial one.
    """
    if epsilon <= 0:
        raise ParameterOutOfRange(f"epsilon {epsilon} must be > 0")
    n_list = _check_n_list(n_list)
    length = n_list[-1]
    cols = np.array(n_list, dtype=np.int64) - 1
    hits = np.zeros(len(n_list), dtype=np.int64)
    total = 0
    for _, (block,), alive in system.blocks([observable], n_orbits, length, seed, "ld"):
        if alive is not None:
            block = block[alive]
        cs = np.cumsum(block, axis=1)
        avg = np.abs(cs[:, cols]) / np.asarray(n_list, dtype=float)
        hits += (avg > epsilon).sum(axis=0)
        total += block.shape[0]
    points = [_binomial_point(n, h, total) for n, h in zip(n_list, hits)]
    meta = _base_meta(system, observable, seed, kind="ld", epsilon=epsilon,
                      n_orbits=n_orbits, probability=True, **system.diagnostics())
    return DecayEstimate(points, meta)


def estimate_mld(system, observable, epsilon, n_list, horizon, n_orbits,
                 seed) -> DecayEstimate:
    """Fraction of orbits whose worst average at any time in [n, horizon]
    exceeds epsilon in modulus.

    The supremum over k >= n is truncated at the horizon (one-sided
    underestimate); sensitivity is quantified by also evaluating the
    statistic truncated at horizon/2 on the same orbits, reported in
    meta["half_horizon"].
    """
    if epsilon <= 0:
        raise ParameterOutOfRange(f"epsilon {epsilon} must be > 0")
    n_list = _check_n_list(n_list)
    horizon = int(horizon)
    if horizon < n_list[-1]:
        raise HorizonTooSmall(f"horizon {horizon} < max n {n_list[-1]}")
    half = horizon // 2
    cols = [n - 1 for n in n_list]
    hits = np.zeros(len(n_list), dtype=np.int64)
    hits_half = np.zeros(len(n_list), dtype=np.int64)
    total = 0
    inv_k = 1.0 / np.arange(1, horizon + 1)
    for _, (block,), alive in system.blocks([observable], n_orbits, horizon, seed, "mld"):
        if alive is not None:
            block = block[alive]
        cs = np.cumsum(block, axis=1)
        g = np.abs(cs, out=cs)
        g *= inv_k
        hits += (_suffix_max_at(g, cols, horizon) > epsilon).sum(axis=0)
        if half >= 1:
            sm_half = _suffix_max_at(g, [c for c in cols if c < half], half)
            hits_half[:sm_half.shape[1]] += (sm_half > epsilon).sum(axis=0)
        total += block.shape[0]
    points = [_binomial_point(n, h, total) for n, h in zip(n_list, hits)]
    half_values = {int(n): (int(h), h / total if total else 0.0)
                   for n, h in zip(n_list, hits_half) if n <= half}
    meta = _base_meta(system, observable, seed, kind="mld", epsilon=epsilon,
                      horizon=horizon, n_orbits=n_orbits, probability=True,
                      half_horizon={"horizon": half, "values": half_values},
                      **system.diagnostics())
    return DecayEstimate(points, meta)


def estimate_correlation(system, phi, psi, n_list, n_orbits, seed) -> DecayEstimate:
    """|cov(phi, psi o f^n)| over independent orbits, per n.

    stderr comes from batch means: the covariance is re-estimated on each
    orbit batch and the spread of batch values divided by sqrt(#batches).
    """
    n_list = _check_n_list(n_list, minimum=0)
    record = sorted({0, *n_list})
    col_of = {n: i for i, n in enumerate(record)}
    n_cols = np.array([col_of[n] for n in n_list])
    s_phi = 0.0
    s_psi = np.zeros(len(n_list))
    s_prod = np.zeros(len(n_list))
    total = 0
    batch_covs = []
    length = record[-1] + 1
    for _, (bphi, bpsi), alive in system.blocks([phi, psi], n_orbits, length,
                                                seed, "corr", record=record):
        if alive is not None:
            bphi = bphi[alive]
            bpsi = bpsi[alive]
        nb = bphi.shape[0]
        if nb == 0:
            continue
        phi0 = bphi[:, col_of[0]]
        psin = bpsi[:, n_cols]
        s_phi += phi0.sum()
        s_psi += psin.sum(axis=0)
        s_prod += (phi0[:, None] * psin).sum(axis=0)
        total += nb
        if nb >= 2:
            batch_covs.append((phi0[:, None] * psin).mean(axis=0)
                              - phi0.mean() * psin.mean(axis=0))
    if total == 0:
        raise ParameterOutOfRange("no surviving orbits")
    cov = s_prod / total - (s_phi / total) * (s_psi / total)
    if len(batch_covs) >= 2:
        stderr = np.std(np.array(batch_covs), axis=0, ddof=1) / math.sqrt(len(batch_covs))
    else:
        stderr = np.zeros(len(n_list))
    points = [EstimatePoint(int(n), float(abs(c)), float(se), total)
              for n, c, se in zip(n_list, cov, stderr)]
    meta = _base_meta(system, phi, seed, kind="correlation",
                      observable_psi=psi.descriptor(), n_orbits=n_orbits,
                      **system.diagnostics())
    return DecayEstimate(points, meta)


# ---------------------------------------------------------------------------
# conditional-expectation functionals (tower only, nested Monte Carlo)

@dataclass
class CondExpResult:
    """Scalar estimate with outer stderr and the inner-resampling scale."""

    value: float
    stderr: float
    inner_sem: float
    samples: int

    def __float__(self):
        return self.value


@dataclass
class DualityResult:
    """Both sides of the conditional-norm/correlation identity.

    Iterates as (lhs, rhs); diff_stderr is the standard error of the
    per-orbit difference on the shared samples.
    """

    lhs: float
    rhs: float
    lhs_stderr: float
    rhs_stderr: float
    diff: float
    diff_stderr: float
    n: int
    p: float
    samples: int

    def __iter__(self):
        return iter((self.lhs, self.rhs))


def _require_tower(system_or_schema) -> TowerSchema:
    if isinstance(system_or_schema, TowerSchema):
        return system_or_schema
    if isinstance(system_or_schema, TowerSystem):
        return system_or_schema.schema
    raise NotATowerSystem(
        "conditional-expectation functionals need the symbolic tower")


def _require_kernel(observable: Observable) -> TowerKernel:
    if observable.domain != "tower" or observable.kernel is None:
        raise NotATowerSystem("observable must be a canonical tower observable")
    return observable.kernel


def _draw_outer(schema, c, fut_width, rng, with_past):
    """Outer mu_Delta draws as arrays: future window, level, own past."""
    fut = np.empty((c, fut_width), dtype=np.int32)
    fut[:, 0] = _draw_symbols(schema.column_cdf, rng.random(c))
    level = (rng.random(c) * schema.returns[fut[:, 0]]).astype(np.int64)
    fut[:, 1:] = _draw_symbols(schema.branch_cdf, rng.random((c, fut_width - 1)))
    past = None
    if with_past:
        past = _draw_symbols(schema.branch_cdf, rng.random((c, schema.past_depth)))
    return fut, level, past


def _draw_inner(schema, c, m_inner, depth, rng):
    return _draw_symbols(schema.branch_cdf, rng.random((c, m_inner, depth)))


def _kernel_eval(kernel, fut_window, past_window, level) -> np.ndarray:
    """Evaluate the kernel on explicit (future, past, level) windows."""
    a = kernel.symbol_values
    vals = np.full(fut_window.shape[0] if fut_window is not None else past_window.shape[0],
                   kernel.const, dtype=np.float64)
    fc = kernel.future_coefs
    if len(fc):
        vals += a[fut_window[:, :len(fc)]] @ fc
    pc = kernel.past_coefs
    if len(pc):
        vals += a[past_window[:, :len(pc)]] @ pc
    if kernel.level_weight != 0.0:
        vals += kernel.level_weight * (level == 0)
    return vals


def _forward_path(schema, fut, level, n):
    """Number of consumed symbols and the level after n forward steps.

    Both depend only on (future, level): the climb to the first return
    takes R(fut[0]) - level steps, then one column per symbol.
    """
    c = fut.shape[0]
    if n == 0:
        return np.zeros(c, dtype=np.int64), level.copy()
    R = schema.returns
    m_max = min(n, fut.shape[1] - 1)
    arrive = (R[fut[:, 0]] - level)[:, None] + np.concatenate(
        [np.zeros((c, 1), dtype=np.int64),
         np.cumsum(R[fut[:, 1:m_max + 1]], axis=1)], axis=1)
    # arrive[:, j] = time of (j+1)-th base arrival
    consumed = (arrive <= n).sum(axis=1)
    level_n = np.where(
        consumed == 0, level + n,
        n - arrive[np.arange(c), np.maximum(consumed - 1, 0)])
    return consumed, level_n


def _eval_forward(schema, kernel, fut, past_rows, level, n, consumed=None, level_n=None):
    """phi(f^n x) for x = (past_rows, fut, level), vectorized over rows.

    Forward steps consume future symbols; the image point's past starts
    with the consumed prefix (reversed) followed by the original past.
    """
    if consumed is None or level_n is None:
        consumed, level_n = _forward_path(schema, fut, level, n)
    D1 = max(len(kernel.future_coefs), 1)
    Kp = len(kernel.past_coefs)
    m = fut.shape[0]
    out = np.empty(m, dtype=np.float64)
    for q in np.unique(consumed):
        rows = np.nonzero(consumed == q)[0]
        fw = fut[rows, q:q + D1]
        pw = None
        if Kp:
            pw = np.empty((len(rows), Kp), dtype=np.int32)
            take = min(q, Kp)
            if take:
                pw[:, :take] = fut[rows, q - take:q][:, ::-1][:, :take]
            if Kp > take:
                pw[:, take:] = past_rows[rows, :Kp - take]
        out[rows] = _kernel_eval(kernel, fw, pw, level_n[rows])
    return out


def _eval_backward(schema, kernel, fut, level, past_rows, n):
    """phi(f^-n x) for x = (past_rows, fut, level), vectorized over rows.

    Backward steps climb down the column and then consume past symbols;
    the preimage's future starts with the consumed symbols (reversed)
    followed by the original future.
    """
    R = schema.returns
    m = fut.shape[0]
    back = n - level
    D1 = max(len(kernel.future_coefs), 1)
    Kp = len(kernel.past_coefs)
    out = np.empty(m, dtype=np.float64)

    no_consume = back <= 0
    if np.any(no_consume):
        rows = np.nonzero(no_consume)[0]
        pw = past_rows[rows, :Kp] if Kp else None
        out[rows] = _kernel_eval(kernel, fut[rows, :D1], pw, level[rows] - n)

    rows_c = np.nonzero(~no_consume)[0]
    if len(rows_c):
        csum = np.cumsum(R[past_rows[rows_c]], axis=1)
        need = back[rows_c]
        q_all = (csum < need[:, None]).sum(axis=1) + 1
        level_p = level[rows_c] + csum[np.arange(len(rows_c)), q_all - 1] - n
        for q in np.unique(q_all):
            sub = np.nonzero(q_all == q)[0]
            rows = rows_c[sub]
            fw = np.empty((len(rows), D1), dtype=np.int32)
            take = min(q, D1)
            fw[:, :take] = past_rows[rows, q - take:q][:, ::-1][:, :take]
            if D1 > q:
                fw[:, q:] = fut[rows, :D1 - q]
            pw = past_rows[rows, q:q + Kp] if Kp else None
            out[rows] = _kernel_eval(kernel, fw, pw, level_p[sub])
    return out


def _inner_depths(schema, kernel, n):
    """(future width, inner past depth) covering n steps plus the windows."""
    D1 = max(len(kernel.future_coefs), 1)
    Kp = len(kernel.past_coefs)
    return n + D1 + 1, n + Kp + 1


def cond_exp_past_norm(system, observable, n, p, n_orbits, seed,
                       m_inner: int = COND_EXP_INNER) -> CondExpResult:
    """L^p norm of the conditional expectation of phi o f^-n given the
    past-insensitive sigma-algebra.

    Per outer sample the future and level are held fixed and the past is
    redrawn m_inner times i.i.d.; phi is evaluated at the n-step
    backward image of each resample and averaged.
    """
    schema = _require_tower(system)
    kernel = _require_kernel(observable)
    if p < 1:
        raise ParameterOutOfRange(f"p {p} must be >= 1")
    if n < 0:
        raise ParameterOutOfRange(f"n {n} must be >= 0")
    fut_w, past_w = _inner_depths(schema, kernel, n)
    acc = 0.0
    acc2 = 0.0
    inner_var = 0.0
    total = 0
    chunk_idx = 0
    while total < n_orbits:
        c = min(_COND_CHUNK, n_orbits - total)
        rng = stream(seed, "cond_past", n, chunk_idx)
        fut, level, _ = _draw_outer(schema, c, fut_w, rng, with_past=False)
        P = _draw_inner(schema, c, m_inner, past_w, rng)
        fut_r = np.repeat(fut, m_inner, axis=0)
        lvl_r = np.repeat(level, m_inner)
        vals = _eval_backward(schema, kernel, fut_r, lvl_r,
                              P.reshape(c * m_inner, past_w), n).reshape(c, m_inner)
        e_hat = vals.mean(axis=1)
        x = np.abs(e_hat) ** p
        acc += x.sum()
        acc2 += (x * x).sum()
        inner_var += (vals.var(axis=1, ddof=1) / m_inner).sum()
        total += c
        chunk_idx += 1
    mean_p = acc / total
    var_mean = max(acc2 / total - mean_p ** 2, 0.0) / total
    value = mean_p ** (1.0 / p)
    # delta method for the p-th root
    stderr = (math.sqrt(var_mean) * value / (p * mean_p)) if mean_p > 0 else math.sqrt(var_mean)
    inner_sem = math.sqrt(inner_var / total)
    return CondExpResult(value, stderr, inner_sem, total)


def cond_exp_future_residual(system, observable, n, p, n_orbits, seed,
                             m_inner: int = COND_EXP_INNER) -> CondExpResult:
    """L^p distance between phi o f^n and its past-insensitive projection.

    The residual vanishes as the n-step image forgets the truncated past.
    """
    schema = _require_tower(system)
    kernel = _require_kernel(observable)
    if p < 1:
        raise ParameterOutOfRange(f"p {p} must be >= 1")
    if n < 0:
        raise ParameterOutOfRange(f"n {n} must be >= 0")
    fut_w, past_w = _inner_depths(schema, kernel, n)
    acc = 0.0
    acc2 = 0.0
    inner_var = 0.0
    total = 0
    chunk_idx = 0
    while total < n_orbits:
        c = min(_COND_CHUNK, n_orbits - total)
        rng = stream(seed, "cond_fut", n, chunk_idx)
        fut, level, own = _draw_outer(schema, c, fut_w, rng, with_past=True)
        P = _draw_inner(schema, c, m_inner, past_w, rng)
        consumed, level_n = _forward_path(schema, fut, level, n)
        own_val = _eval_forward(schema, kernel, fut, own, level, n,
                                consumed=consumed, level_n=level_n)
        fut_r = np.repeat(fut, m_inner, axis=0)
        vals = _eval_forward(schema, kernel, fut_r,
                             P.reshape(c * m_inner, past_w),
                             np.repeat(level, m_inner), n,
                             consumed=np.repeat(consumed, m_inner),
                             level_n=np.repeat(level_n, m_inner)).reshape(c, m_inner)
        resid = np.abs(vals.mean(axis=1) - own_val) ** p
        acc += resid.sum()
        acc2 += (resid * resid).sum()
        inner_var += (vals.var(axis=1, ddof=1) / m_inner).sum()
        total += c
        chunk_idx += 1
    mean_p = acc / total
    var_mean = max(acc2 / total - mean_p ** 2, 0.0) / total
    value = mean_p ** (1.0 / p)
    stderr = (math.sqrt(var_mean) * value / (p * mean_p)) if mean_p > 0 else math.sqrt(var_mean)
    inner_sem = math.sqrt(inner_var / total)
    return CondExpResult(value, stderr, inner_sem, total)


def _stable_diameter_samples(schema, kernel, n, n_orbits, seed, m_inner):
    diams = np.empty(n_orbits)
    h_ns = np.empty(n_orbits, dtype=np.int64)
    fut_w, past_w = _inner_depths(schema, kernel, n)
    total = 0
    chunk_idx = 0
    while total < n_orbits:
        c = min(_COND_CHUNK, n_orbits - total)
        rng = stream(seed, "stable_diam", n, chunk_idx)
        fut, level, _ = _draw_outer(schema, c, fut_w, rng, with_past=False)
        P = _draw_inner(schema, c, m_inner, past_w, rng)
        consumed, level_n = _forward_path(schema, fut, level, n)
        vals = _eval_forward(schema, kernel, np.repeat(fut, m_inner, axis=0),
                             P.reshape(c * m_inner, past_w),
                             np.repeat(level, m_inner), n,
                             consumed=np.repeat(consumed, m_inner),
                             level_n=np.repeat(level_n, m_inner)).reshape(c, m_inner)
        diams[total:total + c] = vals.max(axis=1) - vals.min(axis=1)
        h_ns[total:total + c] = consumed + (level == 0)
        total += c
        chunk_idx += 1
    return diams, h_ns


def stable_diameter_sum(system, observable, n, n_orbits, seed,
                        m_inner: int = COND_EXP_INNER) -> CondExpResult:
    """Mean oscillation of phi over n-step images of stable leaves.

    The leaf through a point is realized by redrawing the truncated past;
    the diameter is max - min of phi over the resampled images.
    """
    schema = _require_tower(system)
    kernel = _require_kernel(observable)
    if n < 0:
        raise ParameterOutOfRange(f"n {n} must be >= 0")
    diams, _ = _stable_diameter_samples(schema, kernel, n, n_orbits, seed, m_inner)
    value = float(diams.mean())
    stderr = float(diams.std(ddof=1) / math.sqrt(len(diams))) if len(diams) > 1 else 0.0
    return CondExpResult(value, stderr, 0.0, len(diams))


def duality_check(system, observable, n, p, n_orbits, seed,
                  m_inner: int = COND_EXP_INNER) -> DualityResult:
    """Both sides of the identity ||E(phi o f^-n | F_0)||_p^p
    = integral of phi * (psi o f^n), with psi built from the conditional
    expectation itself.

    The test function psi uses one inner batch of past resamples and the
    left side pairs it with an independent second batch, which makes the
    two estimators agree exactly in expectation at any inner sample size;
    both converge to the norm as m_inner grows.  Samples are shared, so
    diff_stderr reflects the spread of the per-orbit difference.
    """
    schema = _require_tower(system)
    kernel = _require_kernel(observable)
    if p < 1:
        raise ParameterOutOfRange(f"p {p} must be >= 1")
    if n < 0:
        raise ParameterOutOfRange(f"n {n} must be >= 0")
    fut_w0, past_w = _inner_depths(schema, kernel, n)
    fut_w = fut_w0 + n + 1  # the forward image still needs a full window
    sums = np.zeros(3)
    sqs = np.zeros(3)
    s_diff = 0.0
    s_diff2 = 0.0
    total = 0
    chunk_idx = 0
    while total < n_orbits:
        c = min(_COND_CHUNK, n_orbits - total)
        rng = stream(seed, "duality", n, chunk_idx)
        fut, level, own = _draw_outer(schema, c, fut_w, rng, with_past=True)
        P_a = _draw_inner(schema, c, m_inner, past_w, rng)
        P_b = _draw_inner(schema, c, m_inner, past_w, rng)
        phi_x = _kernel_eval(kernel, fut, own, level)
        consumed, level_n = _forward_path(schema, fut, level, n)
        cmax = int(consumed.max()) if len(consumed) else 0
        fut_y = np.empty((c, fut_w0 + 1), dtype=np.int32)
        for q in range(cmax + 1):
            rows = consumed == q
            if np.any(rows):
                fut_y[rows] = fut[rows, q:q + fut_w0 + 1]
        e_a = _inner_backward_mean(schema, kernel, fut_y, level_n, P_a, n, past_w)
        e_b = _inner_backward_mean(schema, kernel, fut_y, level_n, P_b, n, past_w)
        psi_hat = np.abs(e_a) ** (p - 1) * np.sign(e_a)
        lhs_i = e_b * psi_hat
        rhs_i = phi_x * psi_hat
        diff = lhs_i - rhs_i
        for j, arr in enumerate((lhs_i, rhs_i)):
            sums[j] += arr.sum()
            sqs[j] += (arr * arr).sum()
        s_diff += diff.sum()
        s_diff2 += (diff * diff).sum()
        total += c
        chunk_idx += 1
    mean = sums / total
    var = np.maximum(sqs / total - mean ** 2, 0.0) / total
    d_mean = s_diff / total
    d_var = max(s_diff2 / total - d_mean ** 2, 0.0) / total
    return DualityResult(float(mean[0]), float(mean[1]),
                         float(math.sqrt(var[0])), float(math.sqrt(var[1])),
                         float(d_mean), float(math.sqrt(d_var)), n, p, total)


def _inner_backward_mean(schema, kernel, fut, level, P, n, past_w):
    c, m_inner, _ = P.shape
    vals = _eval_backward(schema, kernel,
                          np.repeat(fut, m_inner, axis=0),
                          np.repeat(level, m_inner),
                          P.reshape(c * m_inner, past_w), n)
    return vals.reshape(c, m_inner).mean(axis=1)

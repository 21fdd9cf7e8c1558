"""Pointwise and moment checks for the maximal-inequality machinery.

All operations act on per-orbit traces of a centered observable.  The
recursion check compares truncated suprema that share one horizon, so
the pointwise bound survives truncation verbatim (the [n, 2n) block is
controlled through sums reaching 3n, the rest is the 2n-supremum).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import HorizonExceeded, HorizonTooSmall, ParameterOutOfRange

BS_SLACK = 1e-12


@dataclass
class MaxStats:
    """Norm estimates of the running-maximum statistics at one (n, p)."""

    n: int
    p: float
    norm_max_partial: float
    stderr_max_partial: float
    norm_mn: float
    stderr_mn: float
    samples: int


def _as_traces(traces) -> np.ndarray:
    arr = np.asarray(traces, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    return arr


def max_partial_sum_norm(traces, p: float, n: int) -> float:
    """p-norm over orbits of max_{k<=n} |partial sum up to k|."""
    arr = _as_traces(traces)
    if p < 1:
        raise ParameterOutOfRange(f"p {p} must be >= 1")
    if n < 1:
        raise ParameterOutOfRange(f"n {n} must be >= 1")
    if n > arr.shape[1]:
        raise HorizonExceeded(f"n={n} exceeds trace length {arr.shape[1]}")
    cs = np.cumsum(arr[:, :n], axis=1)
    m = np.abs(cs).max(axis=1)
    return float(np.mean(m ** p) ** (1.0 / p))


def exp_moment(traces, tau_prime: float, omega: float, n: int) -> float:
    """Sample mean of exp(tau' n^(-omega/2) |partial sum at n|^omega)."""
    if tau_prime <= 0:
        raise ParameterOutOfRange(f"tau_prime {tau_prime} must be > 0")
    if not (0.0 < omega <= 1.0):
        raise ParameterOutOfRange(f"omega {omega} outside (0, 1]")
    arr = _as_traces(traces)
    if n < 1 or n > arr.shape[1]:
        raise ParameterOutOfRange(f"n={n} outside trace length {arr.shape[1]}")
    s_n = np.abs(arr[:, :n].sum(axis=1))
    return float(np.mean(np.exp(tau_prime * n ** (-omega / 2.0) * s_n ** omega)))


def m_n(trace, n: int, horizon: int) -> float:
    """max over k in [n, horizon] of |partial sum at k| / k for one trace."""
    arr = np.asarray(trace, dtype=float)
    if horizon < n:
        raise HorizonTooSmall(f"horizon {horizon} < n {n}")
    if n < 1:
        raise ParameterOutOfRange(f"n {n} must be >= 1")
    if horizon > len(arr):
        raise HorizonExceeded(f"horizon {horizon} exceeds trace length {len(arr)}")
    cs = np.cumsum(arr[:horizon])
    k = np.arange(1, horizon + 1, dtype=float)
    return float(np.max(np.abs(cs[n - 1:]) / k[n - 1:]))


class BSRecursion(NamedTuple):
    m_n: float
    m_2n: float
    c_n: float
    holds: bool


def bs_recursion_check(trace, n: int, horizon: int) -> BSRecursion:
    """Evaluate the truncated recursion bound M_n <= M_2n + C_n on one trace.

    C_n = 3 (3n)^-1 |S_3n| + 4 (2n)^-1 max_{n<=k<=2n-1} |S_3n - S_k|,
    with both suprema truncated at the same horizon.
    """
    mn, m2n, cn = bs_recursion_batch(np.asarray(trace, dtype=float)[None, :], n, horizon)
    holds = bool(mn[0] <= m2n[0] + cn[0] + BS_SLACK)
    return BSRecursion(float(mn[0]), float(m2n[0]), float(cn[0]), holds)


def bs_recursion_batch(traces, n: int, horizon: int):
    """Vectorized recursion statistics: arrays (M_n, M_2n, C_n) per orbit."""
    arr = _as_traces(traces)
    if n < 1:
        raise ParameterOutOfRange(f"n {n} must be >= 1")
    if horizon < 3 * n:
        raise HorizonTooSmall(f"horizon {horizon} < 3n = {3 * n}")
    if arr.shape[1] < horizon:
        raise HorizonExceeded(f"traces shorter than horizon {horizon}")
    cs = np.cumsum(arr[:, :horizon], axis=1)
    k = np.arange(1, horizon + 1, dtype=float)
    g = np.abs(cs) / k
    mn = g[:, n - 1:].max(axis=1)
    m2n = g[:, 2 * n - 1:].max(axis=1)
    s3n = cs[:, 3 * n - 1]
    # |S_3n - S_k| over n <= k <= 2n-1
    block = np.abs(s3n[:, None] - cs[:, n - 1:2 * n - 1])
    cn = 3.0 * np.abs(s3n) / (3.0 * n) + 4.0 * block.max(axis=1) / (2.0 * n)
    return mn, m2n, cn


def collect_traces(system, observable, n_orbits: int, length: int, seed: int,
                   tag: str = "traces") -> np.ndarray:
    """Materialize orbit traces (use for moderate n_orbits x length only)."""
    out = np.empty((n_orbits, length))
    total = 0
    for _, (block,), alive in system.blocks([observable], n_orbits, length, seed, tag):
        if alive is not None:
            block = block[alive]
        out[total:total + block.shape[0]] = block
        total += block.shape[0]
    return out[:total]


def max_norm_curve(system, observable, p: float, n_list, n_orbits: int,
                   seed: int) -> list[MaxStats]:
    """Streamed ||max_{k<=n} |S_k|||_p and ||M_n||_p over a grid of n.

    M_n is truncated at the largest n in the grid (the shared horizon).
    """
    n_list = sorted({int(n) for n in n_list})
    if not n_list or n_list[0] < 1:
        raise ParameterOutOfRange("n_list must contain integers >= 1")
    horizon = n_list[-1]
    acc_max = np.zeros(len(n_list))
    acc_max2 = np.zeros(len(n_list))
    acc_mn = np.zeros(len(n_list))
    acc_mn2 = np.zeros(len(n_list))
    total = 0
    inv_k = 1.0 / np.arange(1, horizon + 1)
    cols = np.array(n_list) - 1
    for _, (block,), alive in system.blocks([observable], n_orbits, horizon, seed, "maxnorm"):
        if alive is not None:
            block = block[alive]
        cs = np.cumsum(block, axis=1)
        a = np.abs(cs)
        run_max = np.maximum.accumulate(a, axis=1)
        mp = run_max[:, cols] ** p
        acc_max += mp.sum(axis=0)
        acc_max2 += (mp * mp).sum(axis=0)
        g = a * inv_k
        sm = np.maximum.accumulate(g[:, ::-1], axis=1)[:, ::-1]
        mn_p = sm[:, cols] ** p
        acc_mn += mn_p.sum(axis=0)
        acc_mn2 += (mn_p * mn_p).sum(axis=0)
        total += block.shape[0]
    out = []
    for i, n in enumerate(n_list):
        mean_max = acc_max[i] / total
        mean_mn = acc_mn[i] / total
        se_max = math.sqrt(max(acc_max2[i] / total - mean_max ** 2, 0.0) / total)
        se_mn = math.sqrt(max(acc_mn2[i] / total - mean_mn ** 2, 0.0) / total)
        norm_max = mean_max ** (1.0 / p)
        norm_mn = mean_mn ** (1.0 / p)
        out.append(MaxStats(
            n, p,
            norm_max,
            se_max * norm_max / (p * mean_max) if mean_max > 0 else 0.0,
            norm_mn,
            se_mn * norm_mn / (p * mean_mn) if mean_mn > 0 else 0.0,
            total))
    return out


def partial_sum_samples(system, observable, n_list, n_orbits: int,
                        seed: int) -> dict[int, np.ndarray]:
    """Per-orbit |S_n| samples at each n in the grid (for moment scans)."""
    n_list = sorted({int(n) for n in n_list})
    length = n_list[-1]
    cols = np.array(n_list) - 1
    chunks = []
    for _, (block,), alive in system.blocks([observable], n_orbits, length, seed, "psum"):
        if alive is not None:
            block = block[alive]
        cs = np.cumsum(block, axis=1)
        chunks.append(np.abs(cs[:, cols]))
    all_s = np.concatenate(chunks, axis=0)
    return {n: all_s[:, i] for i, n in enumerate(n_list)}


def recursion_failures(system, observable, n_values, horizon_factor: int,
                       n_orbits: int, seed: int) -> dict[int, dict]:
    """Count pointwise recursion violations on sampled orbits, per n."""
    n_values = sorted({int(n) for n in n_values})
    length = horizon_factor * n_values[-1]
    report = {}
    traces = collect_traces(system, observable, n_orbits, length, seed, tag="bs")
    for n in n_values:
        mn, m2n, cn = bs_recursion_batch(traces, n, horizon_factor * n)
        bad = int(np.sum(mn > m2n + cn + BS_SLACK))
        report[n] = {"orbits": traces.shape[0], "violations": bad,
                     "max_slack": float(np.max(mn - m2n - cn))}
    return report

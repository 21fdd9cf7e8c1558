"""Batched orbit engines producing observable traces for the estimators.

Orbits are simulated in fixed-size batches; every batch draws from its own
counter-based stream keyed by (seed, tag, batch index), so results are
bit-identical for any worker count and independent of how batches are
scheduled.  Tower orbits realize the symbol-stream picture: a batch holds
one int32 symbol stream per orbit (K past symbols, then the current
cylinder, then i.i.d. future symbols) and the tower map advances a
(position, level) pair along it.
"""

from __future__ import annotations

import numpy as np
from scipy.signal import lfilter

from .errors import ParameterOutOfRange
from .sampler import Observable, TowerKernel
from .streams import stream
from .tower import TowerSchema

TOWER_BATCH = 4096
BILLIARD_BATCH = 65536


def _draw_symbols(cdf: np.ndarray, u: np.ndarray) -> np.ndarray:
    idx = np.searchsorted(cdf, u, side="right")
    return np.minimum(idx, len(cdf) - 1).astype(np.int32)


def draw_symbol_streams(schema: TowerSchema, b: int, width: int,
                        rng: np.random.Generator):
    """Draw b orbit streams of the given width plus initial levels.

    Layout per orbit: indices 0..K-1 hold the past (index K-1 is the most
    recent symbol), index K the current base cylinder (column-weighted),
    and the rest i.i.d. future symbols.  The initial level is uniform
    below the current return time.
    """
    K = schema.past_depth
    sym = np.empty((b, width), dtype=np.int32)
    u_col = rng.random(b)
    u_lvl = rng.random(b)
    u_sym = rng.random((b, width - 1))
    sym[:, K] = _draw_symbols(schema.column_cdf, u_col)
    rest = _draw_symbols(schema.branch_cdf, u_sym)
    sym[:, :K] = rest[:, :K]
    sym[:, K + 1:] = rest[:, K:]
    level0 = (u_lvl * schema.returns[sym[:, K]]).astype(np.int64)
    return sym, level0


def window_values_t(kernel: TowerKernel, sym_t: np.ndarray) -> np.ndarray | None:
    """Symbol-window part of the observable at every stream position.

    ``sym_t`` has shape (width, b).  Returns W with
    W[pos] = sum_k fc[k] a(sym[pos+k]) + sum_k pc[k-1] a(sym[pos-k]) + const,
    valid wherever the window fits inside the stream.  None when the
    kernel has no symbol part (the caller folds in the constant).

    Geometric coefficient windows use a sliding-window recursion
    (multiplies only, so roundoff stays damped); other kernels fall back
    to one shifted-slab accumulation per nonzero coefficient.
    """
    fc = kernel.future_coefs
    pc = kernel.past_coefs
    has_fut = len(fc) > 0 and bool(np.any(fc))
    has_past = len(pc) > 0 and bool(np.any(pc))
    if not has_fut and not has_past:
        return None
    A = kernel.symbol_values[sym_t]
    width, b = A.shape
    W = np.full((width, b), kernel.const, dtype=np.float64)

    if has_fut:
        D = len(fc) - 1
        fr = kernel.fut_ratio
        if fr is not None and D >= 1:
            # F[j] = fc0*A[j] + fr*F[j+1] - fc0*fr^(D+1)*A[j+D+1]: a first-order
            # recursion driven by G[j] = fc0*A[j] - tail*A[j+D+1], run right to
            # left from an exactly initialized boundary column.
            fc0 = fc[0]
            tail = fc0 * fr ** (D + 1)
            j0 = width - D - 1
            G = fc0 * A[:j0]
            G -= tail * A[D + 1:j0 + D + 1]
            f_boundary = fc @ A[j0:j0 + D + 1]
            zi = (fr * f_boundary)[None, :]
            F, _ = lfilter([1.0], [1.0, -fr], G[::-1], axis=0, zi=zi)
            W[:j0] += F[::-1]
            W[j0] += f_boundary
        else:
            for k in range(D + 1):
                if fc[k] != 0.0:
                    W[:width - k] += fc[k] * A[k:]

    if has_past:
        Kp = len(pc)
        pr = kernel.past_ratio
        if pr is not None and Kp >= 2:
            # P[j] = pc0*A[j-1] + pr*P[j-1] - pc0*pr^Kp*A[j-1-Kp], left to right
            # from the exact window at column Kp.
            pc0 = pc[0]
            tail = pc0 * pr ** Kp
            p_boundary = pc @ A[:Kp][::-1]
            if width > Kp + 1:
                H = pc0 * A[Kp:width - 1]
                H -= tail * A[:width - 1 - Kp]
                zi = (pr * p_boundary)[None, :]
                P, _ = lfilter([1.0], [1.0, -pr], H, axis=0, zi=zi)
                W[Kp + 1:] += P
            W[Kp] += p_boundary
        else:
            for k in range(1, Kp + 1):
                if pc[k - 1] != 0.0:
                    W[k:] += pc[k - 1] * A[:width - k]
    return W


def _require_tower_kernel(obs: Observable) -> TowerKernel:
    if obs.domain != "tower" or obs.kernel is None:
        raise ParameterOutOfRange(
            f"observable {obs.kind!r} has no tower kernel; the batched engine "
            "supports the canonical tower observables")
    return obs.kernel


def tower_blocks(schema: TowerSchema, observables, n_orbits: int, length: int,
                 seed: int, tag: str, record=None, batch: int = TOWER_BATCH):
    """Yield (first orbit index, [per-observable value blocks]).

    Each block has shape (orbits_in_batch, length) — or
    (orbits_in_batch, len(record)) when ``record`` lists the only steps
    that need values.  Blocks arrive in orbit order.
    """
    kernels = [_require_tower_kernel(o) for o in observables]
    depth = max((len(k.future_coefs) for k in kernels), default=1)
    width = schema.past_depth + length + depth + 2
    record_cols = None
    if record is not None:
        record_cols = {int(s): i for i, s in enumerate(record)}
        if record_cols and (min(record_cols) < 0 or max(record_cols) >= length):
            raise ParameterOutOfRange("recorded steps must lie in [0, length)")
    K = schema.past_depth
    returns32 = schema.returns.astype(np.int32)

    done = 0
    batch_index = 0
    while done < n_orbits:
        b = min(batch, n_orbits - done)
        rng = stream(seed, tag, batch_index)
        sym, level = draw_symbol_streams(schema, b, width, rng)
        sym_t = np.ascontiguousarray(sym.T)
        del sym
        r_t = returns32[sym_t]
        Ws = [window_values_t(k, sym_t) for k in kernels]
        n_cols = length if record_cols is None else len(record_cols)
        outs = [np.empty((b, n_cols), dtype=np.float64) for _ in kernels]
        rows = np.arange(b)
        pos = np.full(b, K, dtype=np.int64)
        for t in range(length):
            col = t if record_cols is None else record_cols.get(t)
            if col is not None:
                for out, W, k in zip(outs, Ws, kernels):
                    if W is None:
                        vals = np.full(b, k.const)
                    else:
                        vals = W[pos, rows]
                    if k.level_weight != 0.0:
                        vals = vals + k.level_weight * (level == 0)
                    out[:, col] = vals
            level = level + 1
            wrapped = level >= r_t[pos, rows]
            pos = pos + wrapped
            level = np.where(wrapped, 0, level)
        yield done, outs
        done += b
        batch_index += 1


def tower_state_blocks(schema: TowerSchema, n_orbits: int, length: int,
                       seed: int, tag: str, batch: int = TOWER_BATCH):
    """Yield (first index, branch, level) arrays of the state after `length` steps.

    Used by invariance checks that histogram the (branch, level) law.
    """
    width = schema.past_depth + length + 2
    K = schema.past_depth
    done = 0
    batch_index = 0
    while done < n_orbits:
        b = min(batch, n_orbits - done)
        rng = stream(seed, tag, batch_index)
        sym, level = draw_symbol_streams(schema, b, width, rng)
        rows = np.arange(b)
        pos = np.full(b, K, dtype=np.int64)
        r_all = schema.returns[sym]
        for _ in range(length):
            level = level + 1
            wrapped = level >= r_all[rows, pos]
            pos = pos + wrapped
            level = np.where(wrapped, 0, level)
        yield done, sym[rows, pos], level
        done += b
        batch_index += 1

"""Rate families and their fits on measured decay curves.

Two families: polynomial n^-beta and stretched exponential
exp(-tau n^omega).  The deviation-rate variants are
r'(eps, n) = eps^-p n^-beta (needing p > max(2, 2 beta)) and
r'(eps, n) = exp(-tau' eps^omega n^(omega/2)) with tau' fitted, never
derived: the theory guarantees existence of some positive tau' but gives
no computable value.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientData, ParameterOutOfRange, PNotAdmissible, ZeroValues
from .streams import stream

DEFAULT_N_MIN = 16
BOOTSTRAP_SAMPLES = 200
#: probability values at or above this sit in the no-decay plateau and
#: carry no rate information; fits of probability curves drop them
PLATEAU_CUT = 0.5


@dataclass
class RateModel:
    """A rate family member, either declared or fitted to data."""

    kind: str                      # "polynomial" | "stretched"
    beta: float | None = None
    p: float | None = None         # moment index for the polynomial r'
    tau: float | None = None
    omega: float | None = None
    tau_prime: float | None = None
    fitted: bool = False
    fit_window: tuple[int, int] | None = None
    ci: dict = field(default_factory=dict)
    residual_norm: float | None = None

    def __post_init__(self):
        if self.kind == "polynomial":
            if self.beta is None or self.beta <= 0:
                raise ParameterOutOfRange(f"polynomial rate needs beta > 0, got {self.beta}")
        elif self.kind == "stretched":
            if self.tau is None or self.tau <= 0:
                raise ParameterOutOfRange(f"stretched rate needs tau > 0, got {self.tau}")
            if self.omega is None or not (0.0 < self.omega <= 1.0):
                raise ParameterOutOfRange(f"stretched rate needs omega in (0,1], got {self.omega}")
        else:
            raise ParameterOutOfRange(f"unknown rate kind {self.kind!r}")

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "fitted": self.fitted}
        for k in ("beta", "p", "tau", "omega", "tau_prime", "residual_norm"):
            v = getattr(self, k)
            if v is not None:
                d[k] = v
        if self.fit_window:
            d["fit_window"] = list(self.fit_window)
        if self.ci:
            d["ci"] = self.ci
        return d

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RateModel":
        return cls(kind=d["kind"], beta=d.get("beta"), p=d.get("p"),
                   tau=d.get("tau"), omega=d.get("omega"),
                   tau_prime=d.get("tau_prime"), fitted=d.get("fitted", False),
                   fit_window=tuple(d["fit_window"]) if d.get("fit_window") else None,
                   ci=d.get("ci", {}))


def r_of_n(model: RateModel, n) -> float:
    """The plain rate: n^-beta or exp(-tau n^omega)."""
    n = np.asarray(n, dtype=float)
    if np.any(n < 1):
        raise ParameterOutOfRange("n must be >= 1")
    if model.kind == "polynomial":
        out = n ** (-model.beta)
    else:
        out = np.exp(-model.tau * n ** model.omega)
    return float(out) if out.ndim == 0 else out


def r_prime(model: RateModel, epsilon: float, n) -> float:
    """The deviation rate r'(eps, n) of the family.

    Polynomial: eps^-p n^-beta with p > max(2, 2 beta) enforced.
    Stretched: exp(-tau' eps^omega n^(omega/2)) using the fitted tau'.
    """
    if epsilon <= 0:
        raise ParameterOutOfRange(f"epsilon {epsilon} must be > 0")
    n = np.asarray(n, dtype=float)
    if np.any(n < 1):
        raise ParameterOutOfRange("n must be >= 1")
    if model.kind == "polynomial":
        if model.p is None or model.p <= max(2.0, 2.0 * model.beta):
            raise PNotAdmissible(
                f"p={model.p} not admissible for beta={model.beta}; "
                f"need p > {max(2.0, 2.0 * model.beta)}")
        out = epsilon ** (-model.p) * n ** (-model.beta)
    else:
        tp = model.tau_prime
        if tp is None or tp <= 0:
            raise ParameterOutOfRange("stretched r' needs a fitted tau_prime > 0")
        out = np.exp(-tp * epsilon ** model.omega * n ** (model.omega / 2.0))
    return float(out) if out.ndim == 0 else out


def omega_prime(omega: float) -> float:
    """Exponent degradation omega -> omega/(1+omega) from stable-leaf averaging."""
    if not (0.0 < omega <= 1.0):
        raise ParameterOutOfRange(f"omega {omega} outside (0, 1]")
    return omega / (1.0 + omega)


def _fit_points(estimate, n_min, n_max, need_below_one=False):
    """Select usable points: inside the window, positive, off the plateau
    (for probability curves) and more than 3 stderr away from zero."""
    ns = estimate.ns()
    vals = estimate.values()
    errs = estimate.stderrs()
    in_window = (ns >= n_min) & (ns <= n_max)
    if in_window.sum() < 4:
        raise InsufficientData("fewer than 4 points in the window")
    positive = in_window & (vals > 0.0)
    if positive.sum() < 4:
        raise ZeroValues("fewer than 4 positive points in the window")
    keep = positive & (vals > 3.0 * errs)
    if estimate.meta.get("probability"):
        keep &= vals < PLATEAU_CUT
    if need_below_one and np.any(vals[keep] >= 1.0):
        raise ParameterOutOfRange("stretched fit needs all window values < 1")
    if keep.sum() < 4:
        raise InsufficientData("fewer than 4 usable points in the window")
    return ns[keep], vals[keep], errs[keep]


def _wls(x, y, w):
    """Weighted least squares line fit; returns (slope, intercept)."""
    w = np.asarray(w, dtype=float)
    sw = w.sum()
    xm = (w * x).sum() / sw
    ym = (w * y).sum() / sw
    sxx = (w * (x - xm) ** 2).sum()
    if sxx == 0:
        raise InsufficientData("degenerate abscissas in fit window")
    slope = (w * (x - xm) * (y - ym)).sum() / sxx
    return slope, ym - slope * xm


def _weights(errs):
    # spec'd weighting 1/stderr^2; exact inputs (stderr 0) fall back to OLS
    if np.all(errs > 0):
        return 1.0 / errs ** 2
    return np.ones_like(errs)


def _bootstrap(estimate, ns_used, refit, seed=1234):
    """Percentile CI by parametric resampling of the selected points."""
    rng = stream(seed, "bootstrap")
    ns = estimate.ns()
    sel = np.isin(ns, ns_used)
    vals = estimate.values()[sel]
    errs = estimate.stderrs()[sel]
    counts = estimate.samples()[sel]
    prob = bool(estimate.meta.get("probability"))
    draws = []
    for _ in range(BOOTSTRAP_SAMPLES):
        if prob:
            resampled = rng.binomial(counts, np.clip(vals, 0.0, 1.0)) / counts
        else:
            resampled = vals + errs * rng.standard_normal(len(vals))
        try:
            draws.append(refit(ns[sel], resampled, errs))
        except (ValueError, FloatingPointError):
            continue
    if len(draws) < BOOTSTRAP_SAMPLES // 2:
        return {}
    lo, hi = np.percentile(draws, [2.5, 97.5], axis=0)
    return lo, hi


def fit_polynomial_rate(estimate, n_min: int = DEFAULT_N_MIN,
                        n_max: int | None = None, p: float | None = None) -> RateModel:
    """Fit n^-beta by weighted log-log least squares.

    beta is minus the slope of log(value) against log(n) with weights
    1/stderr^2; the prefactor is absorbed by the intercept.  The CI comes
    from parametric bootstrap over the selected points.
    """
    if n_max is None:
        n_max = int(estimate.ns().max())
    ns, vals, errs = _fit_points(estimate, n_min, n_max)
    w = _weights(errs)
    slope, intercept = _wls(np.log(ns), np.log(vals), w)
    beta = -slope
    if beta <= 0:
        beta = float(np.nextafter(0, 1))

    def refit(ns_b, vals_b, errs_b):
        good = vals_b > 0
        if good.sum() < 4:
            raise ValueError("degenerate bootstrap draw")
        s, _ = _wls(np.log(ns_b[good]), np.log(vals_b[good]), _weights(errs_b[good]))
        return -s

    boot = _bootstrap(estimate, ns, refit)
    ci = {"beta": [float(boot[0]), float(boot[1])]} if boot else {}
    resid = np.log(vals) - (intercept + slope * np.log(ns))
    return RateModel(kind="polynomial", beta=float(beta), p=p, fitted=True,
                     fit_window=(int(ns.min()), int(ns.max())), ci=ci,
                     residual_norm=float(np.sqrt(np.mean(resid ** 2))))


def fit_stretched_rate(estimate, n_min: int = DEFAULT_N_MIN,
                       n_max: int | None = None) -> RateModel:
    """Fit exp(-tau n^omega): log(-log value) is linear in log n with
    slope omega and intercept log tau."""
    if n_max is None:
        n_max = int(estimate.ns().max())
    ns, vals, errs = _fit_points(estimate, n_min, n_max, need_below_one=True)
    w = _weights(errs)
    slope, intercept = _wls(np.log(ns), np.log(-np.log(vals)), w)
    omega = min(max(slope, np.nextafter(0, 1)), 1.0)
    tau = math.exp(intercept)

    def refit(ns_b, vals_b, errs_b):
        good = (vals_b > 0) & (vals_b < 1)
        if good.sum() < 4:
            raise ValueError("degenerate bootstrap draw")
        s, icept = _wls(np.log(ns_b[good]), np.log(-np.log(vals_b[good])),
                        _weights(errs_b[good]))
        return (s, icept)

    boot = _bootstrap(estimate, ns, refit)
    ci = {}
    if boot:
        ci = {"omega": [float(boot[0][0]), float(boot[1][0])],
              "log_tau": [float(boot[0][1]), float(boot[1][1])]}
    resid = np.log(-np.log(vals)) - (intercept + slope * np.log(ns))
    return RateModel(kind="stretched", tau=float(tau), omega=float(omega),
                     fitted=True, fit_window=(int(ns.min()), int(ns.max())),
                     ci=ci, residual_norm=float(np.sqrt(np.mean(resid ** 2))))


def fit_tau_prime(estimate, epsilon: float, omega: float,
                  n_min: int = DEFAULT_N_MIN, n_max: int | None = None) -> float:
    """Least-squares tau' for r'(eps, n) = exp(-tau' eps^omega n^(omega/2)).

    Regresses -log(value) through the origin against eps^omega n^(omega/2)
    over the window; only the existence of some positive tau' is claimed.
    """
    if n_max is None:
        n_max = int(estimate.ns().max())
    ns, vals, _ = _fit_points(estimate, n_min, n_max, need_below_one=True)
    x = epsilon ** omega * np.asarray(ns, dtype=float) ** (omega / 2.0)
    y = -np.log(vals)
    tp = float((x * y).sum() / (x * x).sum())
    if tp <= 0:
        raise ParameterOutOfRange("fitted tau_prime is not positive; no stretched decay")
    return tp


def majorization_ratio(estimate, model: RateModel, epsilon: float,
                       n_min: int | None = None, n_max: int | None = None) -> float:
    """Empirical majorization constant: max over points of value / r'(eps, n).

    Zero-valued points contribute zero, so an identically zero estimate
    gives ratio 0.
    """
    ns = estimate.ns()
    vals = estimate.values()
    keep = np.ones(len(ns), dtype=bool)
    if n_min is not None:
        keep &= ns >= n_min
    if n_max is not None:
        keep &= ns <= n_max
    if not np.any(keep):
        raise InsufficientData("no points in the majorization window")
    rp = r_prime(model, epsilon, ns[keep])
    return float(np.max(vals[keep] / rp))

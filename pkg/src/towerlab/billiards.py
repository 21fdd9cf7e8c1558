"""Collision maps for the two executable tables and the family catalog.

States live in boundary coordinates (s, psi): arc length along the wall
and outgoing angle from the inward normal, |psi| <= pi/2.  The invariant
collision measure has density proportional to cos(psi) ds dpsi.  Landing
points are re-projected onto the analytic boundary every step, so long
orbits do not drift off the wall.

collide() below is the scalar reference implementation; the compiled
per-orbit loops in _billiard_kernels repeat the same arithmetic and are
cross-checked against it in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DiskTouchesWall,
    NoIntersection,
    ParameterOutOfRange,
    TangencyUnresolved,
    UnknownFamily,
)
from .sampler import Observable

T_MIN = 1e-10
TANGENT_TOL = 1e-9


@dataclass(frozen=True)
class BilliardDomain:
    """One of the executable tables, with arc-length boundary bookkeeping."""

    kind: str
    params: dict
    total_perimeter: float

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.params}

    @classmethod
    def from_dict(cls, d: dict) -> "BilliardDomain":
        kind = d.get("kind")
        if kind == "stadium":
            return stadium_domain(d["L"])
        if kind == "semidispersing":
            return semidispersing_domain(d["a"], d["b"], d["r"])
        raise ParameterOutOfRange(f"unknown billiard kind {kind!r}")

    def descriptor(self) -> dict:
        return {"kind": self.kind, **self.params,
                "perimeter": self.total_perimeter}


@dataclass
class BilliardState:
    s: float
    psi: float


def stadium_domain(L: float) -> BilliardDomain:
    """Two unit semicircles joined by two parallel segments of length L."""
    if not (L > 0):
        raise ParameterOutOfRange(f"segment length L {L} must be > 0")
    return BilliardDomain("stadium", {"L": float(L)}, 2.0 * L + 2.0 * math.pi)


def semidispersing_domain(a: float, b: float, r: float) -> BilliardDomain:
    """Rectangle a x b with one reflecting disk of radius r at the center."""
    if not (a > 0 and b > 0):
        raise ParameterOutOfRange(f"rectangle sides ({a}, {b}) must be > 0")
    if not (r > 0):
        raise ParameterOutOfRange(f"disk radius {r} must be > 0")
    clearance = min(a, b) / 2.0 - r
    if clearance <= 0:
        raise DiskTouchesWall(f"clearance {clearance} <= 0 for sides ({a}, {b}), radius {r}")
    return BilliardDomain(
        "semidispersing", {"a": float(a), "b": float(b), "r": float(r)},
        2.0 * (a + b) + 2.0 * math.pi * r)


def clearance(domain: BilliardDomain) -> float:
    if domain.kind != "semidispersing":
        raise ParameterOutOfRange("clearance is defined for semidispersing tables")
    p = domain.params
    return min(p["a"], p["b"]) / 2.0 - p["r"]


def boundary_geometry(domain: BilliardDomain, s: float):
    """(point, tangent, inward normal) at arc length s (scalar reference)."""
    s = float(s) % domain.total_perimeter
    if domain.kind == "stadium":
        L = domain.params["L"]
        h = 0.5 * L
        if s < L:
            return (-h + s, -1.0), (1.0, 0.0), (0.0, 1.0)
        if s < L + math.pi:
            al = s - L - math.pi / 2.0
            ca, sa = math.cos(al), math.sin(al)
            return (h + ca, sa), (-sa, ca), (-ca, -sa)
        if s < 2.0 * L + math.pi:
            u = s - L - math.pi
            return (h - u, 1.0), (-1.0, 0.0), (0.0, -1.0)
        al = s - 2.0 * L - math.pi + math.pi / 2.0
        ca, sa = math.cos(al), math.sin(al)
        return (-h + ca, sa), (-sa, ca), (-ca, -sa)
    a, b, r = (domain.params[k] for k in ("a", "b", "r"))
    if s < a:
        return (s, 0.0), (1.0, 0.0), (0.0, 1.0)
    if s < a + b:
        return (a, s - a), (0.0, 1.0), (-1.0, 0.0)
    if s < 2.0 * a + b:
        return (a - (s - a - b), b), (-1.0, 0.0), (0.0, -1.0)
    if s < 2.0 * a + 2.0 * b:
        return (0.0, b - (s - 2.0 * a - b)), (0.0, -1.0), (1.0, 0.0)
    u = (s - 2.0 * a - 2.0 * b) / r
    cu, su = math.cos(u), math.sin(u)
    return (0.5 * a + r * cu, 0.5 * b - r * su), (-su, -cu), (cu, -su)


def direction(domain: BilliardDomain, state: BilliardState):
    """Unit outgoing velocity of a state."""
    _, (tx, ty), (nx, ny) = boundary_geometry(domain, state.s)
    cp, sp = math.cos(state.psi), math.sin(state.psi)
    return cp * nx + sp * tx, cp * ny + sp * ty


def collide(domain: BilliardDomain, state: BilliardState) -> BilliardState:
    """Next collision of the billiard map (scalar reference path).

    Raises TangencyUnresolved when the closest intersection is tangential
    within tolerance (the caller discards and resamples the orbit) and
    NoIntersection if the ray escapes, which signals a geometry bug.
    """
    from . import _billiard_kernels as bk

    (x, y), (tx, ty), (nx, ny) = boundary_geometry(domain, state.s)
    cp, sp = math.cos(state.psi), math.sin(state.psi)
    dx = cp * nx + sp * tx
    dy = cp * ny + sp * ty
    if domain.kind == "stadium":
        x, y, dx, dy, s, psi, st = bk._stadium_step.py_func(
            domain.params["L"], x, y, dx, dy)
    else:
        x, y, dx, dy, s, psi, st = bk._semidisp_step.py_func(
            domain.params["a"], domain.params["b"], domain.params["r"], x, y, dx, dy)
    if st == bk.STATUS_TANGENT:
        raise TangencyUnresolved(f"tangential hit near s={s!r}")
    if st == bk.STATUS_LOST:
        raise NoIntersection("collision ray escaped the boundary")
    return BilliardState(s, psi)


def involution(state: BilliardState) -> BilliardState:
    """Time-reversal conjugacy (s, psi) -> (s, -psi)."""
    return BilliardState(state.s, -state.psi)


def sample_liouville(domain: BilliardDomain, rng: np.random.Generator) -> BilliardState:
    """Draw one state from the invariant collision measure.

    s is uniform in arc length; psi = arcsin(2u - 1) realizes the
    cos(psi) density by inverse CDF.
    """
    s = rng.random() * domain.total_perimeter
    psi = math.asin(2.0 * rng.random() - 1.0)
    return BilliardState(s, psi)


def sample_liouville_arrays(domain: BilliardDomain, n: int, rng: np.random.Generator):
    s = rng.random(n) * domain.total_perimeter
    psi = np.arcsin(2.0 * rng.random(n) - 1.0)
    return s, psi


def run_orbit_records(domain: BilliardDomain, s0, psi0, record_steps):
    """Compiled multi-orbit run; records (s, psi) at the listed steps.

    Returns (s_rec, psi_rec, status); dead orbits (tangency) carry NaN
    records and nonzero status.
    """
    from . import _billiard_kernels as bk

    record = np.asarray(sorted(int(k) for k in record_steps), dtype=np.int64)
    s0 = np.ascontiguousarray(s0, dtype=np.float64)
    psi0 = np.ascontiguousarray(psi0, dtype=np.float64)
    n = len(s0)
    out_s = np.empty((n, len(record)), dtype=np.float64)
    out_psi = np.empty((n, len(record)), dtype=np.float64)
    status = np.zeros(n, dtype=np.int64)
    if domain.kind == "stadium":
        args = (0, domain.params["L"], 0.0, 0.0)
    else:
        args = (1, domain.params["a"], domain.params["b"], domain.params["r"])
    bk.run_orbits(*args, s0, psi0, record, out_s, out_psi, status)
    return out_s, out_psi, status


def cos_psi_observable(domain: BilliardDomain) -> Observable:
    """Centered cos(psi): the canonical smooth billiard observable.

    The Liouville mean of cos(psi) is pi/4, subtracted exactly.
    """
    mean = math.pi / 4.0

    def evaluate(state) -> float:
        return math.cos(state.psi) - mean

    return Observable(
        evaluator=evaluate,
        regularity="hoelder(C^1 in (s, psi))",
        declared_mean=mean,
        sup_norm_bound=mean,
        kind="cos_psi",
        params={},
        kernel=None,
        domain="billiard",
        array_evaluator=lambda s, psi: np.cos(psi) - mean,
    )


def sin_psi_observable(domain: BilliardDomain) -> Observable:
    """Centered sin(psi); its Liouville mean vanishes by symmetry."""
    return Observable(
        evaluator=lambda state: math.sin(state.psi),
        regularity="hoelder(C^1 in (s, psi))",
        declared_mean=0.0,
        sup_norm_bound=1.0,
        kind="sin_psi",
        params={},
        kernel=None,
        domain="billiard",
        array_evaluator=lambda s, psi: np.sin(psi),
    )


@dataclass(frozen=True)
class RateCatalogEntry:
    """Predicted tower-tail and maximal-deviation exponents for a family.

    ``tail_exponent`` q means the return-time tail decays like n^-q and
    ``mld_exponent`` m means the maximal deviations decay like n^-m.
    Families without executable geometry here are catalog entries only.
    """

    family: str
    tail_exponent: float | None
    mld_exponent: float | None
    parameter_note: str

    def to_dict(self) -> dict:
        return {"family": self.family, "tail_exponent": self.tail_exponent,
                "mld_exponent": self.mld_exponent,
                "parameter_note": self.parameter_note}


_CATALOG_NOTES = {
    "stadium": "unit-radius semicircles joined by parallel segments of length L > 0; executable",
    "semidispersing": "rectangle minus strictly convex scatterers with nonvanishing curvature; executable (single centered disk)",
    "cusps": "convex-inward walls meeting at zero interior angle, nonvanishing curvature; catalog only",
    "flat_cusps": "cusps with vanishing curvature; tail exponent beta+1 with beta in (0,1) set by the flatness profile; catalog only",
    "flowers": "petals of semicircular arcs and convex-inward walls; catalog only",
    "flat_points": "dispersing table with two flat points of profile |x|^b, b > 2; catalog only",
}

CATALOG_FAMILIES = tuple(_CATALOG_NOTES)


def example_catalog(family_name: str, b: float | None = None) -> RateCatalogEntry:
    """Predicted (tail, MLD) exponents for the named billiard family.

    ``flat_points`` needs the flatness order b > 2, either as the keyword
    or inline as ``flat_points(b=6)``; its deviation exponent is
    beta = (b+2)/(b-2).
    """
    name = family_name.strip()
    if name.startswith("flat_points(") and name.endswith(")"):
        inner = name[len("flat_points("):-1]
        inner = inner.split("=")[-1]
        try:
            b = float(inner)
        except ValueError:
            raise UnknownFamily(f"cannot parse flatness order from {family_name!r}")
        name = "flat_points"
    if name not in _CATALOG_NOTES:
        raise UnknownFamily(f"no catalog entry for {family_name!r}")
    note = _CATALOG_NOTES[name]
    if name in ("stadium", "semidispersing", "cusps"):
        return RateCatalogEntry(name, 2.0, 1.0, note)
    if name == "flowers":
        return RateCatalogEntry(name, 3.0, 2.0, note)
    if name == "flat_cusps":
        return RateCatalogEntry(name, None, None, note)
    # flat points
    if b is None:
        return RateCatalogEntry(name, None, None, note)
    if not (b > 2):
        raise ParameterOutOfRange(f"flat_points needs b > 2, got {b}")
    beta = (b + 2.0) / (b - 2.0)
    return RateCatalogEntry(f"flat_points(b={b:g})", beta + 1.0, beta, note)

"""Experiment runner: config parsing, seeded execution, result persistence.

Every run writes a CSV (fixed header ``n,value,stderr,samples``, floats at
17 significant digits) plus a JSON envelope holding the fully resolved
configuration, its hash, truncation and discard diagnostics and wall
time — enough to re-run the experiment exactly.  Randomness is derived
from the mandatory seed only; the thread count never changes results.

Exit codes: 0 success, 1 oracle mismatch, 2 invalid configuration,
3 runtime error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time

import numpy as np

from . import billiards, oracle, ratefit
from .errors import ConfigInvalid, TowerlabError
from .estimators import (
    BilliardSystem,
    DecayEstimate,
    EstimatePoint,
    TowerSystem,
    cond_exp_past_norm,
    estimate_correlation,
    estimate_ld,
    estimate_mld,
    stable_diameter_sum,
)
from .martingale import exp_moment, max_norm_curve, partial_sum_samples, recursion_failures
from .sampler import canonical_observable, schema_from_tailspec, TailSpec
from .tower import TowerSchema, make_tower_schema

ENV_OUT_DIR = "TOWERLAB_OUT"

FUNCTIONALS = ("ld", "mld", "corr", "cond_exp", "stable_diam",
               "bs_check", "exp_moment", "maxnorm")

_REQUIRED = {
    "ld": ("epsilon", "n_list", "n_orbits"),
    "mld": ("epsilon", "n_list", "horizon", "n_orbits"),
    "corr": ("n_list", "n_orbits"),
    "cond_exp": ("n_list", "p", "n_orbits"),
    "stable_diam": ("n_list", "n_orbits"),
    "bs_check": ("n_list", "n_orbits"),
    "exp_moment": ("n_list", "tau_prime", "omega", "n_orbits"),
    "maxnorm": ("n_list", "p", "n_orbits"),
}


def _require(config: dict, field: str):
    if field not in config or config[field] is None:
        raise ConfigInvalid(field, "required but missing")
    return config[field]


def build_schema(system_cfg: dict) -> TowerSchema:
    theta = system_cfg.get("theta", 0.5)
    gamma = system_cfg.get("gamma", 0.5)
    past_depth = system_cfg.get("past_depth", 32)
    if "branches" in system_cfg:
        return make_tower_schema(system_cfg["branches"], theta, gamma, past_depth)
    if "tail" in system_cfg:
        t = system_cfg["tail"]
        spec = TailSpec(t.get("kind", ""), t.get("r_max", 0), beta=t.get("beta"),
                        tau=t.get("tau"), omega=t.get("omega"))
        return schema_from_tailspec(spec, theta, gamma, past_depth)
    if "schema_file" in system_cfg:
        with open(system_cfg["schema_file"]) as fh:
            return TowerSchema.from_dict(json.load(fh))
    raise ConfigInvalid("system", "tower system needs 'branches', 'tail' or 'schema_file'")


def build_system(config: dict):
    system_cfg = _require(config, "system")
    kind = system_cfg.get("type")
    if kind == "tower":
        return TowerSystem(build_schema(system_cfg))
    if kind == "billiard":
        domain = billiards.BilliardDomain.from_dict(
            {"kind": system_cfg.get("domain"),
             **{k: v for k, v in system_cfg.items() if k in ("L", "a", "b", "r")}})
        return BilliardSystem(domain)
    raise ConfigInvalid("system.type", f"must be 'tower' or 'billiard', got {kind!r}")


def build_observable(obs_cfg: dict, system):
    if not isinstance(obs_cfg, dict) or "kind" not in obs_cfg:
        raise ConfigInvalid("observable", "needs a 'kind' field")
    kind = obs_cfg["kind"]
    if isinstance(system, TowerSystem):
        return canonical_observable(
            system.schema, kind,
            theta_obs=obs_cfg.get("theta_obs", 0.5),
            depth=obs_cfg.get("depth", 16))
    if kind == "cos_psi":
        return billiards.cos_psi_observable(system.domain)
    if kind == "sin_psi":
        return billiards.sin_psi_observable(system.domain)
    raise ConfigInvalid("observable.kind", f"unknown billiard observable {kind!r}")


def _config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def _set_threads(threads: int):
    import warnings

    with warnings.catch_warnings():
        # the sandbox TBB predates what numba wants; the fallback layer is fine
        warnings.filterwarnings("ignore", message=".*TBB.*")
        import numba

        limit = numba.config.NUMBA_NUM_THREADS
        numba.set_num_threads(max(1, min(int(threads), limit)))


def run(config: dict, out_dir: str = ".") -> dict:
    """Dispatch one experiment and persist CSV + JSON envelope."""
    t0 = time.perf_counter()
    seed = _require(config, "seed")
    functional = _require(config, "functional")
    if functional not in FUNCTIONALS:
        raise ConfigInvalid("functional", f"must be one of {FUNCTIONALS}")
    for field in _REQUIRED[functional]:
        _require(config, field)
    _set_threads(config.get("threads", 1))
    system = build_system(config)
    observable = build_observable(_require(config, "observable"), system)

    n_list = [int(n) for n in config["n_list"]]
    if not n_list:
        raise ConfigInvalid("n_list", "must be nonempty")
    n_orbits = int(config["n_orbits"])

    extra_envelope: dict = {}
    if functional == "ld":
        est = estimate_ld(system, observable, float(config["epsilon"]), n_list,
                          n_orbits, seed)
    elif functional == "mld":
        est = estimate_mld(system, observable, float(config["epsilon"]), n_list,
                           int(config["horizon"]), n_orbits, seed)
    elif functional == "corr":
        psi_cfg = config.get("observable_psi", config["observable"])
        psi = build_observable(psi_cfg, system)
        est = estimate_correlation(system, observable, psi, n_list, n_orbits, seed)
    elif functional == "cond_exp":
        points = []
        p = float(config["p"])
        m_inner = int(config.get("m_inner", 64))
        for n in sorted(set(n_list)):
            r = cond_exp_past_norm(system, observable, n, p, n_orbits, seed,
                                   m_inner=m_inner)
            points.append(EstimatePoint(n, r.value, r.stderr, r.samples))
        est = DecayEstimate(points, {"kind": "cond_exp", "p": p, "m_inner": m_inner,
                                     "seed": seed, "system": system.descriptor(),
                                     "observable": observable.descriptor()})
    elif functional == "stable_diam":
        points = []
        m_inner = int(config.get("m_inner", 64))
        for n in sorted(set(n_list)):
            r = stable_diameter_sum(system, observable, n, n_orbits, seed,
                                    m_inner=m_inner)
            points.append(EstimatePoint(n, r.value, r.stderr, r.samples))
        est = DecayEstimate(points, {"kind": "stable_diam", "m_inner": m_inner,
                                     "seed": seed, "system": system.descriptor(),
                                     "observable": observable.descriptor()})
    elif functional == "bs_check":
        factor = int(config.get("horizon_factor", 12))
        report = recursion_failures(system, observable, n_list, factor, n_orbits, seed)
        points = [EstimatePoint(n, report[n]["violations"] / report[n]["orbits"],
                                0.0, report[n]["orbits"])
                  for n in sorted(report)]
        est = DecayEstimate(points, {"kind": "bs_check", "horizon_factor": factor,
                                     "seed": seed, "system": system.descriptor(),
                                     "observable": observable.descriptor()})
        extra_envelope["recursion"] = {str(n): report[n] for n in report}
    elif functional == "exp_moment":
        tau_prime = float(config["tau_prime"])
        omega = float(config["omega"])
        samples = partial_sum_samples(system, observable, n_list, n_orbits, seed)
        points = []
        for n in sorted(samples):
            x = np.exp(tau_prime * n ** (-omega / 2.0) * samples[n] ** omega)
            points.append(EstimatePoint(n, float(x.mean()),
                                        float(x.std(ddof=1) / math.sqrt(len(x))),
                                        len(x)))
        est = DecayEstimate(points, {"kind": "exp_moment", "tau_prime": tau_prime,
                                     "omega": omega, "seed": seed,
                                     "system": system.descriptor(),
                                     "observable": observable.descriptor()})
    else:  # maxnorm
        p = float(config["p"])
        stats = max_norm_curve(system, observable, p, n_list, n_orbits, seed)
        points = [EstimatePoint(s.n, s.norm_max_partial, s.stderr_max_partial,
                                s.samples) for s in stats]
        est = DecayEstimate(points, {"kind": "maxnorm", "p": p, "seed": seed,
                                     "system": system.descriptor(),
                                     "observable": observable.descriptor()})
        extra_envelope["m_n_norms"] = [
            {"n": s.n, "norm": s.norm_mn, "stderr": s.stderr_mn} for s in stats]

    os.makedirs(out_dir, exist_ok=True)
    name = config.get("out_name", functional)
    csv_path = os.path.join(out_dir, f"{name}.csv")
    json_path = os.path.join(out_dir, f"{name}.json")
    est.write_csv(csv_path)
    envelope = {
        "config": config,
        "config_sha256": _config_hash(config),
        "seed": seed,
        "functional": functional,
        "outputs": {"csv": os.path.abspath(csv_path)},
        "diagnostics": system.diagnostics(),
        "meta": _json_safe(est.meta),
        "wall_time_s": time.perf_counter() - t0,
        **_json_safe(extra_envelope),
    }
    if config.get("plot"):
        from .report import decay_figure

        fig_path = os.path.join(out_dir, f"{name}.png")
        decay_figure(est, out_path=fig_path)
        envelope["outputs"]["figure"] = os.path.abspath(fig_path)
    with open(json_path, "w") as fh:
        json.dump(envelope, fh, indent=2, sort_keys=True, default=_json_default)
    envelope["outputs"]["envelope"] = os.path.abspath(json_path)
    return envelope


def _json_safe(obj):
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    raise TypeError(f"not JSON serializable: {type(obj)}")


def compare_oracle(config: dict, corruption: float = 0.0) -> dict:
    """Run Monte Carlo and the exact oracle side by side; report z-scores.

    ``corruption`` is a test-harness hook that adds a bias to the Monte
    Carlo values before comparison (negative control for the z gate).
    """
    seed = _require(config, "seed")
    system = build_system(config)
    if not isinstance(system, TowerSystem):
        raise ConfigInvalid("system.type", "oracle comparison needs a tower system")
    schema = system.schema
    observable = build_observable(_require(config, "observable"), system)
    epsilon = float(_require(config, "epsilon"))
    n_list = [int(n) for n in _require(config, "n_list")]
    if not n_list:
        raise ConfigInvalid("n_list", "must be nonempty")
    horizon = int(config.get("horizon", 0)) or max(12, 2 * max(n_list))
    n_orbits = int(_require(config, "n_orbits"))

    rows = []
    ld = estimate_ld(system, observable, epsilon, n_list, n_orbits, seed)
    for pt in ld.points:
        exact = oracle.exact_ld(schema, observable, epsilon, pt.n)
        rows.append(_z_row("ld", pt, exact, corruption))
    mld = estimate_mld(system, observable, epsilon, n_list, horizon, n_orbits, seed)
    for pt in mld.points:
        exact = oracle.exact_mld(schema, observable, epsilon, pt.n, horizon)
        rows.append(_z_row("mld", pt, exact, corruption))
    corr = estimate_correlation(system, observable, observable, n_list, n_orbits, seed)
    for pt in corr.points:
        exact = oracle.exact_correlation(schema, observable, observable, pt.n)
        sigma = pt.stderr if pt.stderr > 0 else 1.0
        z = (pt.value + corruption - exact) / sigma
        rows.append({"functional": "corr", "n": pt.n, "mc": pt.value + corruption,
                     "exact": exact, "z": z})
    worst = max(abs(r["z"]) for r in rows)
    return {"rows": rows, "max_abs_z": worst, "ok": bool(worst <= 3.0)}


def _z_row(name, pt, exact, corruption):
    sigma = math.sqrt(max(exact * (1.0 - exact), 1e-300) / pt.samples)
    mc = pt.value + corruption
    return {"functional": name, "n": pt.n, "mc": mc, "exact": exact,
            "z": (mc - exact) / sigma}


# ---------------------------------------------------------------------------
# argument parsing

def _add_common_estimate_flags(sp):
    sp.add_argument("--config", help="JSON experiment config")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--threads", type=int)
    sp.add_argument("--out", help="output directory (default $TOWERLAB_OUT or .)")
    sp.add_argument("--functional", choices=FUNCTIONALS)
    sp.add_argument("--epsilon", type=float)
    sp.add_argument("--horizon", type=int)
    sp.add_argument("--n-list", help="comma separated n values")
    sp.add_argument("--orbits", type=int, dest="n_orbits")
    sp.add_argument("--p", type=float)
    sp.add_argument("--plot", action="store_true",
                    help="render a PNG next to the CSV")


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="towerlab",
        description="tower-model and billiard deviation-rate laboratory")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth-tower", help="build a tail schema and save it")
    sp.add_argument("--tail", choices=("polynomial", "stretched"), required=True)
    sp.add_argument("--beta", type=float)
    sp.add_argument("--tau", type=float)
    sp.add_argument("--omega", type=float)
    sp.add_argument("--r-max", type=int, required=True)
    sp.add_argument("--theta", type=float, default=0.5)
    sp.add_argument("--gamma", type=float, default=0.5)
    sp.add_argument("--past-depth", type=int, default=32)
    sp.add_argument("--out-file", required=True)

    sp = sub.add_parser("billiard", help="build a table; optionally dump an orbit")
    sp.add_argument("--domain", choices=("stadium", "semidispersing"), required=True)
    sp.add_argument("--L", type=float)
    sp.add_argument("--a", type=float)
    sp.add_argument("--b", type=float)
    sp.add_argument("--r", type=float)
    sp.add_argument("--steps", type=int, default=0, help="orbit length to dump")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out-file", help="orbit CSV (step,s,psi) or domain JSON")

    sp = sub.add_parser("estimate", help="run one functional from a config")
    _add_common_estimate_flags(sp)

    sp = sub.add_parser("fit", help="fit a rate family to an emitted CSV")
    sp.add_argument("--csv", required=True)
    sp.add_argument("--family", choices=("polynomial", "stretched"), required=True)
    sp.add_argument("--n-min", type=int, default=ratefit.DEFAULT_N_MIN)
    sp.add_argument("--n-max", type=int)
    sp.add_argument("--p", type=float)
    sp.add_argument("--probability", action="store_true",
                    help="treat values as probabilities (plateau cut applies)")
    sp.add_argument("--out-file", help="fit JSON path")
    sp.add_argument("--plot", action="store_true")

    sp = sub.add_parser("oracle-compare",
                        help="Monte Carlo vs exact enumeration z-scores")
    _add_common_estimate_flags(sp)

    sp = sub.add_parser("catalog", help="predicted rates for billiard families")
    sp.add_argument("family", nargs="?", help="e.g. stadium or flat_points(b=6)")
    sp.add_argument("--json", action="store_true", dest="as_json")

    sp = sub.add_parser("report", help="render a decay figure from a CSV")
    sp.add_argument("--csv", required=True)
    sp.add_argument("--fit", help="fit JSON to overlay")
    sp.add_argument("--out-file")
    return ap


def _merge_config(args) -> dict:
    config = {}
    if args.config:
        with open(args.config) as fh:
            config = json.load(fh)
    for key in ("seed", "threads", "functional", "epsilon", "horizon",
                "n_orbits", "p"):
        val = getattr(args, key, None)
        if val is not None:
            config[key] = val
    if getattr(args, "n_list", None):
        config["n_list"] = [int(x) for x in str(args.n_list).split(",") if x]
    if getattr(args, "plot", False):
        config["plot"] = True
    return config


def _out_dir(args) -> str:
    return args.out or os.environ.get(ENV_OUT_DIR) or "."


def _cmd_synth_tower(args) -> int:
    if args.tail == "polynomial":
        if args.beta is None:
            raise ConfigInvalid("beta", "required for polynomial tails")
        spec = TailSpec("polynomial", args.r_max, beta=args.beta)
    else:
        if args.tau is None or args.omega is None:
            raise ConfigInvalid("tau/omega", "required for stretched tails")
        spec = TailSpec("stretched", args.r_max, tau=args.tau, omega=args.omega)
    schema = schema_from_tailspec(spec, args.theta, args.gamma, args.past_depth)
    with open(args.out_file, "w") as fh:
        json.dump(schema.to_dict(), fh, indent=2, sort_keys=True)
    info = schema.tail_info or {}
    print(f"wrote {args.out_file}: {schema.n_branches} branches, "
          f"mean return {schema.mean_return:.6g}, "
          f"truncated mass {info.get('truncated_mass', 0.0):.3g}")
    return 0


def _cmd_billiard(args) -> int:
    if args.domain == "stadium":
        if args.L is None:
            raise ConfigInvalid("L", "required for the stadium")
        domain = billiards.stadium_domain(args.L)
    else:
        if None in (args.a, args.b, args.r):
            raise ConfigInvalid("a/b/r", "required for the semidispersing table")
        domain = billiards.semidispersing_domain(args.a, args.b, args.r)
    if args.steps > 0:
        if args.seed is None:
            raise ConfigInvalid("seed", "required for an orbit dump")
        if not args.out_file:
            raise ConfigInvalid("out-file", "required for an orbit dump")
        from .streams import stream

        rng = stream(args.seed, "orbit-dump")
        state = billiards.sample_liouville(domain, rng)
        with open(args.out_file, "w") as fh:
            fh.write("step,s,psi\n")
            for k in range(args.steps):
                fh.write(f"{k},{state.s:.17g},{state.psi:.17g}\n")
                state = billiards.collide(domain, state)
        print(f"wrote {args.out_file} ({args.steps} collisions, "
              f"perimeter {domain.total_perimeter:.6g})")
        return 0
    payload = json.dumps(domain.to_dict(), indent=2, sort_keys=True)
    if args.out_file:
        with open(args.out_file, "w") as fh:
            fh.write(payload + "\n")
        print(f"wrote {args.out_file}")
    else:
        print(payload)
    return 0


def _cmd_estimate(args) -> int:
    config = _merge_config(args)
    envelope = run(config, _out_dir(args))
    print(f"wrote {envelope['outputs']['csv']}")
    if "figure" in envelope["outputs"]:
        print(f"wrote {envelope['outputs']['figure']}")
    print(f"wrote {envelope['outputs']['envelope']}")
    return 0


def _cmd_fit(args) -> int:
    meta = {"probability": True} if args.probability else {}
    est = DecayEstimate.read_csv(args.csv, meta=meta)
    if args.family == "polynomial":
        model = ratefit.fit_polynomial_rate(est, n_min=args.n_min,
                                            n_max=args.n_max, p=args.p)
    else:
        model = ratefit.fit_stretched_rate(est, n_min=args.n_min, n_max=args.n_max)
    out_file = args.out_file or (os.path.splitext(args.csv)[0] + f"_{args.family}_fit.json")
    model.write_json(out_file)
    print(json.dumps(model.to_dict(), indent=2, sort_keys=True))
    print(f"wrote {out_file}")
    if args.plot:
        from .report import decay_figure

        fig = os.path.splitext(out_file)[0] + ".png"
        decay_figure(est, model, out_path=fig)
        print(f"wrote {fig}")
    return 0


def _cmd_oracle_compare(args) -> int:
    config = _merge_config(args)
    report = compare_oracle(config)
    for row in report["rows"]:
        print(f"{row['functional']:>5} n={row['n']:>4} mc={row['mc']:.6g} "
              f"exact={row['exact']:.6g} z={row['z']:+.2f}")
    print(f"max |z| = {report['max_abs_z']:.2f} -> {'OK' if report['ok'] else 'MISMATCH'}")
    out_dir = _out_dir(args)
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "oracle_compare.json"), "w") as fh:
        json.dump(_json_safe(report), fh, indent=2, sort_keys=True)
    return 0 if report["ok"] else 1


def _cmd_catalog(args) -> int:
    families = [args.family] if args.family else list(billiards.CATALOG_FAMILIES)
    entries = [billiards.example_catalog(f) for f in families]
    if args.as_json:
        print(json.dumps([e.to_dict() for e in entries], indent=2, sort_keys=True))
        return 0
    for e in entries:
        tail = f"n^-{e.tail_exponent:g}" if e.tail_exponent else "parametric"
        mld = f"n^-{e.mld_exponent:g}" if e.mld_exponent else "parametric"
        print(f"{e.family:<22} tails {tail:<10} mld {mld:<10} {e.parameter_note}")
    return 0


def _cmd_report(args) -> int:
    from .report import decay_figure

    est = DecayEstimate.read_csv(args.csv)
    model = None
    if args.fit:
        with open(args.fit) as fh:
            model = ratefit.RateModel.from_dict(json.load(fh))
    out_file = args.out_file or (os.path.splitext(args.csv)[0] + ".png")
    decay_figure(est, model, out_path=out_file)
    print(f"wrote {out_file}")
    return 0


_COMMANDS = {
    "synth-tower": _cmd_synth_tower,
    "billiard": _cmd_billiard,
    "estimate": _cmd_estimate,
    "fit": _cmd_fit,
    "oracle-compare": _cmd_oracle_compare,
    "catalog": _cmd_catalog,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigInvalid as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TowerlabError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``drcombine {simulate, probe-rates, estimate}``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import estimators as est
from .data import TwoSampleData
from .errors import ConfigurationError, DrCombineError
from .harness import (
    SAMPLE_A_ONLY,
    evaluate_family,
    format_table,
    load_config,
    nuisance_rate_probe,
    run_config_from_mapping,
    run_scenario,
    write_rate_probe,
)
from .nuisance import LearnerSpec, NuisanceSpecs
from .popgen import scenario

log = logging.getLogger("drcombine")


def _scenario_arg(value: str) -> dict:
    if value.isdigit():
        return {"scenario": int(value)}
    return load_config(value)


def cmd_simulate(args: argparse.Namespace) -> int:
    base = _scenario_arg(args.scenario)
    cfg = run_config_from_mapping(
        base,
        reps=args.reps,
        seed=args.seed,
        out=args.out,
        estimators=args.estimators,
        K=args.k,
        delta=args.delta,
        L=args.groups,
        workers=args.workers,
    )
    result = run_scenario(cfg)
    sys.stdout.write(format_table(result.summary))
    if result.failed_reps:
        log.warning("%d replications had failures and were excluded", result.failed_reps)
    return 0


def cmd_probe(args: argparse.Namespace) -> int:
    spec = scenario(args.scenario)
    grid = [int(g) for g in args.grid.split(",")]
    if args.learner == "parametric":
        ls = LearnerSpec("parametric", args.feature_map)
        K = 1
    else:
        ls = LearnerSpec("boosted_trees", pseudo_likelihood="approximate")
        K = args.k
    probe = nuisance_rate_probe(spec, grid, args.reps, NuisanceSpecs(ls, ls), K=K, L=spec.L, seed=args.seed)
    print(f"{'M':>5} {'J':>5} {'pi_error':>12} {'m_error':>12}")
    for r in probe.rows:
        print(f"{r.M:>5} {r.J:>5} {r.pi_error:>12.5g} {r.m_error:>12.5g}")
    print(f"slope(pi) = {probe.slope('pi'):.3f}  slope(m) = {probe.slope('m'):.3f}")
    if args.out:
        write_rate_probe(probe, args.out)
    return 0


def _read_table(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ConfigurationError(f"{path}: no rows")
    return {k: np.array([r[k] for r in rows]) for k in rows[0]}


def _covariates(tab: dict[str, np.ndarray], path) -> np.ndarray:
    names = sorted((k for k in tab if k.startswith("X") and k[1:].isdigit()), key=lambda k: int(k[1:]))
    if not names or names != [f"X{j}" for j in range(1, len(names) + 1)]:
        raise ConfigurationError(f"{path}: covariate columns must be X1..Xp")
    return np.column_stack([tab[k].astype(float) for k in names])


def external_data(a_path, b_path, cfg: dict) -> TwoSampleData:
    """Assemble :class:`TwoSampleData` from Sample A/B CSV files plus config keys ``J``, ``n``, ``clusters``."""
    A, B = _read_table(a_path), _read_table(b_path)
    for col in ("cluster_id", "piA"):
        if col not in A:
            raise ConfigurationError(f"{a_path}: missing column {col}")
    for col in ("cluster_id", "Y"):
        if col not in B:
            raise ConfigurationError(f"{b_path}: missing column {col}")
    if "J" not in cfg:
        raise ConfigurationError("config must give J, the number of clusters in the population")
    J = int(cfg["J"])
    cA = A["cluster_id"].astype(np.int64)
    cB = B["cluster_id"].astype(np.int64)
    if cA.min() < 0 or cB.min() < 0 or max(cA.max(), cB.max()) >= J:
        raise ConfigurationError("cluster ids must be integers in [0, J)")
    RC = np.zeros(J, dtype=bool)
    RC[cA] = True
    if cfg.get("clusters"):
        frame = _read_table(cfg["clusters"])
        piC = np.full(J, np.nan)
        piC[frame["cluster_id"].astype(np.int64)] = frame["piC"].astype(float)
        if np.isnan(piC).any():
            raise ConfigurationError("the clusters frame must list piC for every cluster 0..J-1")
    else:
        # equal-probability clusters; only grouping for cross-fitting uses piC
        piC = np.full(J, RC.sum() / J)
    piA = A["piA"].astype(float)
    n = float(cfg["n"]) if "n" in cfg else float(np.sum(1.0 / piA))
    return TwoSampleData(
        n=n,
        XA=_covariates(A, a_path),
        piA=piA,
        clusterA=cA,
        XB=_covariates(B, b_path),
        YB=B["Y"].astype(float),
        clusterB=cB,
        J=J,
        piC=piC,
        RC=RC,
        YA=A["Y"].astype(float) if "Y" in A else None,
    )


def cmd_estimate(args: argparse.Namespace) -> int:
    raw = load_config(args.config) if args.config else {}
    data = external_data(args.sample_a, args.sample_b, raw)
    design = raw.get("cluster_design", "srswor" if not raw.get("clusters") else "sampford")
    # a scenario is needed only to carry K, L and delta
    keys = {k: raw[k] for k in ("K", "L", "delta") if k in raw}
    cfg = run_config_from_mapping(
        {"scenario": 1, "cluster_design": design, **keys, **{k: v for k, v in raw.items() if k in ("estimators", "seed", "fluctuation", "feature_map", "pseudo_likelihood")}}
    )
    results = []
    for name in SAMPLE_A_ONLY:
        if name in cfg.estimators and data.YA is not None:
            results.append({"HT": est.ht, "Haj": est.hajek, "naive": est.naive}[name](data))
    for fam in cfg.families():
        results.extend(evaluate_family(data, fam, cfg, np.random.SeedSequence(cfg.seed), cfg.estimators))
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh)
        w.writerow(["estimator", "point", "se", "lo", "hi"])
        for r in results:
            lo, hi = r.ci if r.ci else ("", "")
            w.writerow([r.name, repr(r.point), "" if r.se is None else repr(r.se), lo if lo == "" else repr(lo), hi if hi == "" else repr(hi)])
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="drcombine", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="Monte Carlo study of one scenario")
    s.add_argument("--scenario", required=True, help="1..6 or a YAML config file")
    s.add_argument("--reps", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", type=Path)
    s.add_argument("--estimators", help="comma-separated estimator ids")
    s.add_argument("--k", type=int, help="folds for cross-fitted estimators")
    s.add_argument("--delta", type=float)
    s.add_argument("--groups", type=int, help="probability groups L")
    s.add_argument("--workers", type=int)
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("probe-rates", help="nuisance error versus M")
    r.add_argument("--scenario", type=int, required=True)
    r.add_argument("--grid", default="50,100,150,300")
    r.add_argument("--reps", type=int, default=3)
    r.add_argument("--seed", type=int, default=1)
    r.add_argument("--learner", choices=("parametric", "boosted"), default="boosted")
    r.add_argument("--feature-map", default="main_effects")
    r.add_argument("--k", type=int, default=5)
    r.add_argument("--out", type=Path)
    r.set_defaults(func=cmd_probe)

    e = sub.add_parser("estimate", help="apply the estimators to external Sample A/B files")
    e.add_argument("--sample-a", required=True)
    e.add_argument("--sample-b", required=True)
    e.add_argument("--config")
    e.add_argument("--out", type=Path)
    e.set_defaults(func=cmd_estimate)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (DrCombineError, OSError) as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())

"""Monte Carlo orchestration: replications, summaries, rate probe and reports.

One replication draws outcomes and both samples, then for each estimator
family (parametric, boosted with cross-fitting, boosted without) builds a fold
plan, fits the nuisance models and evaluates its estimators. All randomness
comes from :mod:`drcombine.seeding` paths below ``(seed, rep)``, so a
replication's results do not depend on which process computes it or in what
order.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import yaml

from . import estimators as est
from .crossfit import build_plan
from .data import TwoSampleData, from_draw
from .design import cluster_probs_for, draw_replication
from .errors import ConfigurationError, DrCombineError, EstimationError
from .nuisance import BoostingParams, LearnerSpec, NuisanceSpecs, fit_all_folds
from .popgen import FinitePopulation, ScenarioSpec, generate_population, scenario
from .seeding import child, stream

log = logging.getLogger(__name__)

SAMPLE_A_ONLY = ("HT", "Haj", "naive")
MODEL_BASED = ("DR1", "DR2clw", "DR2", "TMLE1", "TMLE2")
BOOSTED = ("DR1", "DR2", "TMLE1", "TMLE2")
ESTIMATOR_IDS: tuple[str, ...] = (
    SAMPLE_A_ONLY
    + MODEL_BASED
    + tuple(f"{e}.gbm5" for e in BOOSTED)
    + tuple(f"{e}.gbm1" for e in BOOSTED)
)
# learner-family index, used as a seeding path component
FAMILIES = {"param": 0, "gbm5": 1, "gbm1": 2}
FAILURE_LIMIT = 0.05


def family_of(name: str) -> str:
    if name in SAMPLE_A_ONLY:
        return "design"
    if "." in name:
        return name.split(".", 1)[1]
    return "param"


@dataclass(frozen=True)
class RunConfig:
    """Simulation settings. ``K``, ``delta`` and ``L`` apply to the cross-fitted family.

    ``L`` defaults to 4 for Sampford cluster sampling and 1 for SRSWOR.
    Parametric rows use a single fold unless ``parametric_crossfit`` is set.
    ``parametric_outcome`` overrides the parametric outcome learner (by default
    the same feature map as the selection model).
    """

    scenario: ScenarioSpec
    reps: int = 100
    estimators: tuple[str, ...] = ESTIMATOR_IDS
    seed: int = 1
    out: Optional[Path] = None
    parametric: LearnerSpec = field(default_factory=lambda: LearnerSpec("parametric", "main_effects"))
    boosted: LearnerSpec = field(
        default_factory=lambda: LearnerSpec("boosted_trees", pseudo_likelihood="approximate")
    )
    parametric_crossfit: bool = False
    parametric_outcome: Optional[LearnerSpec] = None
    fluctuation: str = "linear"
    workers: int = 1

    def __post_init__(self) -> None:
        if self.reps < 1:
            raise ConfigurationError("reps must be >= 1")
        unknown = [e for e in self.estimators if e not in ESTIMATOR_IDS]
        if unknown:
            raise ConfigurationError(f"unknown estimator ids: {', '.join(unknown)}")
        if not self.estimators:
            raise ConfigurationError("no estimators selected")
        if self.fluctuation not in ("linear", "logit"):
            raise ConfigurationError(f"unknown fluctuation {self.fluctuation!r}")

    @property
    def K(self) -> int:
        return self.scenario.K

    @property
    def L(self) -> int:
        return 1 if self.scenario.cluster_design == "srswor" else self.scenario.L

    def families(self) -> list[str]:
        seen = []
        for e in self.estimators:
            f = family_of(e)
            if f != "design" and f not in seen:
                seen.append(f)
        return seen


# --------------------------------------------------------------------------- one replication


@dataclass(frozen=True)
class RepRow:
    rep: int
    estimator: str
    point: float
    se: float  # nan when the estimator has no SE
    Ybar: float
    status: str = "ok"

    @property
    def covered(self) -> Optional[bool]:
        if math.isnan(self.se) or math.isnan(self.point):
            return None
        return abs(self.point - self.Ybar) <= est.Z95 * self.se


def family_setup(cfg: RunConfig, fam: str) -> tuple[NuisanceSpecs, int, int]:
    """Learner specs, folds and probability groups for one estimator family."""
    if fam == "param":
        K = cfg.K if cfg.parametric_crossfit else 1
        outcome = cfg.parametric if cfg.parametric_outcome is None else cfg.parametric_outcome
        return NuisanceSpecs(cfg.parametric, outcome), K, cfg.L if K > 1 else 1
    if fam == "gbm5":
        return NuisanceSpecs(cfg.boosted, cfg.boosted), cfg.K, cfg.L
    if fam == "gbm1":
        return NuisanceSpecs(cfg.boosted, cfg.boosted), 1, 1
    raise ConfigurationError(f"unknown estimator family {fam!r}")


def evaluate_family(
    data: TwoSampleData, fam: str, cfg: RunConfig, rep_seed, wanted: Sequence[str]
) -> list[est.EstimateResult]:
    specs, K, L = family_setup(cfg, fam)
    fam_idx = FAMILIES[fam]
    plan = build_plan(data.piC, data.RC, K, L, cfg.scenario.delta, stream(rep_seed, "folds", fam_idx))
    fit = fit_all_folds(data, plan, specs, child(rep_seed, 5, fam_idx))
    pred = est.predict_units(data, plan, fit)
    suffix = "" if fam == "param" else f".{fam}"
    out = []
    fluct = None
    for base in MODEL_BASED:
        name = base + suffix
        if name not in wanted:
            continue
        if base.startswith("TMLE") and fluct is None:
            fluct = est.tmle_fluctuate(data, pred, cfg.fluctuation)
        if base == "DR1":
            out.append(est.dr1(data, pred, name))
        elif base == "DR2":
            out.append(est.dr2(data, pred, name))
        elif base == "DR2clw":
            out.append(est.dr2clw(data, pred, name))
        elif base == "TMLE1":
            out.append(est.tmle1(data, pred, fluct, name))
        else:
            out.append(est.tmle2(data, pred, fluct, name))
    return out


def run_replication(pop: FinitePopulation, cfg: RunConfig, rep: int, piC=None) -> list[RepRow]:
    """All selected estimators on replication ``rep``; a failing family yields ``failed`` rows."""
    rs = child(cfg.seed, rep)
    draw = draw_replication(pop, rs, piC=piC)
    data = from_draw(pop, draw)
    results: dict[str, RepRow] = {}

    def record(r: est.EstimateResult) -> None:
        se = float("nan") if r.se is None else r.se
        results[r.name] = RepRow(rep, r.name, r.point, se, draw.Ybar)

    for name in SAMPLE_A_ONLY:
        if name in cfg.estimators:
            record({"HT": est.ht, "Haj": est.hajek, "naive": est.naive}[name](data))
    for fam in cfg.families():
        try:
            for r in evaluate_family(data, fam, cfg, rs, cfg.estimators):
                record(r)
        except DrCombineError as exc:
            log.warning("replication %d, %s estimators failed: %s", rep, fam, exc)
            for name in cfg.estimators:
                if family_of(name) == fam:
                    results[name] = RepRow(rep, name, float("nan"), float("nan"), draw.Ybar, f"failed: {exc}")
    return [results[n] for n in cfg.estimators]


# --------------------------------------------------------------------------- summaries


@dataclass(frozen=True)
class SummaryRow:
    estimator: str
    bias: float
    empSE: float
    SEhat: float  # nan when the estimator has no SE
    cover: float  # percent; nan when the estimator has no SE
    n_ok: int = 0


def summarize(rows: Iterable[RepRow], order: Sequence[str] | None = None) -> list[SummaryRow]:
    """Bias, empirical SE, mean SE estimate and coverage per estimator.

    Sums are accumulated in replication order, so the result only depends on
    the set of per-replication rows.
    """
    by: dict[str, list[RepRow]] = {}
    for r in sorted(rows, key=lambda r: r.rep):
        by.setdefault(r.estimator, []).append(r)
    names = list(order) if order is not None else list(by)
    out = []
    for name in names:
        ok = [r for r in by.get(name, []) if r.status == "ok"]
        err = np.array([r.point - r.Ybar for r in ok])
        pts = np.array([r.point for r in ok])
        ses = np.array([r.se for r in ok])
        has_se = ok and not np.isnan(ses).all()
        out.append(
            SummaryRow(
                estimator=name,
                bias=float(err.mean()) if ok else float("nan"),
                empSE=float(pts.std(ddof=1)) if len(ok) > 1 else float("nan"),
                SEhat=float(ses.mean()) if has_se else float("nan"),
                cover=100.0 * float(np.mean([r.covered for r in ok])) if has_se else float("nan"),
                n_ok=len(ok),
            )
        )
    return out


@dataclass
class RunResult:
    config: RunConfig
    rows: list[RepRow]
    summary: list[SummaryRow]
    failed_reps: int

    def by_name(self) -> dict[str, SummaryRow]:
        return {s.estimator: s for s in self.summary}

    def per_rep(self, name: str) -> list[RepRow]:
        return [r for r in self.rows if r.estimator == name]


def _worker(args):
    pop, cfg, reps, piC = args
    return [run_replication(pop, cfg, r, piC) for r in reps]


def run_scenario(cfg: RunConfig, pop: FinitePopulation | None = None) -> RunResult:
    """Run ``cfg.reps`` replications; write per-replication and summary CSVs if ``cfg.out`` is set.

    A replication in which any estimator family fails is counted as failed;
    its failed rows are excluded from the summary. More than 5% failed
    replications aborts the run.
    """
    pop = generate_population(cfg.scenario) if pop is None else pop
    piC = cluster_probs_for(pop, cfg.scenario.M, cfg.scenario.cluster_design)
    limit = FAILURE_LIMIT * cfg.reps
    reps = list(range(cfg.reps))
    if cfg.workers > 1:
        chunks = [reps[i :: cfg.workers] for i in range(cfg.workers)]
        with ProcessPoolExecutor(cfg.workers) as ex:
            parts = list(ex.map(_worker, [(pop, cfg, c, piC) for c in chunks]))
        per_rep = sorted((rr for p in parts for rr in p), key=lambda rr: rr[0].rep)
    else:
        per_rep = []
        failed = 0
        for r in reps:
            rr = run_replication(pop, cfg, r, piC)
            failed += any(x.status != "ok" for x in rr)
            if failed > limit:
                raise EstimationError(f"{failed} of {cfg.reps} replications failed; aborting")
            per_rep.append(rr)
    rows = [x for rr in per_rep for x in rr]
    failed = sum(any(x.status != "ok" for x in rr) for rr in per_rep)
    if failed > limit:
        raise EstimationError(f"{failed} of {cfg.reps} replications failed; aborting")
    summary = summarize(rows, cfg.estimators)
    result = RunResult(cfg, rows, summary, failed)
    if cfg.out is not None:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        write_replications(rows, out / "replications.csv")
        emit_report(summary, out / "summary.csv")
    return result


# --------------------------------------------------------------------------- CSV / text output

REP_COLUMNS = ("rep", "estimator", "point", "se", "Ybar", "covered", "status")
REPORT_COLUMNS = ("estimator", "bias", "empSE", "SEhat", "cover")


def write_replications(rows: Sequence[RepRow], path: str | Path) -> None:
    """Per-replication rows with full-precision floats."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REP_COLUMNS)
        for r in rows:
            cov = r.covered
            w.writerow([r.rep, r.estimator, repr(r.point), repr(r.se), repr(r.Ybar), "" if cov is None else int(cov), r.status])


def read_replications(path: str | Path) -> list[RepRow]:
    with open(path, newline="") as fh:
        return [
            RepRow(int(d["rep"]), d["estimator"], float(d["point"]), float(d["se"]), float(d["Ybar"]), d["status"])
            for d in csv.DictReader(fh)
        ]


def _fmt(x: float, digits: int = 3) -> str:
    return "" if math.isnan(x) else f"{x:.{digits}f}"


def _fmt_cover(x: float) -> str:
    return "" if math.isnan(x) else str(int(round(x)))


def emit_report(rows: Sequence[SummaryRow], path: str | Path) -> Path:
    """Write ``path`` as CSV and a space-aligned text table next to it (``.txt``)."""
    if not rows:
        raise ConfigurationError("nothing to report")
    path = Path(path)
    cells = [[r.estimator, _fmt(r.bias), _fmt(r.empSE), _fmt(r.SEhat), _fmt_cover(r.cover)] for r in rows]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        w.writerows(cells)
    path.with_suffix(".txt").write_text(format_table(rows))
    return path


def format_table(rows: Sequence[SummaryRow]) -> str:
    header = ["", "bias", "empSE", "SEhat", "cover"]
    cells = [[r.estimator, _fmt(r.bias), _fmt(r.empSE), _fmt(r.SEhat), _fmt_cover(r.cover)] for r in rows]
    widths = [max(len(c[i]) for c in [header] + cells) for i in range(5)]
    lines = ["  ".join(c[i].rjust(widths[i]) for i in range(5)) for c in [header] + cells]
    lines.insert(1, "-" * len(lines[0]))
    return "\n".join(lines) + "\n"


def read_report(path: str | Path) -> list[SummaryRow]:
    def num(s: str) -> float:
        return float(s) if s else float("nan")

    with open(path, newline="") as fh:
        return [
            SummaryRow(d["estimator"], num(d["bias"]), num(d["empSE"]), num(d["SEhat"]), num(d["cover"]))
            for d in csv.DictReader(fh)
        ]


# --------------------------------------------------------------------------- rate probe


@dataclass(frozen=True)
class RateRow:
    M: int
    J: int
    pi_error: float
    m_error: float


@dataclass(frozen=True)
class RateProbe:
    rows: tuple[RateRow, ...]

    def slope(self, which: str = "m") -> float:
        """OLS slope of log error on log M."""
        M = np.log([r.M for r in self.rows])
        e = np.log([r.m_error if which == "m" else r.pi_error for r in self.rows])
        return float(np.polyfit(M, e, 1)[0])


def nuisance_rate_probe(
    spec: ScenarioSpec,
    grid: Sequence[int],
    reps: int,
    specs: NuisanceSpecs,
    K: int = 1,
    L: int = 1,
    seed: int = 1,
) -> RateProbe:
    """Population-averaged nuisance errors of the fold-0 fits as ``M`` grows.

    The population grows with ``M`` (``J`` scaled so that ``M/J`` stays at the
    scenario's ratio), so both samples grow together. Errors are
    ``mean_pop (piB0/piB_hat - 1)^2`` and ``mean_pop (m_hat - m0)^2``, averaged
    over replications.
    """
    rows = []
    for M in grid:
        J = int(round(spec.J * M / spec.M))
        sp = spec.replace(M=M, J=J, L=min(spec.L, J))
        pop = generate_population(sp)
        piC = cluster_probs_for(pop, M, sp.cluster_design)
        pe, me = [], []
        for r in range(reps):
            rs = child(seed, M, r)
            draw = draw_replication(pop, rs, piC=piC)
            data = from_draw(pop, draw)
            plan = build_plan(piC, draw.RC, K, L if K > 1 else 1, sp.delta, stream(rs, "folds"))
            fit = fit_all_folds(data, plan, specs, child(rs, 5), folds=[0])
            pe.append(float(np.mean((pop.true_sel_prob / fit.predict_piB(0, pop.X) - 1.0) ** 2)))
            me.append(float(np.mean((fit.predict_m(0, pop.X) - pop.true_mean) ** 2)))
        rows.append(RateRow(M, J, float(np.mean(pe)), float(np.mean(me))))
        log.info("rate probe M=%d: pi error %.4g, m error %.4g", M, rows[-1].pi_error, rows[-1].m_error)
    return RateProbe(tuple(rows))


def write_rate_probe(probe: RateProbe, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["M", "J", "pi_error", "m_error"])
        for r in probe.rows:
            w.writerow([r.M, r.J, repr(r.pi_error), repr(r.m_error)])


# --------------------------------------------------------------------------- config files

_SCENARIO_KEYS = {f.name for f in dataclasses.fields(ScenarioSpec)}
_BOOST_KEYS = {f.name for f in dataclasses.fields(BoostingParams)}


def scenario_from_mapping(d: dict) -> ScenarioSpec:
    d = dict(d)
    sid = d.pop("scenario", d.pop("scenario_id", None))
    unknown = set(d) - _SCENARIO_KEYS
    if unknown:
        raise ConfigurationError(f"unknown scenario keys: {', '.join(sorted(unknown))}")
    for key in ("cont_mean", "cont_sd"):
        if key in d:
            d[key] = tuple(d[key])
    if isinstance(sid, int):
        return scenario(sid, **d)
    return ScenarioSpec(scenario_id=sid or "custom", **d)


def load_config(path: str | Path) -> dict:
    """Read a flat YAML mapping of run settings."""
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{path}: expected a mapping at top level")
    return raw


def run_config_from_mapping(d: dict, **overrides) -> RunConfig:
    """Build a :class:`RunConfig` from config-file keys.

    Scenario fields (``J``, ``M``, ``K``, ``delta``, ``L``, ...) sit at top
    level next to ``reps``, ``seed``, ``estimators``, ``out``, ``fluctuation``,
    ``workers``, ``parametric_crossfit``, ``pseudo_likelihood``,
    ``feature_map``, ``outcome_feature_map`` and boosting parameters (``n_trees``, ``max_depth``, ...).
    """
    d = {**d, **{k: v for k, v in overrides.items() if v is not None}}
    run_keys = {"reps", "seed", "estimators", "out", "fluctuation", "workers", "parametric_crossfit"}
    learner_keys = {"pseudo_likelihood", "feature_map", "outcome_feature_map", "piB_floor"}
    sc = {k: v for k, v in d.items() if k not in run_keys | learner_keys | _BOOST_KEYS}
    spec = scenario_from_mapping(sc)
    boost = BoostingParams(**{k: d[k] for k in _BOOST_KEYS if k in d})
    floor = float(d.get("piB_floor", 1e-6))
    parametric = LearnerSpec(
        "parametric", d.get("feature_map", "main_effects"), pseudo_likelihood=d.get("pseudo_likelihood", "full"), piB_floor=floor
    )
    outcome = None
    if d.get("outcome_feature_map"):
        outcome = LearnerSpec("parametric", d["outcome_feature_map"])
    boosted = LearnerSpec("boosted_trees", boosting=boost, pseudo_likelihood="approximate", piB_floor=floor)
    ests = d.get("estimators", ESTIMATOR_IDS)
    if isinstance(ests, str):
        ests = [e.strip() for e in ests.split(",") if e.strip()]
    return RunConfig(
        scenario=spec,
        reps=int(d.get("reps", 100)),
        estimators=tuple(ests),
        seed=int(d.get("seed", 1)),
        out=Path(d["out"]) if d.get("out") else None,
        parametric=parametric,
        boosted=boosted,
        parametric_crossfit=bool(d.get("parametric_crossfit", False)),
        parametric_outcome=outcome,
        fluctuation=d.get("fluctuation", "linear"),
        workers=int(d.get("workers", 1)),
    )

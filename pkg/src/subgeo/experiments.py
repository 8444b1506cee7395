"""Experiment configs, sweep execution and per-kind analysis.

A config is one JSON document validated against ``schemas/config.schema.json``
plus a few cross-field checks.  Each experiment expands into independent
runs (grid point x seed); runs never share state, so they can be farmed out
to worker processes and are reassembled in grid order.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import analysis
from .errors import ConfigError, NumericalError, PreconditionError
from .rng import derive_seed, stream
from .simulator import RunRecord, TrainConfig, run_blocks, run_sequence
from .subspace import interference
from .tasks import TaskSequence, make_sequence

KINDS = ("angle_sweep", "rank_sweep", "strategy_compare", "law_fit", "regime", "layerwise")

_TRAIN_KEYS = ("learning_rate", "steps_per_task", "strategy", "reg_lambda",
               "grad_sample_count", "energy_threshold", "adapter_reuse")


def load_schema(name: str = "config.schema.json") -> dict:
    return json.loads(resources.files("subgeo").joinpath("schemas", name).read_text("utf-8"))


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    seeds: tuple[int, ...]
    d: int = 64
    m: int = 8
    task_rank: int = 4
    singular_values: tuple[float, ...] | None = None
    target_scale: float = 1.0
    noise_sigma: float = 0.0
    ambient_noise: bool = False
    n_tasks: int | None = None
    angles: tuple[float, ...] = ()
    angle: float | None = None
    rank: int = 4
    ranks: tuple[int, ...] = ()
    strategies: tuple[dict, ...] = ()
    angle_threshold: float = 0.75
    interaction_c: float = 1.0
    n_blocks: int = 7
    angle_range: tuple[float, float] = (0.2, 1.5)
    train: dict = field(default_factory=dict)
    output_dir: str = "subgeo-out"
    embed_matrices: bool = False

    @property
    def tasks_per_run(self) -> int:
        if self.n_tasks is not None:
            return self.n_tasks
        return 5 if self.kind == "layerwise" else 2

    def train_config(self, seed: int, **overrides) -> TrainConfig:
        kw = dict(self.train)
        kw.update(overrides)
        kw.setdefault("rank", self.rank)
        return TrainConfig(seed=seed, **kw)

    def sequence(self, angles, seed: int) -> TaskSequence:
        return make_sequence(
            d=self.d, m=self.m, r=self.task_rank, consecutive_angles=list(angles),
            singular_values=self.singular_values, target_scale=self.target_scale,
            noise_sigma=self.noise_sigma, seed=seed, ambient_noise=self.ambient_noise,
        )

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        out["n_tasks"] = self.tasks_per_run
        out["train"] = self.train_config(0).to_dict()
        del out["train"]["seed"]
        if self.kind not in ("angle_sweep", "law_fit", "strategy_compare", "layerwise"):
            out["train"].pop("rank")
        return out


def _schema_key(err: jsonschema.ValidationError) -> str:
    path = ".".join(str(p) for p in err.absolute_path)
    if err.validator == "required":
        missing = err.message.split("'")[1]
        return f"{path}.{missing}" if path else missing
    if err.validator == "additionalProperties":
        extra = err.message.split("'")[1]
        return f"{path}.{extra}" if path else extra
    return path or "<root>"


def parse_config(data: dict) -> ExperimentConfig:
    """Validate a config document and apply defaults."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(data), key=lambda e: (list(e.absolute_path), e.message))
    if errors:
        err = errors[0]
        raise ConfigError(err.message, key=_schema_key(err))

    kw = {k: v for k, v in data.items()}
    for key in ("seeds", "angles", "ranks", "angle_range", "singular_values"):
        if kw.get(key) is not None:
            kw[key] = tuple(kw[key])
    if "strategies" in kw:
        kw["strategies"] = tuple(dict(s) for s in kw["strategies"])
    cfg = ExperimentConfig(**kw)
    _check_semantics(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"not valid JSON: {exc}") from exc
    return parse_config(data)


def _check_semantics(cfg: ExperimentConfig) -> None:
    if 2 * cfg.task_rank > cfg.d:
        raise ConfigError(f"need 2 * task_rank <= d, got task_rank={cfg.task_rank}, d={cfg.d}",
                          "task_rank")
    if cfg.singular_values is not None:
        if len(cfg.singular_values) != cfg.task_rank:
            raise ConfigError(f"expected {cfg.task_rank} values", "singular_values")
        if any(b > a for a, b in zip(cfg.singular_values, cfg.singular_values[1:])):
            raise ConfigError("must be sorted descending", "singular_values")
    cap = min(cfg.d, cfg.m)
    if not 1 <= cfg.rank <= cap:
        raise ConfigError(f"adapter rank must be in [1, min(d, m)] = [1, {cap}]", "rank")
    for r in cfg.ranks:
        if r > cap:
            raise ConfigError(f"adapter rank {r} exceeds min(d, m) = {cap}", "ranks")
    if cfg.kind == "layerwise":
        lo, hi = cfg.angle_range
        if lo > hi:
            raise ConfigError("lower bound exceeds upper bound", "angle_range")
        if cfg.tasks_per_run < 4:
            raise ConfigError("layerwise needs n_tasks >= 4 (three consecutive pairs per block)",
                              "n_tasks")
    try:
        cfg.train_config(0)
        for s in cfg.strategies:
            cfg.train_config(0, strategy=s["name"], reg_lambda=s.get("lambda", 0.0))
    except PreconditionError as exc:
        raise ConfigError(str(exc), "train") from exc
    labels = [strategy_label(s) for s in cfg.strategies]
    if len(set(labels)) != len(labels):
        raise ConfigError("strategy labels must be distinct", "strategies")


def strategy_label(spec: dict) -> str:
    if "label" in spec:
        return spec["label"]
    lam = spec.get("lambda")
    return spec["name"] if lam is None else f"{spec['name']}(lambda={lam:g})"


@dataclass(frozen=True)
class RunUnit:
    run_id: str
    seed: int
    rank: int
    strategy: str
    reg_lambda: float
    label: str
    grid: dict
    angles: tuple[float, ...] = ()


@dataclass
class RunResult:
    unit: RunUnit
    record: RunRecord
    sequences: list[dict]


def expand_runs(cfg: ExperimentConfig) -> list[RunUnit]:
    """All (grid point, seed) runs of an experiment, in report order."""
    t = cfg.tasks_per_run
    base = cfg.train_config(0)
    units: list[tuple[dict, dict]] = []
    if cfg.kind in ("angle_sweep", "law_fit"):
        for a in cfg.angles:
            units.append(({"angle": a}, {"rank": cfg.rank, "angles": (a,) * (t - 1)}))
    elif cfg.kind == "rank_sweep":
        for r in cfg.ranks:
            units.append(({"rank": r}, {"rank": r, "angles": (cfg.angle,) * (t - 1)}))
    elif cfg.kind == "strategy_compare":
        for s in cfg.strategies:
            units.append(({"strategy": strategy_label(s)},
                          {"rank": cfg.rank, "strategy": s["name"],
                           "reg_lambda": s.get("lambda", base.reg_lambda),
                           "label": strategy_label(s), "angles": (cfg.angle,) * (t - 1)}))
    elif cfg.kind == "regime":
        for a in cfg.angles:
            for r in cfg.ranks:
                units.append(({"angle": a, "rank": r}, {"rank": r, "angles": (a,) * (t - 1)}))
    elif cfg.kind == "layerwise":
        units.append(({"n_blocks": cfg.n_blocks}, {"rank": cfg.rank}))
    else:
        raise ConfigError(f"unknown kind {cfg.kind!r}", "kind")

    out = []
    for grid, spec in units:
        for seed in cfg.seeds:
            out.append(RunUnit(
                run_id=f"{len(out):04d}",
                seed=seed,
                rank=spec["rank"],
                strategy=spec.get("strategy", base.strategy),
                reg_lambda=spec.get("reg_lambda", base.reg_lambda),
                label=spec.get("label", spec.get("strategy", base.strategy)),
                grid=dict(grid, seed=seed),
                angles=tuple(spec.get("angles", ())),
            ))
    return out


def layerwise_angles(cfg: ExperimentConfig, seed: int, block: int) -> list[float]:
    lo, hi = cfg.angle_range
    return stream(seed, "experiments.layerwise", block).uniform(lo, hi, cfg.tasks_per_run - 1).tolist()


def execute(cfg: ExperimentConfig, unit: RunUnit, keep_samples: bool = False) -> RunResult:
    """Run one unit.  Every unit with the same seed sees the same task draws."""
    train = cfg.train_config(unit.seed, rank=unit.rank, strategy=unit.strategy,
                             reg_lambda=unit.reg_lambda)
    try:
        if cfg.kind == "layerwise":
            seqs = [cfg.sequence(layerwise_angles(cfg, unit.seed, b),
                                 derive_seed(unit.seed, "block", b))
                    for b in range(cfg.n_blocks)]
            record = run_blocks(seqs, train, keep_samples=keep_samples)
        else:
            seqs = [cfg.sequence(unit.angles, unit.seed)]
            record = run_sequence(seqs[0], train, keep_samples=keep_samples)
    except NumericalError as exc:
        raise NumericalError(f"run {unit.run_id} {unit.grid}: {exc}") from exc
    return RunResult(unit, record, [s.to_dict(cfg.embed_matrices) for s in seqs])


def _execute_star(args):
    return execute(*args)


def run_all(cfg: ExperimentConfig, jobs: int = 1, keep_samples: bool = False) -> list[RunResult]:
    units = expand_runs(cfg)
    if jobs <= 1 or len(units) <= 1:
        return [execute(cfg, u, keep_samples) for u in units]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_execute_star, [(cfg, u, keep_samples) for u in units]))


# ---------------------------------------------------------------- analysis


@dataclass(frozen=True)
class PairRow:
    run_id: str
    seed: int
    rank: int
    strategy: str
    task_i: int
    task_t: int
    theta_min_measured: float
    theta_min_prescribed: float
    interference: float
    forgetting_immediate: float
    forgetting_cumulative: float
    update_norm: float
    effective_rank: float


def pair_rows(results: list[RunResult]) -> list[PairRow]:
    """One row per (earlier task, later task) pair; blocks get their own run id."""
    rows = []
    for res in results:
        u = res.unit
        records = ([(u.run_id, res.record)] if not res.record.per_block or len(res.record.per_block) == 1
                   else [(f"{u.run_id}.b{k:02d}", blk) for k, blk in enumerate(res.record.per_block)])
        for run_id, rec in records:
            for i, t in rec.pairs():
                theta = float(rec.theta_min_measured[i, t])
                rows.append(PairRow(
                    run_id=run_id, seed=u.seed, rank=u.rank, strategy=u.label,
                    task_i=i + 1, task_t=t + 1,
                    theta_min_measured=theta,
                    theta_min_prescribed=float(rec.theta_min_prescribed[i, t]),
                    interference=interference(theta) if math.isfinite(theta) else math.nan,
                    forgetting_immediate=float(rec.forgetting_immediate[i, t]),
                    forgetting_cumulative=float(rec.forgetting_cumulative[i, t]),
                    update_norm=float(rec.update_norms[t]),
                    effective_rank=float(rec.effective_ranks[t]),
                ))
    rows.sort(key=lambda r: (r.run_id, r.task_t, r.task_i))
    return rows


def _finite(rows, *attrs):
    return [r for r in rows if all(math.isfinite(getattr(r, a)) for a in attrs)]


def _safe(fn, *args):
    try:
        return fn(*args)
    except PreconditionError as exc:
        return {"error": str(exc)}


def law_analysis(rows: list[PairRow], cfg: ExperimentConfig, results: list[RunResult]) -> dict:
    """Fit forgetting = alpha * interference + beta over all measured pairs."""
    usable = _finite(rows, "interference", "forgetting_immediate")
    points = [(r.interference, r.forgetting_immediate) for r in usable]
    out: dict = {"n_points": len(points)}
    fit = _safe(analysis.fit_forgetting_law, points)
    if isinstance(fit, dict):
        out["fit"] = fit
        return out
    out["fit"] = fit.to_dict()
    out["correlation_sign"] = int(np.sign(fit.pearson_r))
    xs = np.array([p[0] for p in points])
    ys = np.array([p[1] for p in points])
    pred = fit.predict(xs)
    if np.ptp(pred) > 0 and np.ptp(ys) > 0:
        pa = analysis.pearson(pred, ys)
        out["predicted_actual_r"] = pa
        out["r_squared_identity_gap"] = abs(pa**2 - fit.r_squared)

    by_angle: dict[float, list[PairRow]] = {}
    for res in results:
        a = res.unit.grid.get("angle")
        if a is not None:
            by_angle.setdefault(a, []).extend(r for r in usable if r.run_id == res.unit.run_id)
    if len(by_angle) >= 3:
        curve = [(float(np.mean([r.interference for r in rs])),
                  float(np.mean([r.forgetting_immediate for r in rs])))
                 for _, rs in sorted(by_angle.items()) if rs]
        mean_fit = _safe(analysis.fit_forgetting_law, curve)
        out["seed_mean_fit"] = mean_fit if isinstance(mean_fit, dict) else mean_fit.to_dict()
        out["curve"] = [{"angle": a, "interference": x, "forgetting_mean": y}
                        for a, (x, y) in zip(sorted(by_angle), curve)]

    per_seed = {}
    for seed in cfg.seeds:
        rs = [r for r in usable if r.seed == seed]
        if len(rs) >= 2:
            v = _safe(analysis.pearson, [r.interference for r in rs],
                      [r.forgetting_immediate for r in rs])
            per_seed[str(seed)] = v if not isinstance(v, dict) else None
    out["per_seed_pearson"] = per_seed

    # alpha = eta * L * ||Delta_t||^2 / mu, averaged over runs, for scale comparison
    theory = []
    for res in results:
        rec = res.record
        lr = rec.config["learning_rate"]
        sv = np.ones(cfg.task_rank) if cfg.singular_values is None else np.asarray(cfg.singular_values)
        for t in range(1, rec.n_tasks):
            theory.append(lr * sv[0] ** 2 * rec.update_norms[t] ** 2 / sv[-1] ** 2)
    if theory:
        out["theory_alpha_mean"] = float(np.mean(theory))
    return out


def rank_sweep_analysis(rows: list[PairRow], cfg: ExperimentConfig, results: list[RunResult]) -> dict:
    per_rank = []
    means = []
    for r in cfg.ranks:
        vals = [row.forgetting_immediate for row in rows if row.rank == r]
        eranks = [row.effective_rank for row in rows if row.rank == r and math.isfinite(row.effective_rank)]
        entry = {"rank": r, "n": len(vals), "forgetting_mean": float(np.mean(vals))}
        if len(vals) >= 2:
            entry["summary"] = analysis.summarize(vals).to_dict()
        if eranks:
            entry["effective_rank_mean"] = float(np.mean(eranks))
        per_rank.append(entry)
        means.append(float(np.mean(vals)))
    out = {"per_rank": per_rank}
    if len(means) >= 2:
        out["across_ranks"] = analysis.summarize(means).to_dict()
    return out


def compare_strategies(rows: list[PairRow], cfg: ExperimentConfig) -> dict:
    """Per-strategy forgetting summaries, with Welch and Cohen's d against vanilla.

    The reference is the first vanilla entry, or the first strategy if none is
    vanilla.  Each run contributes its mean forgetting over all pairs.
    """
    labels = [strategy_label(s) for s in cfg.strategies]
    if len(labels) < 2:
        raise ConfigError("need at least two strategies", "strategies")
    if len(cfg.seeds) < 2:
        raise ConfigError("need at least two seeds per strategy", "seeds")

    def per_run(label, attr):
        runs: dict[str, list[float]] = {}
        for r in rows:
            if r.strategy == label:
                runs.setdefault(r.run_id, []).append(getattr(r, attr))
        return [float(np.mean(v)) for _, v in sorted(runs.items())]

    names = [s["name"] for s in cfg.strategies]
    reference = labels[names.index("vanilla")] if "vanilla" in names else labels[0]
    ref_vals = per_run(reference, "forgetting_immediate")
    table = []
    for label in labels:
        vals = per_run(label, "forgetting_immediate")
        angles = [a for a in per_run(label, "theta_min_measured") if math.isfinite(a)]
        entry = {"strategy": label, "forgetting": analysis.summarize(vals).to_dict(),
                 "mean_angle": float(np.mean(angles)) if angles else None}
        if label != reference:
            welch = _safe(analysis.welch_t_test, vals, ref_vals)
            entry["vs_reference"] = {
                "reference": reference,
                "difference": float(np.mean(vals) - np.mean(ref_vals)),
                "welch": welch if isinstance(welch, dict) else
                {"t": welch.t, "p": welch.p, "df": welch.df},
                "cohens_d": _safe(analysis.cohens_d, vals, ref_vals),
            }
        table.append(entry)
    return {"reference": reference, "strategies": table}


def regime_report(rows: list[PairRow], cfg: ExperimentConfig) -> dict:
    def triples(rs):
        return [(r.rank, r.theta_min_measured, r.forgetting_immediate)
                for r in _finite(rs, "theta_min_measured", "forgetting_immediate")]

    per_seed = {}
    lows, highs = [], []
    for seed in cfg.seeds:
        res = analysis.regime_analysis(triples([r for r in rows if r.seed == seed]), cfg.angle_threshold)
        per_seed[str(seed)] = res.to_dict()
        if res.low.r is not None:
            lows.append(res.low.r)
        if res.high.r is not None:
            highs.append(res.high.r)
    pooled = analysis.regime_analysis(triples(rows), cfg.angle_threshold)
    interaction = [
        {"angle": a, "rank": r,
         "effective_rank_model": analysis.rank_angle_effective(a, r, cfg.interaction_c)}
        for a in cfg.angles for r in cfg.ranks
    ]
    return {
        "per_seed": per_seed,
        "median_low_r": float(np.median(lows)) if lows else None,
        "median_high_r": float(np.median(highs)) if highs else None,
        "pooled": pooled.to_dict(),
        "interaction_model": {"c": cfg.interaction_c, "grid": interaction},
    }


def layerwise_report(results: list[RunResult]) -> dict:
    per_seed = {}
    aggregates = []
    for res in results:
        blocks = []
        for blk in res.record.per_block:
            theta = blk.consecutive_theta_min
            x = [interference(t) if math.isfinite(t) else math.nan for t in theta]
            y = [blk.forgetting_immediate[t, t + 1] for t in range(blk.n_tasks - 1)]
            keep = [k for k in range(len(x)) if math.isfinite(x[k])]
            blocks.append(([x[k] for k in keep], [y[k] for k in keep]))
        lw = analysis.layerwise_correlation(blocks)
        per_seed[str(res.unit.seed)] = lw.to_dict()
        if lw.aggregate_r is not None:
            aggregates.append(lw.aggregate_r)
    return {"per_seed": per_seed,
            "median_aggregate_r": float(np.median(aggregates)) if aggregates else None}


def effective_rank_summary(rows: list[PairRow]) -> dict | None:
    vals = [r.effective_rank for r in rows if math.isfinite(r.effective_rank)]
    if len(vals) < 2:
        return None
    return analysis.summarize(vals).to_dict()


def analyze(cfg: ExperimentConfig, results: list[RunResult], rows: list[PairRow]) -> dict:
    out: dict = {}
    if cfg.kind in ("angle_sweep", "law_fit"):
        out["law"] = law_analysis(rows, cfg, results)
    elif cfg.kind == "rank_sweep":
        out["rank_sweep"] = rank_sweep_analysis(rows, cfg, results)
    elif cfg.kind == "strategy_compare":
        out["strategy_compare"] = compare_strategies(rows, cfg)
    elif cfg.kind == "regime":
        out["regime"] = regime_report(rows, cfg)
    elif cfg.kind == "layerwise":
        out["layerwise"] = layerwise_report(results)
    out["effective_rank"] = effective_rank_summary(rows)
    return out

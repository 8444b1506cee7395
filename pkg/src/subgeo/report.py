"""Report emission: records.csv, report.json and figures."""

from __future__ import annotations

import csv
import io
import json
import math
import time
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path

import numpy as np

from . import experiments
from .errors import PreconditionError
from .experiments import ExperimentConfig, PairRow, RunResult
from .svg import emit_scatter_svg

CSV_HEADER = ("run_id", "seed", "rank", "task_i", "task_t", "theta_min_measured",
              "theta_min_prescribed", "interference", "forgetting_immediate",
              "forgetting_cumulative", "update_norm", "effective_rank", "strategy")
FROZEN_TIMESTAMP = "1970-01-01T00:00:00Z"
PACKAGE = "subgeo"


def artifact_version() -> str:
    for dist in ("artifact", PACKAGE):
        try:
            return metadata.version(dist)
        except metadata.PackageNotFoundError:
            continue
    return "0+unknown"


def _cell(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return f"{v:.12g}" if math.isfinite(v) else "nan"


def render_csv(rows: list[PairRow]) -> str:
    if not rows:
        raise PreconditionError("no records to write")
    rows = sorted(rows, key=lambda r: (r.run_id, r.task_t, r.task_i))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in rows:
        writer.writerow([_cell(getattr(r, k)) for k in CSV_HEADER])
    return buf.getvalue()


def write_csv(rows: list[PairRow], path) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(render_csv(rows))
    return path


def read_csv(path) -> list[dict]:
    """Rows of a records file with numeric columns parsed; header must match exactly."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != CSV_HEADER:
            raise PreconditionError(f"unexpected header {header!r}")
        out = []
        for line, row in enumerate(reader, start=2):
            if len(row) != len(CSV_HEADER):
                raise PreconditionError(f"line {line}: expected {len(CSV_HEADER)} fields")
            rec = dict(zip(CSV_HEADER, row))
            try:
                for k in ("seed", "rank", "task_i", "task_t"):
                    rec[k] = int(rec[k])
                for k in CSV_HEADER[5:12]:
                    rec[k] = float(rec[k])
            except ValueError as exc:
                raise PreconditionError(f"line {line}: {exc}") from exc
            out.append(rec)
    return out


def jsonable(obj):
    """Plain JSON types; non-finite floats become null."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def build_report(cfg: ExperimentConfig, results: list[RunResult], rows: list[PairRow],
                 analysis: dict, figures: list[str], *, started: float | None,
                 finished: float | None) -> dict:
    frozen = started is None
    runs = [{
        "run_id": res.unit.run_id,
        "seed": res.unit.seed,
        "grid": res.unit.grid,
        "strategy_label": res.unit.label,
        "record": res.record.to_dict(),
        "sequences": res.sequences,
    } for res in results]
    report = {
        "artifact": {"name": PACKAGE, "version": artifact_version()},
        "created_utc": FROZEN_TIMESTAMP if frozen else
        datetime.fromtimestamp(started, timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ"),
        "wall_clock_seconds": 0.0 if frozen else round(finished - started, 6),
        "config": cfg.to_dict(),
        "n_records": len(rows),
        "runs": runs,
        "analysis": analysis,
        "figures": figures,
    }
    return jsonable(report)


def render_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True, allow_nan=False) + "\n"


# ---------------------------------------------------------------- figures


def figure_specs(cfg: ExperimentConfig, rows: list[PairRow], analysis: dict) -> list[dict]:
    """Scatter figures for one experiment kind: name, points, optional fit, labels."""
    specs = []
    ok = [r for r in rows if math.isfinite(r.interference) and math.isfinite(r.forgetting_immediate)]
    if cfg.kind in ("angle_sweep", "law_fit", "layerwise"):
        fit = analysis.get("law", {}).get("fit", {})
        line = (fit["alpha"], fit["beta"]) if "alpha" in fit else None
        specs.append({
            "name": "interference_forgetting",
            "points": [(r.interference, r.forgetting_immediate) for r in ok],
            "line": line,
            "title": "Forgetting vs interference",
            "xlabel": "1 - cos^2(theta_min)",
            "ylabel": "forgetting (immediate)",
        })
    if cfg.kind in ("rank_sweep", "regime"):
        specs.append({
            "name": "rank_forgetting",
            "points": [(math.log2(r.rank), r.forgetting_immediate) for r in rows
                       if math.isfinite(r.forgetting_immediate)],
            "line": None,
            "title": "Forgetting vs adapter rank",
            "xlabel": "log2(rank)",
            "ylabel": "forgetting (immediate)",
        })
    if cfg.kind == "regime":
        specs.append({
            "name": "angle_forgetting",
            "points": [(r.theta_min_measured, r.forgetting_immediate) for r in ok],
            "line": None,
            "title": "Forgetting vs measured minimal angle",
            "xlabel": "theta_min (rad)",
            "ylabel": "forgetting (immediate)",
        })
    if cfg.kind == "strategy_compare":
        labels = [experiments.strategy_label(s) for s in cfg.strategies]
        specs.append({
            "name": "strategy_forgetting",
            "points": [(labels.index(r.strategy), r.forgetting_immediate) for r in rows
                       if math.isfinite(r.forgetting_immediate)],
            "line": None,
            "title": "Forgetting by strategy (" + ", ".join(f"{k}={s}" for k, s in enumerate(labels)) + ")",
            "xlabel": "strategy index",
            "ylabel": "forgetting (immediate)",
        })
    return [s for s in specs if s["points"]]


def write_figures(specs: list[dict], out_dir: Path, png: bool = True) -> list[str]:
    names = []
    for spec in specs:
        name = f"{spec['name']}.svg"
        emit_scatter_svg(spec["points"], out_dir / name, spec["line"], title=spec["title"],
                         xlabel=spec["xlabel"], ylabel=spec["ylabel"])
        names.append(name)
    if png:
        names.extend(_write_pngs(specs, out_dir))
    return names


def _write_pngs(specs: list[dict], out_dir: Path) -> list[str]:
    try:
        from . import plotting
    except ImportError:
        return []
    return [plotting.scatter_png(spec, out_dir) for spec in specs]


def write_gradient_samples(results: list[RunResult], out_dir: Path) -> list[str]:
    """One CSV per (run, task) holding the d x k gradient-sample matrix."""
    names = []
    sample_dir = out_dir / "gradient_samples"
    for res in results:
        samples = res.record.gradient_samples or []
        if not samples:
            continue
        sample_dir.mkdir(parents=True, exist_ok=True)
        for t, g in enumerate(samples):
            name = f"gradient_samples/{res.unit.run_id}_task{t + 1}.csv"
            np.savetxt(out_dir / name, g, delimiter=",", fmt="%.12g")
            names.append(name)
    return names


def run_experiment(cfg: ExperimentConfig, out_dir, *, jobs: int = 1, frozen_clock: bool = False,
                   png: bool = True, dump_samples: bool = False) -> dict:
    """Run every unit of ``cfg`` and write the report files into ``out_dir``."""
    started = None if frozen_clock else time.time()
    out_dir = Path(out_dir)
    results = experiments.run_all(cfg, jobs=jobs, keep_samples=dump_samples)
    rows = experiments.pair_rows(results)
    analysis = experiments.analyze(cfg, results, rows)

    out_dir.mkdir(parents=True, exist_ok=True)
    write_csv(rows, out_dir / "records.csv")
    figures = write_figures(figure_specs(cfg, rows, analysis), out_dir, png=png)
    if dump_samples:
        figures_extra = write_gradient_samples(results, out_dir)
        analysis = dict(analysis, gradient_sample_files=figures_extra)
    finished = None if frozen_clock else time.time()
    report = build_report(cfg, results, rows, analysis, figures, started=started, finished=finished)
    (out_dir / "report.json").write_text(render_json(report), encoding="utf-8", newline="\n")
    return report

"""Run a configured scenario and write its CSV reports and manifest."""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from kinhom.errors import ConfigError, NumericalFailure
from kinhom.harness.config import ExperimentConfig
from kinhom.harness.io import atomic_write, versions, write_manifest
from kinhom.harness.scenarios import CATALOG
from kinhom.report import ConvergenceReport, ConvergenceRow


@dataclass
class RunResult:
    config: ExperimentConfig
    reports: dict
    files: list = field(default_factory=list)
    manifest: Path | None = None
    metadata: dict = field(default_factory=dict)


def _evaluate(args):
    cfg, task = args
    return CATALOG[cfg.scenario].evaluate(cfg, task)


def _validate(cfg: ExperimentConfig, scenario):
    if scenario.fields:
        if cfg.field is None:
            raise ConfigError("scenario needs a field", "experiment.field")
        if cfg.field not in scenario.fields:
            raise ConfigError(f"field {cfg.field!r} not usable here; choose from "
                              f"{', '.join(scenario.fields)}", "experiment.field")
    if cfg.field == "inline" and cfg.inline.kind == "shear" and scenario.name in (
            "cell", "diffusion", "corrector") and cfg.inline.mean != 0:
        raise ConfigError("cell problems need a mean-zero field", "field.mean")


def run(cfg: ExperimentConfig, out=None, jobs: int = 1) -> RunResult:
    """Evaluate every task, assemble one report per series, write files.

    Numerical failures propagate with ``exc.scenario`` set.
    """
    scenario = CATALOG[cfg.scenario]
    _validate(cfg, scenario)
    tasks = scenario.tasks(cfg)
    start = time.perf_counter()
    try:
        if jobs > 1 and len(tasks) > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(_evaluate, [(cfg, t) for t in tasks]))
        else:
            results = [_evaluate((cfg, t)) for t in tasks]
        rows, refs, meta = {}, {}, {}
        for res in results:
            for series, x, value in res.rows:
                rows.setdefault(series, []).append((float(x), float(value)))
            refs.update(res.refs)
            meta.update(res.meta)
        reports = {}
        for series, pts in rows.items():
            ref = float(refs.get(series, float("nan")))
            reports[series] = ConvergenceReport([ConvergenceRow(x, v, ref) for x, v in pts])
        if scenario.check is not None:
            meta.update(scenario.check(cfg, reports))
    except NumericalFailure as exc:
        exc.scenario = cfg.scenario
        raise
    wall = time.perf_counter() - start

    for series, rep in reports.items():
        rep.metadata.update(scenario=cfg.scenario, series=series, config_hash=cfg.config_hash(),
                            versions=versions(), wall_time=wall)
    result = RunResult(cfg, reports, metadata=meta)
    out_dir = Path(out if out is not None else cfg.out)
    multi = len(reports) > 1
    for series, rep in sorted(reports.items()):
        name = f"{cfg.scenario}_{_safe(series)}.csv" if multi else f"{cfg.scenario}.csv"
        result.files.append(atomic_write(out_dir / name, rep.to_csv()))
    summary = dict(meta)
    summary["extrapolated"] = {s: r.extrapolated for s, r in sorted(reports.items())}
    result.manifest = write_manifest(out_dir / f"{cfg.scenario}.manifest.json", cfg, result.files,
                                     summary, wall)
    return result


def _safe(s: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in s)


def verify(report_path, golden_path, rtol: float = 1e-9, atol: float = 1e-12) -> list[str]:
    """Compare two report CSVs row by row; returns a list of mismatch messages."""
    got = ConvergenceReport.from_csv(Path(report_path))
    want = ConvergenceReport.from_csv(Path(golden_path))
    problems = []
    if len(got.rows) != len(want.rows):
        return [f"row count {len(got.rows)} != {len(want.rows)}"]
    for i, (a, b) in enumerate(zip(got.rows, want.rows)):
        for name in ("epsilon", "value", "reference"):
            x, y = getattr(a, name), getattr(b, name)
            if x != x and y != y:
                continue
            if not abs(x - y) <= atol + rtol * abs(y):
                problems.append(f"row {i} {name}: {x!r} != {y!r}")
    return problems

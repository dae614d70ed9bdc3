"""Seeded sweeps, result files, acceptance checks, and constant calibration."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional

from daks.metrics import CSV_COLUMNS, RunMetrics, csv_row, summarize
from daks.simulator import ConfigError, ExperimentConfig, prepare, run

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

CONFIG_FIELDS = {f.name for f in dataclasses.fields(ExperimentConfig)}
SWEEP_KEYS = {"name", "n", "t_ratio", "seeds", "seed_base", "traces", "cell", "out_dir"}


class CheckError(ValueError):
    pass


@dataclass
class SweepSpec:
    n_values: list
    cells: list = field(default_factory=lambda: [{}])
    t_ratio: int = 1
    seeds: int = 1
    seed_base: int = 0
    traces: bool = True
    name: str = "sweep"
    out_dir: Optional[str] = None

    def __post_init__(self):
        if self.seeds < 1:
            raise ConfigError(f"seeds: need at least one seed per cell, got {self.seeds}")
        if not self.n_values:
            raise ConfigError("n: need at least one value")
        if self.t_ratio < 1:
            raise ConfigError(f"t_ratio: must be >= 1, got {self.t_ratio}")

    @classmethod
    def from_dict(cls, doc: dict) -> "SweepSpec":
        unknown = set(doc) - SWEEP_KEYS - CONFIG_FIELDS
        if unknown:
            raise ConfigError(f"{sorted(unknown)[0]}: unknown config field")
        if "n" not in doc:
            raise ConfigError("n: missing required field")
        n_values = doc["n"] if isinstance(doc["n"], list) else [doc["n"]]
        defaults = {k: v for k, v in doc.items() if k in CONFIG_FIELDS and k not in ("n", "t", "seed")}
        cells = []
        for cell in doc.get("cell", [{}]):
            bad = set(cell) - CONFIG_FIELDS
            if bad:
                raise ConfigError(f"cell.{sorted(bad)[0]}: unknown config field")
            cells.append({**defaults, **cell})
        spec = cls(
            n_values=[int(x) for x in n_values],
            cells=cells or [defaults],
            t_ratio=int(doc.get("t_ratio", 1)),
            seeds=int(doc.get("seeds", 1)),
            seed_base=int(doc.get("seed_base", doc.get("seed", 0))),
            traces=bool(doc.get("traces", True)),
            name=str(doc.get("name", "sweep")),
            out_dir=doc.get("out_dir"),
        )
        spec.configs()  # surfaces invalid cells now, with the field name
        return spec

    def configs(self) -> list[ExperimentConfig]:
        out = []
        for n in self.n_values:
            for cell in self.cells:
                for k in range(self.seeds):
                    try:
                        out.append(ExperimentConfig(n=n, t=self.t_ratio * n, seed=self.seed_base + k, **cell))
                    except TypeError as exc:
                        raise ConfigError(str(exc)) from None
        return out


def load_document(path) -> dict:
    path = resolve_config(path)
    text = path.read_text()
    if path.suffix == ".json":
        return json.loads(text)
    return tomllib.loads(text)


def resolve_config(name) -> Path:
    """A file path, or the name of a config shipped with the package."""
    path = Path(name)
    if path.exists():
        return path
    shipped = resources.files("daks") / "configs" / f"{name}.toml"
    if shipped.is_file():
        return Path(str(shipped))
    raise FileNotFoundError(f"no config file or shipped config named {name!r}")


def load_sweep(path, seeds: Optional[int] = None, max_rounds: Optional[int] = None) -> SweepSpec:
    doc = load_document(path)
    if seeds is not None:
        doc["seeds"] = seeds
    if max_rounds is not None:
        doc["max_rounds"] = max_rounds
    if "DAKS_SEED" in os.environ:
        doc["seed_base"] = int(os.environ["DAKS_SEED"])
    return SweepSpec.from_dict(doc)


@dataclass
class RunRecord:
    config: ExperimentConfig
    metrics: RunMetrics
    all_correct: bool
    agreement: bool
    summary: dict
    traces: list

    def row(self) -> dict:
        c = self.config
        return csv_row(c.seed, c.model, self.metrics, self.all_correct, self.agreement, c.H, c.K)


def run_one(config: ExperimentConfig, keep_traces: bool = False) -> RunRecord:
    out = run(config)
    if not out.agreement:
        log.warning("seed %d n %d: halted processors disagree: %s", config.seed, config.n, out.disagreements()[:5])
    return RunRecord(
        config=config,
        metrics=out.metrics,
        all_correct=out.all_correct,
        agreement=out.agreement,
        summary=out.summary(),
        traces=[tr.to_dict() for tr in out.traces] if keep_traces else [],
    )


def validate_inputs(configs: Iterable[ExperimentConfig]) -> None:
    """Refuse the whole sweep if any run's adversary input is invalid."""
    for c in configs:
        prepare(c)


def run_sweep(configs: list[ExperimentConfig], serial: bool = False, keep_traces: bool = False) -> list[RunRecord]:
    workers = 1 if serial else (os.cpu_count() or 1)
    if workers == 1 or len(configs) == 1:
        return [run_one(c, keep_traces) for c in configs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_one, configs, [keep_traces] * len(configs), chunksize=1))


def write_results(records: list[RunRecord], out_dir, traces: bool = True) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "runs.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        for rec in records:
            w.writerow(rec.row())
    with open(out / "outcomes.jsonl", "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec.summary, sort_keys=True) + "\n")
    if traces:
        with open(out / "traces.jsonl", "w") as fh:
            for rec in records:
                for tr in rec.traces:
                    fh.write(json.dumps({"seed": rec.config.seed, "n": rec.config.n, **tr}) + "\n")
    return out / "runs.csv"


def summary_table(records: list[RunRecord]) -> str:
    groups: dict = {}
    for rec in records:
        groups.setdefault((rec.config.model, rec.config.n), []).append(rec)
    lines = [f"{'model':>6} {'n':>6} {'runs':>5} {'rounds':>9} {'work':>11} {'msgs':>11} {'work/nlogn':>10} {'correct':>8}"]
    for (model, n), recs in sorted(groups.items()):
        done = [r for r in recs if not r.metrics.truncated]
        k = max(1, len(done))
        rounds = sum(r.metrics.rounds for r in done) / k
        work = sum(r.metrics.work for r in done) / k
        msgs = sum(r.metrics.messages for r in done) / k
        ratio = work / (n * math.log2(n)) if n > 1 else float("nan")
        correct = sum(r.all_correct for r in recs) / len(recs)
        lines.append(f"{model:>6} {n:>6} {len(recs):>5} {rounds:>9.1f} {work:>11.1f} {msgs:>11.1f} {ratio:>10.3f} {correct:>8.3f}")
    return "\n".join(lines)


# -- checks -----------------------------------------------------------------

REQUIRED = {
    "correct_fraction": ("all_correct", "truncated"),
    "agreement_fraction": ("agreement", "truncated"),
    "ratio_stability": ("n", "work", "msgs_share", "msgs_profess", "truncated"),
    "cascade": ("n", "first_enlightened_round", "last_halt_round", "truncated"),
    "rounds_bound": ("n", "rounds", "truncated"),
    "no_truncation": ("truncated",),
}


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: float
    bound: float
    detail: str = ""

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"{verdict} {self.name}: measured {self.measured:.4g} vs bound {self.bound:.4g} {self.detail}".rstrip()


def read_rows(path) -> tuple[list[dict], set]:
    path = Path(path)
    if path.is_dir():
        path = path / "runs.csv"
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
        columns = set(reader.fieldnames or ())
    return rows, columns


def _metrics_from_row(row: dict) -> RunMetrics:
    def opt(key):
        v = row.get(key, "")
        return int(v) if v not in ("", None) else None

    return RunMetrics(
        n=int(row["n"]),
        t=int(row.get("t") or row["n"]),
        rounds=int(row.get("rounds") or 0),
        time_units=int(row.get("time_units") or 0),
        work=int(row.get("work") or 0),
        msgs_share=int(row.get("msgs_share") or 0),
        msgs_profess=int(row.get("msgs_profess") or 0),
        profess_draws=int(row.get("profess_draws") or 0),
        first_enlightened_round=opt("first_enlightened_round"),
        last_halt_round=opt("last_halt_round"),
        truncated=row.get("truncated") == "1",
    )


def evaluate(criterion: dict, rows: list[dict]) -> CheckResult:
    kind = criterion["kind"]
    name = criterion.get("name", kind)
    done = [r for r in rows if r.get("truncated") != "1"]
    if kind == "no_truncation":
        cut = len(rows) - len(done)
        return CheckResult(name, cut == 0, cut, 0, "truncated runs")
    if not done:
        return CheckResult(name, False, 0, 0, "no completed runs")
    if kind in ("correct_fraction", "agreement_fraction"):
        col = "all_correct" if kind == "correct_fraction" else "agreement"
        # truncated runs count as failures here
        frac = sum(r[col] == "1" and r.get("truncated") != "1" for r in rows) / len(rows)
        return CheckResult(name, frac >= criterion["min"], frac, criterion["min"], f"over {len(rows)} runs")
    if kind == "ratio_stability":
        metrics = [_metrics_from_row(r) for r in done]
        summary = summarize(metrics, epsilon=criterion.get("epsilon"))
        spread = summary.spread(criterion["metric"], criterion["normalizer"])
        table = ", ".join(f"{n}:{v:.3f}" for n, v in summary.ratio(criterion["metric"], criterion["normalizer"]).items())
        return CheckResult(name, spread <= criterion["max"], spread, criterion["max"], f"[{table}]")
    if kind == "cascade":
        factor = criterion.get("factor", 5)
        ok = 0
        for r in done:
            m = _metrics_from_row(r)
            length = m.cascade_length()
            ok += length is not None and length <= factor * max(1, math.ceil(math.log2(m.n)))
        frac = ok / len(done)
        return CheckResult(name, frac >= criterion["min_fraction"], frac, criterion["min_fraction"], f"over {len(done)} runs")
    if kind == "rounds_bound":
        factor = criterion.get("factor", 64)
        worst = max(int(r["rounds"]) / int(r["n"]) for r in done)
        return CheckResult(name, worst <= factor, worst, factor, "max rounds/n")
    raise CheckError(f"unknown criterion kind {kind!r}")


def check(results_path, criteria_path) -> list[CheckResult]:
    rows, columns = read_rows(results_path)
    criteria = load_document(criteria_path).get("criterion", [])
    if not criteria:
        raise CheckError("criteria file lists no [[criterion]] entries")
    for crit in criteria:
        if crit.get("kind") not in REQUIRED:
            raise CheckError(f"unknown criterion kind {crit.get('kind')!r}")
        missing = [c for c in REQUIRED[crit["kind"]] if c not in columns]
        if missing:
            raise CheckError(f"results file is missing column {missing[0]!r}")
    return [evaluate(c, rows) for c in criteria]


# -- calibration --------------------------------------------------------------

CALIBRATION_COLUMNS = ("H", "K", "n", "runs", "correct_fraction", "truncated", "mean_rounds", "mean_work", "passed")


def calibrate(doc: dict, out_dir=None, serial: bool = False) -> dict:
    """Grid search over (H, K); a pair passes when every n meets ``min_correct``.

    Pairs are tried in order of increasing K, then H; the first passing pair
    is the recommendation.
    """
    hs = sorted(float(h) for h in doc.get("H", [2.0]))
    ks = sorted(float(k) for k in doc.get("K", [8.0]))
    n_values = doc["n"] if isinstance(doc["n"], list) else [doc["n"]]
    seeds = int(doc.get("seeds", 10))
    min_correct = float(doc.get("min_correct", 0.95))
    scenario = dict(doc.get("scenario", {}))
    rows, passing = [], []
    for K in ks:
        for H in hs:
            spec = SweepSpec(
                n_values=n_values,
                cells=[{**scenario, "H": H, "K": K}],
                seeds=seeds,
                seed_base=int(doc.get("seed_base", 0)),
            )
            records = run_sweep(spec.configs(), serial=serial)
            ok_pair = True
            for n in n_values:
                recs = [r for r in records if r.config.n == n]
                frac = sum(r.all_correct for r in recs) / len(recs)
                cut = sum(r.metrics.truncated for r in recs)
                passed = frac >= min_correct and cut == 0
                ok_pair &= passed
                rows.append(
                    {
                        "H": H,
                        "K": K,
                        "n": n,
                        "runs": len(recs),
                        "correct_fraction": round(frac, 4),
                        "truncated": cut,
                        "mean_rounds": round(sum(r.metrics.rounds for r in recs) / len(recs), 1),
                        "mean_work": round(sum(r.metrics.work for r in recs) / len(recs), 1),
                        "passed": int(passed),
                    }
                )
            if ok_pair:
                passing.append((H, K))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "calibration.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=CALIBRATION_COLUMNS, lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
    return {"recommended": passing[0] if passing else None, "passing": passing, "table": rows}

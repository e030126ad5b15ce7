"""Experiment orchestration: JSON configs, seeded repeats, aggregation and CSV output.

A config is a flat JSON object. Every :class:`~prunelab.pipeline.PipelineConfig`
field is a valid key, plus ``repeats``, ``name``, ``tags`` and ``out_dir``.
The keys listed in :data:`GRID_KEYS` may hold a list, in which case one
variant runs per combination. Repeat ``i`` uses seed ``seed + i``; variants
that share their original-training settings reuse one trained network per seed.
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from prunelab.errors import ConfigurationError, PruneLabError
from prunelab.pipeline import PipelineConfig, RunRecord, config_hash, load_data, run_pipeline, train_original

log = logging.getLogger(__name__)

PIPELINE_KEYS = tuple(f.name for f in fields(PipelineConfig))
EXTRA_KEYS = ("repeats", "name", "tags", "out_dir")
GRID_KEYS = ("retrain_schedule", "retrain_epochs", "warmup_frac", "method", "ratio")
# fields that only matter after original training; variants differing only here share a trained net
RETRAIN_ONLY = set(GRID_KEYS) | {"lr_max", "lr_min", "policy", "per_layer", "rounds", "shrink", "taylor_batches", "reset_momentum", "mode"}
CSV_COLUMNS = (
    "method", "schedule", "budget_epochs", "ratio", "params_down_pct", "flops_down_pct",
    "acc_mean", "acc_std", "n", "config_hash",
)
STD_NOTE = "acc_std is the sample standard deviation (n-1 denominator); accuracies in percent"


class HarnessError(PruneLabError):
    """Some repeats failed; completed records were still written."""


@dataclass
class ExperimentConfig:
    base: dict
    repeats: int = 3
    name: str = "experiment"
    tags: list = field(default_factory=list)
    out_dir: str | None = None

    def __post_init__(self):
        if self.repeats < 1:
            raise ConfigurationError(f"repeats must be >= 1, got {self.repeats}")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        for key in d:
            if key not in PIPELINE_KEYS and key not in EXTRA_KEYS:
                raise ConfigurationError(f"unknown config key {key!r}")
        for key, value in d.items():
            if isinstance(value, list) and key not in GRID_KEYS and key not in ("tags", "per_layer"):
                raise ConfigurationError(f"config key {key!r} does not accept a list")
        base = {k: v for k, v in d.items() if k in PIPELINE_KEYS}
        extra = {k: d[k] for k in EXTRA_KEYS if k in d}
        cfg = cls(base, **extra)
        cfg.variants()  # validate every combination up front
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"{path}: invalid JSON ({e})") from e
        if not isinstance(d, dict):
            raise ConfigurationError(f"{path}: top level must be a JSON object")
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        d = dict(self.base)
        d.update(repeats=self.repeats, name=self.name, tags=list(self.tags))
        return d

    @property
    def hash(self) -> str:
        return config_hash(self.to_dict())

    def variants(self) -> list[PipelineConfig]:
        grid = [(k, self.base[k]) for k in GRID_KEYS if isinstance(self.base.get(k), list)]
        out = []
        for combo in itertools.product(*(v for _, v in grid)):
            d = dict(self.base)
            d.update(zip((k for k, _ in grid), combo))
            out.append(PipelineConfig(**d))
        return out


def _training_key(cfg: PipelineConfig) -> str:
    return json.dumps({k: v for k, v in cfg.to_dict().items() if k not in RETRAIN_ONLY}, sort_keys=True)


def run_seed(variants: list[PipelineConfig], seed: int) -> list[RunRecord | str]:
    """All variants for one seed; failures come back as error strings."""
    out: list[RunRecord | str] = []
    data_cache, trained_cache = {}, {}
    for v in variants:
        v = replace(v, seed=seed)
        try:
            key = _training_key(v)
            if key not in data_cache:
                data_cache[key] = load_data(v)
            data = data_cache[key]
            trained = None
            if v.mode in ("oneshot", "iterative"):
                if key not in trained_cache:
                    s, a, _ = train_original(v, data)
                    trained_cache[key] = (s, a)
                trained = trained_cache[key]
            rec = run_pipeline(v, data, trained)
            out.append(rec)
        except PruneLabError as e:
            log.error("seed %d variant %s failed: %s", seed, v.hash, e)
            out.append(f"{v.hash} seed {seed}: {e}")
    return out


@dataclass
class RunReport:
    records: list[RunRecord]
    rows: list[dict]
    failures: list[str]
    out_dir: Path | None = None


def run(config_path, out_dir=None, workers: int = 1) -> RunReport:
    """Execute every variant x repeat of a config file and write the results.

    Writes one RunRecord JSON per (variant, repeat) under ``records/`` and
    ``aggregate.csv``. If any repeat fails the completed ones are still
    written and :class:`HarnessError` is raised afterwards.
    """
    exp = ExperimentConfig.load(config_path)
    out = Path(out_dir or exp.out_dir or "runs") / exp.name
    (out / "records").mkdir(parents=True, exist_ok=True)
    variants = exp.variants()
    base_seed = variants[0].seed
    seeds = [base_seed + i for i in range(exp.repeats)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(run_seed, [variants] * len(seeds), seeds))
    else:
        results = [run_seed(variants, s) for s in seeds]
    records, failures = [], []
    for res in results:
        for r in res:
            (failures if isinstance(r, str) else records).append(r)
    for r in records:
        (out / "records" / f"{r.config_hash}_seed{r.seed}.json").write_text(r.to_json())
    rows = aggregate(records)
    write_aggregate_csv(rows, out / "aggregate.csv")
    (out / "config.json").write_text(json.dumps({**exp.to_dict(), "config_hash": exp.hash}, indent=1, sort_keys=True))
    report = RunReport(records, rows, failures, out)
    if failures:
        raise HarnessError(f"{len(failures)} repeat(s) failed: " + "; ".join(failures))
    return report


def mean_std(values) -> tuple[float, float | None, int]:
    """Mean, sample std (``None`` for a single value) and count."""
    values = [float(v) for v in values]
    if not values:
        raise ConfigurationError("cannot aggregate an empty group")
    std = statistics.stdev(values) if len(values) > 1 else None
    return statistics.fmean(values), std, len(values)


def aggregate(records: list[RunRecord], metric: str = "test_acc") -> list[dict]:
    """One row per (method, schedule, budget, ratio, config hash), sorted by that key."""
    groups: dict[tuple, list[RunRecord]] = {}
    for r in records:
        m = r.meta
        key = (m.get("method", ""), m.get("schedule", ""), m.get("budget_epochs", 0), m.get("ratio", 0.0), r.config_hash)
        groups.setdefault(key, []).append(r)
    rows = []
    for key in sorted(groups, key=lambda k: tuple(str(x) for x in k)):
        recs = sorted(groups[key], key=lambda r: r.seed)
        mean, std, n = mean_std([100.0 * r.final[metric] for r in recs])
        pdown = [r.final.get("params_down_pct") for r in recs]
        fdown = [r.final.get("flops_down_pct") for r in recs]
        rows.append({
            "method": key[0],
            "schedule": key[1],
            "budget_epochs": key[2],
            "ratio": float(key[3]),
            "params_down_pct": statistics.fmean(pdown) if None not in pdown else None,
            "flops_down_pct": statistics.fmean(fdown) if None not in fdown else None,
            "acc_mean": mean,
            "acc_std": std,
            "n": n,
            "config_hash": key[4],
        })
    return rows


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_aggregate_csv(rows: list[dict], path):
    with open(path, "w", newline="") as f:
        f.write(f"# {STD_NOTE}; flops=2*macs\n")
        w = csv.writer(f)
        w.writerow(CSV_COLUMNS)
        for row in rows:
            w.writerow([_fmt(row.get(c)) for c in CSV_COLUMNS])


def _parse(col, text):
    if text == "":
        return None
    if col in ("budget_epochs", "n"):
        return int(text)
    if col in ("method", "schedule", "config_hash"):
        return text
    return float(text)


def read_aggregate_csv(path) -> list[dict]:
    with open(path, newline="") as f:
        lines = [ln for ln in f if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    return [{c: _parse(c, row[c]) for c in CSV_COLUMNS} for row in reader]


def load_records(directory) -> list[RunRecord]:
    paths = sorted(Path(directory).glob("**/*.json"))
    return [RunRecord.from_dict(json.loads(p.read_text())) for p in paths if p.parent.name == "records" or p.name.endswith("_record.json")]

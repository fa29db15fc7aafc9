"""Multi-seed experiment runs, result tables and average ranks."""

from __future__ import annotations

import dataclasses
import os
import time
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .data import Split, prepare
from .model import VARIANTS, ModelSpec, count_params, predict
from .training import LOSS_KINDS, TrainConfig, train


def rmse(preds, targets) -> float:
    preds, targets = np.asarray(preds, dtype=float), np.asarray(targets, dtype=float)
    if preds.shape != targets.shape or preds.size == 0:
        raise ValueError("predictions and targets must be non-empty and of equal length")
    err = preds - targets
    return float(np.sqrt((err * err).mean()))


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    path: str
    target: str
    encoding: dict | None = None
    ratio: float = 0.7
    split_seed: int = 0
    delimiter: str = ","
    train_overrides: dict = field(default_factory=dict)  # e.g. a longer schedule


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSpec
    variants: tuple[str, ...] = VARIANTS
    Ds: tuple[int, ...] = (2, 4, 8)
    P: int = 5
    losses: tuple[str, ...] = ("L2",)
    seeds: tuple[int, ...] = tuple(range(1, 11))
    train: TrainConfig = TrainConfig()
    workers: int = 1

    def __post_init__(self):
        if not self.seeds or len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be non-empty and distinct")
        if not self.variants:
            raise ValueError("at least one variant is required")
        for kind in self.losses:
            if kind not in LOSS_KINDS:
                raise ValueError(f"unknown loss kind {kind!r}")
        if any(d < 1 for d in self.Ds):
            raise ValueError("D values must be positive")

    def train_config(self, loss: str, seed: int) -> TrainConfig:
        return dataclasses.replace(self.train, **self.dataset.train_overrides, loss=loss, seed=seed)


@dataclass(frozen=True)
class RunResult:
    dataset: str
    variant: str
    D: int
    loss: str
    seed: int
    rmse: float  # test set, z-scored target units
    n_params: int
    seconds: float = field(default=0.0, compare=False)

    @property
    def key(self):
        return (self.dataset, VARIANTS.index(self.variant), self.D, LOSS_KINDS.index(self.loss), self.seed)

    @property
    def label(self) -> str:
        return ModelSpec(variant=self.variant, P=1, D=self.D, M=self.D).label


class SuiteError(RuntimeError):
    """A run failed; ``partial`` holds the results that did complete."""

    def __init__(self, message, partial):
        super().__init__(message)
        self.partial = partial


def _combinations(cfg: ExperimentConfig, M: int):
    for variant in cfg.variants:
        spec0 = ModelSpec(variant=variant, P=cfg.P, D=cfg.Ds[0], M=M)
        Ds = cfg.Ds if spec0.projected else (M,)
        for D in Ds:
            for loss in cfg.losses:
                for seed in cfg.seeds:
                    yield ModelSpec(variant=variant, P=cfg.P, D=D, M=M), loss, seed


_WORKER_DATA: Split | None = None


def _init_worker(data):
    global _WORKER_DATA
    _WORKER_DATA = data


def _run_one(name: str, spec: ModelSpec, tcfg: TrainConfig, data: Split | None = None) -> RunResult:
    data = data if data is not None else _WORKER_DATA
    t0 = time.perf_counter()
    model, _ = train(data, spec, tcfg)
    err = rmse(predict(model, data.test.features), data.test.targets)
    return RunResult(name, spec.variant, spec.D, tcfg.loss, tcfg.seed, err, count_params(spec), time.perf_counter() - t0)


def worker_count(requested: int) -> int:
    """``requested`` capped by the FAME_THREADS environment variable."""
    cap = os.environ.get("FAME_THREADS")
    n = max(1, int(requested))
    if cap:
        n = min(n, max(1, int(cap)))
    return n


def run_suite(cfg: ExperimentConfig, data: Split | None = None) -> list[RunResult]:
    """Train every (variant, D, loss, seed) combination on one fixed split.

    Results come back sorted by key regardless of completion order. On failure
    a SuiteError names the combination and carries the finished results.
    """
    ds = cfg.dataset
    if data is None:
        data, _ = prepare(ds.path, ds.target, ds.encoding, ds.ratio, ds.split_seed, ds.delimiter)
    M = data.train.features.shape[1]
    jobs = [(spec, cfg.train_config(loss, seed)) for spec, loss, seed in _combinations(cfg, M)]
    results: list[RunResult] = []

    def fail(spec, tcfg, exc):
        what = f"{ds.name}: {spec.label} loss={tcfg.loss} seed={tcfg.seed}"
        return SuiteError(f"run {what} failed: {exc}", sorted(results, key=lambda r: r.key))

    workers = worker_count(cfg.workers)
    if workers == 1:
        for spec, tcfg in jobs:
            try:
                results.append(_run_one(ds.name, spec, tcfg, data))
            except Exception as exc:
                raise fail(spec, tcfg, exc) from exc
    else:
        with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(data,)) as pool:
            futures = [(spec, tcfg, pool.submit(_run_one, ds.name, spec, tcfg)) for spec, tcfg in jobs]
            first = None
            for spec, tcfg, fut in futures:
                try:
                    results.append(fut.result())
                except Exception as exc:
                    first = first or (spec, tcfg, exc)
            if first:
                raise fail(*first) from first[2]
    return sorted(results, key=lambda r: r.key)


# --- aggregation -------------------------------------------------------------------

@dataclass(frozen=True)
class Summary:
    dataset: str
    variant: str
    D: int
    loss: str
    n: int
    mean: float
    std: float  # sample std over seeds, 0 for a single seed
    n_params: int

    @property
    def label(self) -> str:
        return ModelSpec(variant=self.variant, P=1, D=self.D, M=self.D).label

    def cell(self) -> str:
        return f"{self.mean * 100:.2f}(±{self.std * 100:.2f})"


def summarize(results) -> list[Summary]:
    groups = defaultdict(list)
    for r in sorted(results, key=lambda r: r.key):
        groups[(r.dataset, r.variant, r.D, r.loss)].append(r)
    out = []
    for (dataset, variant, D, loss), rs in groups.items():
        vals = np.array([r.rmse for r in rs])
        std = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        out.append(Summary(dataset, variant, D, loss, len(vals), float(vals.mean()), std, rs[0].n_params))
    return out


def best_of(summaries, loss: str) -> dict[str, dict[str, Summary]]:
    """Per dataset and variant, the D with the lowest mean RMSE.

    Models without a projection layer have no L_F penalty, so their L2 runs
    stand in when no LF runs exist for them.
    """
    out: dict[str, dict[str, Summary]] = defaultdict(dict)
    for s in summaries:
        usable = s.loss == loss or (
            s.loss == "L2" and not ModelSpec(variant=s.variant, P=1, D=s.D, M=s.D).projected
        )
        if not usable:
            continue
        cur = out[s.dataset].get(s.variant)
        if cur is None or (cur.loss != loss and s.loss == loss) or (cur.loss == s.loss and s.mean < cur.mean):
            out[s.dataset][s.variant] = s
    return {d: dict(sorted(v.items(), key=lambda kv: VARIANTS.index(kv[0]))) for d, v in out.items()}


@dataclass(frozen=True)
class RankTable:
    models: tuple[str, ...]
    datasets: tuple[str, ...]
    means: np.ndarray  # (datasets, models)
    ranks: np.ndarray  # (datasets, models), 1 = lowest RMSE, ties averaged
    average: np.ndarray  # (models,)

    def rank_of(self, model: str) -> float:
        return float(self.average[self.models.index(model)])


def average_rank(table: dict[str, dict[str, float]]) -> RankTable:
    """Rank models within each dataset by mean RMSE and average over datasets.

    ``table`` maps dataset -> model -> mean RMSE; every model needs a value on
    every dataset. Ranking uses full precision.
    """
    if not table:
        raise ValueError("empty table")
    datasets = tuple(table)
    models = tuple(next(iter(table.values())))
    means = np.empty((len(datasets), len(models)))
    for i, d in enumerate(datasets):
        row = table[d]
        for j, m in enumerate(models):
            if m not in row or row[m] is None:
                raise ValueError(f"missing value for model {m!r} on dataset {d!r}")
            means[i, j] = row[m]
        extra = set(row) - set(models)
        if extra:
            raise ValueError(f"dataset {d!r} has models {sorted(extra)} absent elsewhere")
    ranks = np.vstack([rankdata(r, method="average") for r in means])
    return RankTable(models, datasets, means, ranks, ranks.mean(axis=0))


# --- output ----------------------------------------------------------------------

def _write(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def write_results(results, path) -> None:
    """One row per run. Timing is left out so reruns are byte-identical."""
    _write(
        path,
        ["dataset", "variant", "D", "loss", "seed", "rmse", "n_params"],
        ([r.dataset, r.variant, str(r.D), r.loss, str(r.seed), repr(r.rmse), str(r.n_params)] for r in results),
    )


def write_timings(results, path) -> None:
    _write(
        path,
        ["dataset", "variant", "D", "loss", "seed", "seconds"],
        ([r.dataset, r.variant, str(r.D), r.loss, str(r.seed), f"{r.seconds:.3f}"] for r in results),
    )


def write_summary(summaries, path) -> None:
    _write(
        path,
        ["dataset", "model", "variant", "D", "loss", "n_seeds", "rmse_mean", "rmse_std", "cell", "n_params"],
        (
            [s.dataset, s.label, s.variant, str(s.D), s.loss, str(s.n), repr(s.mean), repr(s.std), s.cell(), str(s.n_params)]
            for s in summaries
        ),
    )


def rank_tables(summaries) -> dict[str, RankTable]:
    """Average-rank tables over the best-of-D models, one per loss kind present."""
    out = {}
    for loss in LOSS_KINDS:
        if not any(s.loss == loss for s in summaries):
            continue
        best = best_of(summaries, loss)
        common = set.intersection(*(set(v) for v in best.values()))
        table = {d: {m: s.mean for m, s in v.items() if m in common} for d, v in best.items()}
        out[loss] = average_rank(table)
    return out


def write_ranks(tables: dict[str, RankTable], path) -> None:
    rows = []
    for loss, t in tables.items():
        for j, m in enumerate(t.models):
            for i, d in enumerate(t.datasets):
                rows.append([loss, d, m, repr(float(t.means[i, j])), repr(float(t.ranks[i, j]))])
            rows.append([loss, "average", m, "", repr(float(t.average[j]))])
    _write(path, ["loss", "dataset", "model", "rmse_mean", "rank"], rows)


def render_table(summaries, loss: str | None = None) -> tuple[str, str]:
    """Datasets as rows, models as columns, "mean(±std)" cells (RMSE x 100)
    plus a "#LP" row per dataset. Returns (csv text, aligned text)."""
    summaries = [s for s in summaries if loss is None or s.loss == loss]
    if not summaries:
        raise ValueError("no results to render")
    columns = []
    for s in summaries:
        col = (s.label, s.loss) if loss is None else (s.label,)
        if col not in columns:
            columns.append(col)
    names = [" ".join(c) for c in columns]
    cells: dict[str, dict] = defaultdict(dict)
    for s in summaries:
        col = (s.label, s.loss) if loss is None else (s.label,)
        cells[s.dataset][col] = s
    rows = []
    for dataset, row in cells.items():
        rows.append([dataset, "RMSE"] + [row[c].cell() if c in row else "" for c in columns])
        rows.append([dataset, "#LP"] + [str(row[c].n_params) if c in row else "" for c in columns])
    header = ["dataset", "metric"] + names
    csv_text = "".join(",".join(r) + "\n" for r in [header] + rows)
    widths = [max(len(r[k]) for r in [header] + rows) for k in range(len(header))]
    text = "".join("  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip() + "\n" for r in [header] + rows)
    return csv_text, text

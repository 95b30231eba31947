"""Experiment orchestration: spuriosity sweeps, multi-seed cells, reports.

A cell is one (rho, seed) pair: generate or load data, carve splits, train
one base model, then score every requested method on the held-out test
split.  All randomness flows through seeds derived from (master_seed, rho,
seed, stage), so adding a method or reordering the sweep never shifts the
randomness of other cells, and a rerun of the same config is byte-identical.
"""

import itertools
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import embio, evalmetrics, nnopt, retrain
from .dataspec import GroupedDataset, SpuriosityConfig, generate, make_splits
from .seeding import derive_seed

ALL_METHODS = ("erm",) + retrain.RETRAIN_METHODS
DEFAULT_SPURIOSITY_LIST = (0.7, 0.8, 0.9, 0.95, 0.99, 1.0)
DEFAULT_SEEDS = (0, 1, 2, 3, 4)
REPORT_VERSION = 1

# rho recorded for rows computed from a dataset file, where the true
# spuriosity rate is unknown to the harness.
FILE_RHO = -1.0


def default_erm_config() -> nnopt.TrainConfig:
    """Base-model budget tuned so the shortcut wins before the core signal.

    A longer or hotter schedule would let the model pick up the harder core
    features on its own, which removes the failure the retraining methods
    exist to repair; this budget reproduces the undertrained regime.
    """
    return nnopt.TrainConfig(
        lr=0.002, weight_decay=1e-4, momentum=0.9, epochs=15, batch_size=256
    )


@dataclass
class ExperimentConfig:
    """Everything a sweep needs: data source, methods, seeds, and grids."""

    data: SpuriosityConfig = field(default_factory=SpuriosityConfig)
    dataset_path: str | None = None
    spuriosity_list: tuple[float, ...] = DEFAULT_SPURIOSITY_LIST
    methods: tuple[str, ...] = ALL_METHODS
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    master_seed: int = 0
    hidden: tuple[int, ...] = (32, 16)
    erm: nnopt.TrainConfig = field(default_factory=default_erm_config)
    retrain_lrs: tuple[float, ...] = evalmetrics.DEFAULT_LRS
    retrain_wds: tuple[float, ...] = evalmetrics.DEFAULT_WDS
    s_grid: tuple = evalmetrics.DEFAULT_S_GRID
    gammas: tuple[float, ...] = evalmetrics.DEFAULT_GAMMAS
    retrain_epochs: int = evalmetrics.DEFAULT_RETRAIN_EPOCHS
    output_path: str | None = None

    def __post_init__(self) -> None:
        self.spuriosity_list = tuple(float(r) for r in self.spuriosity_list)
        self.methods = tuple(self.methods)
        self.seeds = tuple(int(s) for s in self.seeds)
        self.hidden = tuple(int(h) for h in self.hidden)
        self.retrain_lrs = tuple(float(v) for v in self.retrain_lrs)
        self.retrain_wds = tuple(float(v) for v in self.retrain_wds)
        self.s_grid = tuple(self.s_grid)
        self.gammas = tuple(float(g) for g in self.gammas)
        if not self.methods:
            raise ValueError("methods must be nonempty")
        unknown = [m for m in self.methods if m not in ALL_METHODS]
        if unknown:
            raise ValueError(f"unknown methods {unknown}; choose from {list(ALL_METHODS)}")
        if len(set(self.methods)) != len(self.methods):
            raise ValueError("methods must be unique")
        if not self.seeds:
            raise ValueError("seeds must be nonempty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be unique")
        if self.dataset_path is None:
            if not self.spuriosity_list:
                raise ValueError("spuriosity_list must be nonempty for synthetic data")
            if len(set(self.spuriosity_list)) != len(self.spuriosity_list):
                raise ValueError("spuriosity_list values must be unique")
            for rho in self.spuriosity_list:
                if not 0.5 <= rho <= 1.0:
                    raise ValueError(f"rho must lie in [0.5, 1.0], got {rho}")
        if not (self.retrain_lrs and self.retrain_wds and self.s_grid and self.gammas):
            raise ValueError("hyperparameter grids must be nonempty")
        if self.retrain_epochs < 1:
            raise ValueError("retrain_epochs must be >= 1")

    def to_dict(self) -> dict:
        return {
            "data": self.data.to_dict(),
            "dataset_path": self.dataset_path,
            "spuriosity_list": list(self.spuriosity_list),
            "methods": list(self.methods),
            "seeds": list(self.seeds),
            "master_seed": self.master_seed,
            "hidden": list(self.hidden),
            "erm": {
                "lr": self.erm.lr,
                "weight_decay": self.erm.weight_decay,
                "momentum": self.erm.momentum,
                "batch_size": self.erm.batch_size,
                "epochs": self.erm.epochs,
            },
            "retrain_lrs": list(self.retrain_lrs),
            "retrain_wds": list(self.retrain_wds),
            "s_grid": list(self.s_grid),
            "gammas": list(self.gammas),
            "retrain_epochs": self.retrain_epochs,
            "output_path": self.output_path,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "ExperimentConfig":
        payload = dict(payload)
        kwargs = {}
        if "data" in payload:
            kwargs["data"] = SpuriosityConfig.from_dict(payload.pop("data"))
        if "erm" in payload:
            erm = dict(payload.pop("erm"))
            allowed = {"lr", "weight_decay", "momentum", "batch_size", "epochs"}
            bad = set(erm) - allowed
            if bad:
                raise ValueError(f"unknown erm config fields {sorted(bad)}")
            kwargs["erm"] = replace(default_erm_config(), **erm)
        known = {
            "dataset_path",
            "spuriosity_list",
            "methods",
            "seeds",
            "master_seed",
            "hidden",
            "retrain_lrs",
            "retrain_wds",
            "s_grid",
            "gammas",
            "retrain_epochs",
            "output_path",
        }
        bad = set(payload) - known
        if bad:
            raise ValueError(f"unknown experiment config fields {sorted(bad)}")
        kwargs.update(payload)
        return cls(**kwargs)


CSV_COLUMNS = (
    "method",
    "rho",
    "seed",
    "wga",
    "mean_group",
    "acc_y0_maj",
    "acc_y0_min",
    "acc_y1_maj",
    "acc_y1_min",
    "s",
    "lr",
    "wd",
    "gamma",
)


@dataclass
class ReportRow:
    """One method's test-split result at one (rho, seed) cell.

    wall_time_s is measured for operator feedback only and is deliberately
    left out of every serialized form so reports stay byte-reproducible.
    """

    method: str
    rho: float
    seed: int
    wga: float | None = None
    mean_group: float | None = None
    acc_y0_maj: float | None = None
    acc_y0_min: float | None = None
    acc_y1_maj: float | None = None
    acc_y1_min: float | None = None
    s: int | None = None
    lr: float | None = None
    wd: float | None = None
    gamma: float | None = None
    error: str | None = None
    wall_time_s: float | None = field(default=None, compare=False)

    def to_json_dict(self) -> dict:
        payload = {name: getattr(self, name) for name in CSV_COLUMNS}
        payload["error"] = self.error
        return payload

    @classmethod
    def from_json_dict(cls, payload: dict) -> "ReportRow":
        known = set(CSV_COLUMNS) | {"error"}
        bad = set(payload) - known
        if bad:
            raise ValueError(f"unknown report row fields {sorted(bad)}")
        return cls(**{name: payload.get(name) for name in known})


@dataclass
class Report:
    """Sorted rows plus per-(method, rho) summary and the config that ran."""

    rows: list[ReportRow]
    config: dict
    summary: list[dict] = field(default_factory=list)
    report_version: int = REPORT_VERSION

    def to_json_dict(self) -> dict:
        return {
            "report_version": self.report_version,
            "config": self.config,
            "summary": self.summary,
            "rows": [row.to_json_dict() for row in self.rows],
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "Report":
        if payload.get("report_version") != REPORT_VERSION:
            raise ValueError(
                f"unsupported report_version {payload.get('report_version')!r}"
            )
        return cls(
            rows=[ReportRow.from_json_dict(row) for row in payload["rows"]],
            config=payload.get("config", {}),
            summary=payload.get("summary", []),
        )


_FILE_CACHE: dict[str, GroupedDataset] = {}


def load_annotated_dataset(path: str) -> GroupedDataset:
    """Load an EMB/CSV dataset and insist on group annotations.

    The benchmark protocol needs groups for balanced val/te splits and for
    scoring; files are cached per path since sweeps reuse them across cells.
    """
    if path not in _FILE_CACHE:
        dataset = embio.load_dataset(path)
        if not dataset.has_groups:
            raise ValueError(
                f"dataset {path} has no group annotations; the benchmark needs "
                "them for balanced evaluation splits"
            )
        _FILE_CACHE[path] = dataset
    return _FILE_CACHE[path]


def _cell_dataset(config: ExperimentConfig, rho: float, seed: int) -> GroupedDataset:
    if config.dataset_path is not None:
        return load_annotated_dataset(config.dataset_path)
    data_config = replace(config.data, rho=rho)
    return generate(data_config, seed=derive_seed(config.master_seed, "data", rho, seed))


def _grid_for(config: ExperimentConfig, method: str, grid_seed: int) -> list:
    return evalmetrics.default_grid_for(
        method,
        seed=grid_seed,
        gammas=config.gammas,
        lrs=config.retrain_lrs,
        wds=config.retrain_wds,
        s_grid=config.s_grid,
        epochs=config.retrain_epochs,
    )


def _metrics_into_row(row: ReportRow, metrics: evalmetrics.GroupMetrics) -> None:
    row.wga = float(metrics.wga)
    row.mean_group = float(metrics.mean_group)
    acc = metrics.accuracies
    row.acc_y0_maj = float(acc[(0, 0)]) if (0, 0) in acc else None
    row.acc_y0_min = float(acc[(0, 1)]) if (0, 1) in acc else None
    row.acc_y1_maj = float(acc[(1, 0)]) if (1, 0) in acc else None
    row.acc_y1_min = float(acc[(1, 1)]) if (1, 1) in acc else None


def run_cell(config: ExperimentConfig, rho: float, seed: int) -> list[ReportRow]:
    """One (rho, seed) cell: data, splits, base model, then every method.

    The base model is trained once and shared: every retraining method is a
    post-processing step on the same frozen network, so comparisons isolate
    the retraining recipe.  A method that raises becomes an error row rather
    than aborting the cell.
    """
    dataset = _cell_dataset(config, rho, seed)
    splits = make_splits(dataset, seed=derive_seed(config.master_seed, "splits", rho, seed))
    model = nnopt.MLP(
        d_in=dataset.d,
        hidden=config.hidden,
        seed=derive_seed(config.master_seed, "erm-init", rho, seed),
    )
    nnopt.fit(
        model,
        dataset.features[splits.tr],
        dataset.labels[splits.tr],
        config.erm,
        seed=derive_seed(config.master_seed, "erm-fit", rho, seed),
    )

    rows = []
    for method in config.methods:
        start = time.perf_counter()
        row = ReportRow(method=method, rho=float(rho), seed=int(seed))
        try:
            if method == "erm":
                _metrics_into_row(row, evalmetrics.group_accuracies(model, dataset, splits.te))
            else:
                grid = _grid_for(
                    config, method, derive_seed(config.master_seed, "retrain", rho, seed, method)
                )
                hp = evalmetrics.select_hp(
                    model, dataset, splits.llr, splits.val, method, grid
                )
                _metrics_into_row(
                    row, evalmetrics.group_accuracies(hp.model, dataset, splits.te)
                )
                if "s" in hp.provenance:
                    row.s = int(hp.provenance["s"])
                row.lr = float(hp.config.learning_rate)
                row.wd = float(hp.config.weight_decay)
                if isinstance(hp.config, retrain.AfrConfig):
                    row.gamma = float(hp.config.gamma)
        except Exception as exc:
            row = ReportRow(method=method, rho=float(rho), seed=int(seed), error=str(exc))
        row.wall_time_s = time.perf_counter() - start
        rows.append(row)
    return rows


def _row_key(row: ReportRow) -> tuple:
    return (row.method, row.rho, row.seed)


def summarize(rows: list[ReportRow]) -> list[dict]:
    """Per-(method, rho) mean and population std of test WGA over seeds."""
    entries = []
    for (method, rho), group in itertools.groupby(
        sorted(rows, key=_row_key), key=lambda r: (r.method, r.rho)
    ):
        group = list(group)
        values = [row.wga for row in group if row.error is None]
        errors = sum(1 for row in group if row.error is not None)
        entries.append(
            {
                "method": method,
                "rho": rho,
                "n_seeds": len(values),
                "errors": errors,
                "wga_mean": float(np.mean(values)) if values else None,
                "wga_std": float(np.std(values)) if values else None,
            }
        )
    return entries


def thread_cap() -> int:
    """Worker cap from SPURBENCH_THREADS; unset or 1 means run serially."""
    raw = os.environ.get("SPURBENCH_THREADS", "1")
    try:
        cap = int(raw)
    except ValueError as exc:
        raise ValueError(f"SPURBENCH_THREADS must be an integer, got {raw!r}") from exc
    if cap < 1:
        raise ValueError(f"SPURBENCH_THREADS must be >= 1, got {cap}")
    return cap


def sweep(config: ExperimentConfig) -> Report:
    """Every (rho, seed) cell, rows sorted by (method, rho, seed).

    Cells are independent, so a thread pool (capped by SPURBENCH_THREADS)
    may run them concurrently; the sort makes assembly order-independent.
    """
    if config.dataset_path is not None:
        load_annotated_dataset(config.dataset_path)
        cells = [(FILE_RHO, seed) for seed in config.seeds]
    else:
        cells = list(itertools.product(config.spuriosity_list, config.seeds))

    cap = thread_cap()
    if cap > 1 and len(cells) > 1:
        with ThreadPoolExecutor(max_workers=cap) as pool:
            chunks = list(pool.map(lambda cell: run_cell(config, *cell), cells))
    else:
        chunks = [run_cell(config, rho, seed) for rho, seed in cells]

    rows = sorted((row for chunk in chunks for row in chunk), key=_row_key)
    return Report(rows=rows, config=config.to_dict(), summary=summarize(rows))


def _csv_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _render_csv(report: Report) -> str:
    lines = [",".join(CSV_COLUMNS)]
    for row in report.rows:
        lines.append(",".join(_csv_cell(getattr(row, name)) for name in CSV_COLUMNS))
    return "\n".join(lines) + "\n"


def _render_markdown(report: Report) -> str:
    """Mean (±std) WGA grid, methods down the rows and rho across columns."""
    cells = {(entry["method"], entry["rho"]): entry for entry in report.summary}
    methods = sorted({m for m, _ in cells})
    rhos = sorted({r for _, r in cells})
    header = "| method | " + " | ".join(f"rho={rho:g}" for rho in rhos) + " |"
    rule = "|" + "---|" * (len(rhos) + 1)
    lines = [header, rule]
    for method in methods:
        rendered = []
        for rho in rhos:
            entry = cells.get((method, rho))
            if entry is None or entry["wga_mean"] is None:
                rendered.append("error")
                continue
            text = f"{100 * entry['wga_mean']:.2f} ±{100 * entry['wga_std']:.2f}"
            if entry["errors"]:
                text += f" [{entry['errors']} err]"
            rendered.append(text)
        lines.append(f"| {method} | " + " | ".join(rendered) + " |")
    return "\n".join(lines) + "\n"


def render_report(report: Report, format: str) -> str:
    if not report.rows:
        raise ValueError("cannot render an empty report")
    if format == "json":
        return json.dumps(report.to_json_dict(), indent=2) + "\n"
    if format == "csv":
        return _render_csv(report)
    if format == "markdown":
        return _render_markdown(report)
    raise ValueError(f"unknown report format {format!r}")


def parse_report(text: str) -> Report:
    return Report.from_json_dict(json.loads(text))

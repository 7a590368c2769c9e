"""Experiment harness: flat dotted-key specs, per-run directories, compare tables.

A spec is a flat mapping such as ``{"task.H": 12, "reward.alpha": 0.5}``;
every key has a default (see :data:`DEFAULTS`) and the resolved spec is
written into each run directory.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import trainer as T
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import SplitSpec, TimeSeries, load_csv, mackey_glass, prepare
from .errors import ConfigError, NothingToPlotError, NumericError, PGS2SError
from .metrics import MetricReport

log = logging.getLogger(__name__)

RUN_ROOT_ENV = "PGS2S_RUN_ROOT"

DEFAULTS: dict = {
    "data.source": "mg",
    "data.n": 3000,
    "data.dt": 0.1,
    "data.sample_every": 1.0,
    "data.sign": -1,
    "data.target": "y",
    "data.exogenous": "",
    "data.name": "",
    "task.L": 50,
    "task.H": 12,
    "model.cell": "lstm",
    "model.hidden": 32,
    "train.lr": 3e-3,
    "train.optimizer": "adam",
    "train.batch_size": 32,
    "train.epochs": 20,
    "train.patience": 5,
    "train.clip_norm": 0.0,
    "ss.p0": 1.0,
    "ss.pmin": 0.05,
    "pg.hidden": 16,
    "pg.lr": 0.5,
    "pg.epsilon": 0.1,
    "pg.policy_epochs": 2,
    "pg.rnn_epochs": 2,
    "pg.max_rounds": 10,
    "pg.sample_actions": True,
    "pg.exclude_explored": False,
    "reward.alpha": 0.5,
    "reward.beta": 0.05,
    "reward.gamma": 0.9,
    "pool.budget": 8,
    "pool.seed": 0,
    "pool.msvr_max_samples": 800,
    "pool.mlp_epochs": 150,
    "run.regimes": "FR,TF,PG",
    "run.seeds": "0,1,2",
    "run.name": "experiment",
    "search.budget": 8,
    "search.regime": "PG",
    "search.seed": 0,
}

# spec key -> TrainConfig field
_CONFIG_MAP = {
    "task.L": "L", "task.H": "H", "model.cell": "cell", "train.lr": "lr_rnn",
    "train.optimizer": "optimizer", "train.batch_size": "batch_size", "train.epochs": "epochs",
    "train.patience": "patience", "train.clip_norm": "clip_norm", "ss.p0": "ss_p0", "ss.pmin": "ss_pmin",
    "pg.hidden": "n_policy", "pg.lr": "lr_policy", "pg.epsilon": "epsilon",
    "pg.policy_epochs": "policy_epochs", "pg.rnn_epochs": "rnn_epochs", "pg.max_rounds": "max_rounds",
    "pg.sample_actions": "sample_actions", "pg.exclude_explored": "exclude_explored",
    "reward.alpha": "alpha", "reward.beta": "beta", "reward.gamma": "gamma",
}


def _coerce(key, value, default):
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        s = str(value).strip().lower()
        if s in ("1", "true", "yes", "on"):
            return True
        if s in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    try:
        if isinstance(default, int):
            f = float(value)
            if f != int(f):
                raise ValueError
            return int(f)
        if isinstance(default, float):
            return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected a {type(default).__name__}, got {value!r}") from None
    return str(value)


@dataclass
class ExperimentSpec:
    values: dict = field(default_factory=lambda: dict(DEFAULTS))

    @classmethod
    def from_flat(cls, flat: dict | None = None) -> "ExperimentSpec":
        vals = dict(DEFAULTS)
        for k, v in (flat or {}).items():
            if k not in DEFAULTS:
                raise ConfigError(f"unknown config key {k!r}")
            vals[k] = _coerce(k, v, DEFAULTS[k])
        spec = cls(vals)
        spec.validate()
        return spec

    @classmethod
    def from_file(cls, path, overrides: dict | None = None) -> "ExperimentSpec":
        try:
            flat = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(flat, dict):
            raise ConfigError(f"{path}: expected a flat JSON object")
        flat.update(overrides or {})
        return cls.from_flat(flat)

    def __getitem__(self, key):
        return self.values[key]

    def with_(self, **kw) -> "ExperimentSpec":
        flat = dict(self.values)
        flat.update({k.replace("__", "."): v for k, v in kw.items()})
        return ExperimentSpec.from_flat(flat)

    @property
    def regimes(self) -> list[str]:
        return [r.strip().upper() for r in str(self["run.regimes"]).split(",") if r.strip()]

    @property
    def seeds(self) -> list[int]:
        try:
            return [int(s) for s in str(self["run.seeds"]).split(",") if s.strip()]
        except ValueError:
            raise ConfigError(f"run.seeds: expected comma-separated integers, got {self['run.seeds']!r}") from None

    @property
    def dataset_name(self) -> str:
        if self["data.name"]:
            return self["data.name"]
        return "MG" if self["data.source"] == "mg" else Path(self["data.source"]).stem

    def validate(self):
        if not self.regimes:
            raise ConfigError("run.regimes must not be empty")
        for r in self.regimes:
            if r not in T.REGIMES:
                raise ConfigError(f"run.regimes: unknown regime {r!r} (choose from {', '.join(T.REGIMES)})")
        seeds = self.seeds
        if not seeds or len(set(seeds)) != len(seeds):
            raise ConfigError("run.seeds must be non-empty and distinct")
        if self["data.sign"] not in (-1, 1):
            raise ConfigError("data.sign must be -1 or 1")
        for key in ("pool.budget", "search.budget", "data.n"):
            if self[key] < 1:
                raise ConfigError(f"{key} must be >= 1")
        self.train_config("FR", seeds[0])

    def train_config(self, regime: str, seed: int) -> T.TrainConfig:
        kw = {f: self[k] for k, f in _CONFIG_MAP.items()}
        hidden = self["model.hidden"]
        try:
            return T.TrainConfig(n_enc=hidden, n_dec=hidden, regime=regime, seed=seed, **kw)
        except ConfigError as exc:
            raise ConfigError(f"invalid training settings: {exc}") from None

    def to_flat(self) -> dict:
        return dict(self.values)

    def dump(self, path):
        Path(path).write_text(json.dumps(self.values, indent=2, sort_keys=True) + "\n")


def run_root(default: str = "runs") -> Path:
    return Path(os.environ.get(RUN_ROOT_ENV, default))


# ---------------------------------------------------------------- building blocks

def build_series(spec: ExperimentSpec) -> TimeSeries:
    if spec["data.source"] == "mg":
        return mackey_glass(spec["data.n"], dt=spec["data.dt"], sample_every=spec["data.sample_every"],
                            decay_sign=spec["data.sign"])
    exo = [c.strip() for c in spec["data.exogenous"].split(",") if c.strip()]
    return load_csv(spec["data.source"], spec["data.target"], exo, name=spec.dataset_name)


def needs_pool(regimes) -> bool:
    return any(r == "PG" or r.startswith("TEACH_") for r in regimes)


def build_task(spec: ExperimentSpec, pool=None, fit: bool = True):
    """Returns (TaskData, pool, pool searches)."""
    prep = prepare(build_series(spec), spec["task.L"], spec["task.H"], SplitSpec())
    searches = {}
    if pool is None and fit and needs_pool(spec.regimes):
        pool, searches = T.fit_pool(prep, spec["pool.budget"], spec["pool.seed"],
                                    msvr_max_samples=spec["pool.msvr_max_samples"],
                                    mlp_epochs=spec["pool.mlp_epochs"])
    return T.make_task(prep, pool), pool, searches


@dataclass
class CellResult:
    regime: str
    seed: int
    ok: bool
    report: MetricReport | None = None
    error: str = ""
    numeric: bool = False
    seconds: float = 0.0
    train: T.TrainResult | None = None


def run_cell(spec: ExperimentSpec, task: T.TaskData, regime: str, seed: int,
             out_dir: Path | None = None, pool=None) -> CellResult:
    """Train one (regime, seed) and score it on the test split.

    Library errors are caught and returned as a failed cell so that a
    compare run records them instead of dropping them.
    """
    t0 = time.perf_counter()
    try:
        cfg = spec.train_config(regime, seed)
        res = T.train(cfg, task)
        report, _ = T.evaluate_split(res.seq, cfg, task, "test", res.policy)
    except PGS2SError as exc:
        log.warning("%s seed %d failed: %s", regime, seed, exc)
        return CellResult(regime, seed, False, error=f"{type(exc).__name__}: {exc}",
                          numeric=isinstance(exc, NumericError), seconds=time.perf_counter() - t0)
    cell = CellResult(regime, seed, True, report, seconds=time.perf_counter() - t0, train=res)
    if out_dir is not None:
        write_run(out_dir, spec, cfg, res, report, task.scaler, pool)
    return cell


def write_run(out_dir: Path, spec: ExperimentSpec, cfg: T.TrainConfig, res: T.TrainResult,
              report: MetricReport, scaler=None, pool=None):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    spec.dump(out_dir / "config.json")
    needs = cfg.regime == "PG" or cfg.regime.startswith("TEACH_")
    ckpt = Checkpoint(res.seq, res.policy, scaler, {"spec": spec.to_flat(), "train": cfg.to_dict()},
                      list(pool) if (pool and needs) else [], {"regime": cfg.regime, "seed": cfg.seed})
    save_checkpoint(out_dir / "model.ckpt", ckpt)
    (out_dir / "metrics.json").write_text(json.dumps({"split": "test", **report.to_dict()}, indent=2) + "\n")
    (out_dir / "history.json").write_text(json.dumps(res.history, indent=2) + "\n")
    (out_dir / "rounds.json").write_text(json.dumps([r.to_dict() for r in res.logs], indent=2) + "\n")


def evaluate_checkpoint(path, split: str = "test") -> MetricReport:
    """Rebuild the data from the stored spec and score the stored model."""
    if split not in ("train", "val", "test"):
        raise ConfigError(f"split must be train, val or test, not {split!r}")
    ckpt = load_checkpoint(path)
    spec = ExperimentSpec.from_flat(ckpt.config["spec"])
    cfg = T.TrainConfig.from_dict(ckpt.config["train"])
    task, _, _ = build_task(spec, pool=ckpt.pool or None, fit=False)
    if (cfg.regime == "PG" or cfg.teacher_name) and task.cubes is None:
        raise ConfigError(f"{path}: {cfg.regime} checkpoint carries no pool models")
    report, _ = T.evaluate_split(ckpt.seq, cfg, task, split, ckpt.policy)
    return report


# ---------------------------------------------------------------- compare

METRICS = ("rmse", "mape", "smape")


@dataclass
class CompareResult:
    spec: ExperimentSpec
    cells: list
    pool_val_rmse: dict
    seconds: float

    def rows(self) -> list[dict]:
        out = []
        for c in self.cells:
            for m in METRICS:
                out.append({"dataset": self.spec.dataset_name, "H": self.spec["task.H"], "regime": c.regime,
                            "seed": c.seed, "metric": m,
                            "value": repr(getattr(c.report, m)) if c.ok else "",
                            "status": "ok" if c.ok else "failed", "error": c.error})
        return out

    def values(self, regime: str, metric: str = "rmse") -> list[float]:
        return [getattr(c.report, metric) for c in self.cells if c.regime == regime and c.ok]

    def median(self, regime: str, metric: str = "rmse") -> float:
        v = self.values(regime, metric)
        return float(np.median(v)) if v else math.nan

    def summary(self) -> dict:
        """{regime: {metric: (mean, sd, n_ok)}} with the sample sd (ddof=1, 0 for one seed)."""
        out = {}
        for r in self.spec.regimes:
            out[r] = {}
            for m in METRICS:
                v = np.asarray(self.values(r, m))
                sd = float(np.std(v, ddof=1)) if len(v) > 1 else 0.0
                out[r][m] = (float(np.mean(v)) if len(v) else math.nan, sd, len(v))
        return out

    def table(self) -> str:
        summ = self.summary()
        best = {m: min((summ[r][m][0] for r in summ if math.isfinite(summ[r][m][0])), default=math.nan)
                for m in METRICS}
        lines = [f"{self.spec.dataset_name} H={self.spec['task.H']}", "",
                 "| Method | RMSE | MAPE | SMAPE |", "|---|---|---|---|"]
        for r, row in summ.items():
            cells = []
            for m in METRICS:
                mean, sd, n = row[m]
                if n == 0:
                    cells.append("failed")
                    continue
                txt = f"{mean:.2E} (±{sd:.2E})"
                cells.append(f"**{txt}**" if mean == best[m] else txt)
            lines.append(f"| {display_name(r)} | " + " | ".join(cells) + " |")
        failed = [c for c in self.cells if not c.ok]
        if failed:
            lines.append("")
            lines += [f"- failed: {c.regime} seed {c.seed}: {c.error}" for c in failed]
        return "\n".join(lines) + "\n"


def display_name(regime: str) -> str:
    return {"PG": "PG-S2S", "TEACH_MSVR": "Teach_MSVR", "TEACH_MLP": "Teach_MLP"}.get(regime, regime)


def run_compare(spec: ExperimentSpec, out_dir: Path | None = None, progress=None) -> CompareResult:
    t0 = time.perf_counter()
    task, pool, searches = build_task(spec)
    pool_val = {k: s.best_score for k, s in searches.items()}
    cells = []
    for seed in spec.seeds:
        for regime in spec.regimes:
            sub = None if out_dir is None else Path(out_dir) / "runs" / f"{regime}-seed{seed}"
            cell = run_cell(spec, task, regime, seed, sub, pool)
            cells.append(cell)
            if progress:
                progress(cell)
    result = CompareResult(spec, cells, pool_val, time.perf_counter() - t0)
    if out_dir is not None:
        write_compare(Path(out_dir), result, searches)
    return result


def write_compare(out_dir: Path, result: CompareResult, searches: dict | None = None):
    out_dir.mkdir(parents=True, exist_ok=True)
    result.spec.dump(out_dir / "config.json")
    rows = result.rows()
    with open(out_dir / "results.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        w.writeheader()
        w.writerows(rows)
    (out_dir / "table.md").write_text(result.table())
    if searches:
        (out_dir / "pool_search.json").write_text(json.dumps(
            {k: s.trials for k, s in searches.items()}, indent=2, default=float) + "\n")


def any_numeric_failure(result: CompareResult) -> bool:
    return any(c.numeric for c in result.cells)


# ---------------------------------------------------------------- selection plot data

def selection_series(rounds: list[dict], split: str = "train", step: int = 0):
    """Per-round rows of pool RMSE and selection percentages at one decode step."""
    if not rounds:
        raise NothingToPlotError("no round logs to plot")
    names = list(rounds[0][f"pool_rmse_{split}"].keys())
    rows = []
    for r in rounds:
        sel = r[f"selection_{split}"]
        if not 0 <= step < len(sel):
            raise ConfigError(f"decode step {step + 1} out of range 1..{len(sel)}")
        row = {"round": r["round"] + 1}
        row.update({f"rmse_{n}": r[f"pool_rmse_{split}"][n] for n in names})
        row.update({f"pct_{n}": sel[step][j] for j, n in enumerate(names)})
        rows.append(row)
    return names, rows


def plot_selection(rounds: list[dict], out_prefix, step: int = 0) -> list[Path]:
    """Write ``<prefix>.csv`` (train and val series) and ``<prefix>.png``."""
    out_prefix = Path(out_prefix)
    out_prefix.parent.mkdir(parents=True, exist_ok=True)
    paths = []
    series = {}
    for split in ("train", "val"):
        names, rows = selection_series(rounds, split, step)
        series[split] = (names, rows)
    csv_path = out_prefix.with_suffix(".csv")
    with open(csv_path, "w", newline="") as fh:
        fields = ["split"] + list(series["train"][1][0].keys())
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for split, (_, rows) in series.items():
            for row in rows:
                w.writerow({"split": split, **row})
    paths.append(csv_path)

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    fig, axes = plt.subplots(2, 2, figsize=(10, 6), sharex=True)
    for col, split in enumerate(("train", "val")):
        names, rows = series[split]
        x = [r["round"] for r in rows]
        for n in names:
            axes[0, col].plot(x, [r[f"rmse_{n}"] for r in rows], marker="o", label=n)
            axes[1, col].plot(x, [r[f"pct_{n}"] for r in rows], marker="o", label=n)
        axes[0, col].set_title(f"{split}: pool RMSE")
        axes[1, col].set_title(f"{split}: selected at step {step + 1} (%)")
        axes[1, col].set_xlabel("round")
        axes[1, col].set_ylim(-5, 105)
    axes[0, 0].legend()
    fig.tight_layout()
    png = out_prefix.with_suffix(".png")
    fig.savefig(png, dpi=100)
    plt.close(fig)
    paths.append(png)
    return paths


# ---------------------------------------------------------------- search

SEARCH_SPACE = {
    "lr_rnn": T.LogUniform(1e-3, 1e-2),
    "lr_policy": T.LogUniform(0.05, 1.0),
    "beta": T.LogUniform(0.01, 1.0),
    "alpha": T.Uniform(0.2, 0.8),
}


def run_search(spec: ExperimentSpec, out_dir: Path | None = None):
    regime = spec["search.regime"].upper()
    spec = spec.with_(**{"run.regimes": regime})
    task, _, _ = build_task(spec)
    base = spec.train_config(regime, spec.seeds[0])
    space = {k: v for k, v in SEARCH_SPACE.items() if regime == "PG" or k == "lr_rnn"}
    best, res = T.search_train_config(base, space, spec["search.budget"], task, spec["search.seed"])
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        spec.dump(out_dir / "config.json")
        (out_dir / "trials.json").write_text(json.dumps(res.trials, indent=2, default=float) + "\n")
        (out_dir / "best.json").write_text(json.dumps(best.to_dict(), indent=2) + "\n")
    return best, res

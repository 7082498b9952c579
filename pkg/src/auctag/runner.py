"""Experiment orchestration: configs, trials, sweeps, aggregation, reports.

A sweep is a grid of (condition x method x partition) trials.  Every trial
seed is a pure function of (master_seed, condition index, partition index),
shared across methods so all methods see the same data partition and the
same initial weights; only the loss regime differs.  With `record_timing`
off (the default) all emitted files are byte-reproducible from the config.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats as sps

from ._hashing import derive_seed
from .corpus import (
    ContextWindow,
    Corpus,
    FeatureConfig,
    LabelSet,
    build_context_windows,
    load_corpus,
    load_label_set,
)
from .metrics import EvalReport, UndefinedAUCError, cohens_kappa, confusion, f1_macro, f1_per_class, roc_auc
from .model import Model, init_model, logits_batch, sigmoid
from .optimize import LossConfig, TrainConfig, prepare_items, train
from .scenarios import (
    KIND_LOW_RESOURCE,
    KIND_TRAIN_SHIFT,
    KIND_TRAIN_TEST_SHIFT,
    ScenarioSpec,
    SplitSpec,
    binarize,
    build_condition,
    round_half_up,
    sample_low_resource,
    split_sessions,
    synth_corpus,
)

METHODS = ("CE", "DAM", "COMAUC")
VAL_FRACTION = 0.2

TRIALS_CSV_HEADER = ("method", "kind", "condition", "seed", "f1", "kappa", "auc", "epochs", "wall_time")


@dataclass(frozen=True)
class DataConfig:
    """Either a corpus file (plus optional label file) or synth parameters."""

    corpus_path: str | None = None
    labels_path: str | None = None
    synth: dict | None = None

    def __post_init__(self) -> None:
        if (self.corpus_path is None) == (self.synth is None):
            raise ValueError("data config needs exactly one of corpus_path or synth")


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig
    split: SplitSpec = SplitSpec()
    scenario: ScenarioSpec = ScenarioSpec()
    methods: tuple[str, ...] = METHODS
    margin: float = 1.0
    comauc_period: int = 1
    comauc_start: str = "CE"
    train: TrainConfig = TrainConfig()
    hidden_dim: int = 64
    features: FeatureConfig = FeatureConfig()
    master_seed: int = 0
    output_dir: str | None = None
    record_timing: bool = False

    def __post_init__(self) -> None:
        methods = tuple(m.upper() for m in self.methods)
        if not methods or any(m not in METHODS for m in methods):
            raise ValueError(f"methods must be a non-empty subset of {METHODS}, got {self.methods}")
        object.__setattr__(self, "methods", methods)
        if self.hidden_dim < 1:
            raise ValueError("hidden_dim must be >= 1")

    def loss_config_for(self, method: str) -> LossConfig:
        return LossConfig(
            regime=method,
            margin=self.margin,
            comauc_period=self.comauc_period,
            comauc_start=self.comauc_start,
        )

    def to_dict(self) -> dict:
        return {
            "data": {
                "corpus_path": self.data.corpus_path,
                "labels_path": self.data.labels_path,
                "synth": self.data.synth,
            },
            "split": {"train_fraction": self.split.train_fraction, "seed": self.split.seed},
            "scenario": {
                "kind": self.scenario.kind,
                "sizes": list(self.scenario.sizes),
                "ratios": list(self.scenario.ratios),
                "target_class": self.scenario.target_class,
                "partitions_per_condition": self.scenario.partitions_per_condition,
                "train_n": self.scenario.train_n,
                "test_n": self.scenario.test_n,
            },
            "methods": list(self.methods),
            "loss": {
                "margin": self.margin,
                "comauc_period": self.comauc_period,
                "comauc_start": self.comauc_start,
            },
            "train": {
                "batch_size": self.train.batch_size,
                "learning_rate": self.train.learning_rate,
                "momentum": self.train.momentum,
                "max_epochs": self.train.max_epochs,
                "patience": self.train.patience,
            },
            "model": {"hidden_dim": self.hidden_dim},
            "features": self.features.to_dict(),
            "master_seed": self.master_seed,
            "output_dir": self.output_dir,
            "record_timing": self.record_timing,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        data_obj = obj.get("data", {})
        data = DataConfig(
            corpus_path=data_obj.get("corpus_path"),
            labels_path=data_obj.get("labels_path"),
            synth=data_obj.get("synth"),
        )
        split_obj = obj.get("split", {})
        split = SplitSpec(
            train_fraction=float(split_obj.get("train_fraction", 0.8)),
            seed=int(split_obj.get("seed", 0)),
        )
        sc = obj.get("scenario", {})
        scenario = ScenarioSpec(
            kind=sc.get("kind", KIND_LOW_RESOURCE),
            sizes=tuple(sc.get("sizes", ScenarioSpec.sizes)),
            ratios=tuple(sc.get("ratios", ScenarioSpec.ratios)),
            target_class=sc.get("target_class", "FP"),
            partitions_per_condition=int(sc.get("partitions_per_condition", 10)),
            train_n=int(sc.get("train_n", 100)),
            test_n=int(sc.get("test_n", 50)),
        )
        loss = obj.get("loss", {})
        tr = obj.get("train", {})
        train_cfg = TrainConfig(
            batch_size=int(tr.get("batch_size", 32)),
            learning_rate=float(tr.get("learning_rate", 0.1)),
            momentum=float(tr.get("momentum", 0.9)),
            max_epochs=int(tr.get("max_epochs", 100)),
            patience=int(tr.get("patience", 5)),
        )
        return cls(
            data=data,
            split=split,
            scenario=scenario,
            methods=tuple(obj.get("methods", METHODS)),
            margin=float(loss.get("margin", 1.0)),
            comauc_period=int(loss.get("comauc_period", 1)),
            comauc_start=str(loss.get("comauc_start", "CE")).upper(),
            train=train_cfg,
            hidden_dim=int(obj.get("model", {}).get("hidden_dim", 64)),
            features=FeatureConfig.from_dict(obj.get("features", {})),
            master_seed=int(obj.get("master_seed", 0)),
            output_dir=obj.get("output_dir"),
            record_timing=bool(obj.get("record_timing", False)),
        )


@dataclass(frozen=True)
class TrialResult:
    method: str
    kind: str
    condition: int | float
    seed: int
    f1: float
    kappa: float
    auc: float | None
    epochs_run: int
    wall_time: float

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "kind": self.kind,
            "condition": self.condition,
            "seed": self.seed,
            "f1": self.f1,
            "kappa": self.kappa,
            "auc": self.auc,
            "epochs_run": self.epochs_run,
            "wall_time": self.wall_time,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "TrialResult":
        cond = obj["condition"]
        return cls(
            method=obj["method"],
            kind=obj["kind"],
            condition=int(cond) if obj["kind"] == KIND_LOW_RESOURCE else float(cond),
            seed=int(obj["seed"]),
            f1=float(obj["f1"]),
            kappa=float(obj["kappa"]),
            auc=None if obj.get("auc") is None else float(obj["auc"]),
            epochs_run=int(obj["epochs_run"]),
            wall_time=float(obj["wall_time"]),
        )


@dataclass
class SweepResult:
    config: dict
    trials: list[TrialResult] = field(default_factory=list)

    def summary(self) -> list[dict]:
        return aggregate(self.trials)


@dataclass
class ConditionPools:
    """Featurizable task pools shared by every trial of a sweep."""

    label_set: LabelSet
    train_pool: list[tuple[ContextWindow, int]]
    test_pool: list[tuple[ContextWindow, int]]


def build_corpus(config: ExperimentConfig) -> Corpus:
    data = config.data
    if data.synth is not None:
        s = dict(data.synth)
        return synth_corpus(
            n_sessions=int(s["n_sessions"]),
            sentences_per_session=int(s["sentences_per_session"]),
            K=int(s["K"]),
            class_priors=resolve_priors(s.get("class_priors", "uniform"), int(s["K"])),
            separability=float(s.get("separability", 0.7)),
            vocab_size=int(s.get("vocab_size", 120)),
            seed=int(s.get("seed", derive_seed(config.master_seed, "synth"))),
            codes=s.get("codes"),
        )
    label_set = load_label_set(data.labels_path) if data.labels_path else LabelSet.default()
    return load_corpus(data.corpus_path, label_set)


def resolve_priors(spec: object, K: int) -> np.ndarray:
    """'uniform', {'geometric': r}, or an explicit K-vector."""
    if isinstance(spec, str):
        if spec != "uniform":
            raise ValueError(f"unknown prior spec {spec!r}")
        return np.full(K, 1.0 / K)
    if isinstance(spec, dict) and "geometric" in spec:
        r = float(spec["geometric"])
        if not 0.0 < r <= 1.0:
            raise ValueError(f"geometric ratio must be in (0,1], got {r}")
        w = r ** np.arange(K)
        return w / w.sum()
    arr = np.asarray(spec, dtype=np.float64)
    if arr.shape != (K,):
        raise ValueError(f"class_priors must have length {K}")
    return arr


def build_pools(config: ExperimentConfig) -> ConditionPools:
    """Load/synthesize, split sessions, build windows, resolve the task labels."""
    corpus = build_corpus(config)
    train_corpus, test_corpus = split_sessions(corpus, config.split)
    train_windows = build_context_windows(train_corpus, labeled_only=True)
    test_windows = build_context_windows(test_corpus, labeled_only=True)
    if config.scenario.kind == KIND_LOW_RESOURCE:
        ls = corpus.label_set
        to_items = lambda ws: [(w, ls.index(lab)) for w, lab in ws]
        return ConditionPools(ls, to_items(train_windows), to_items(test_windows))
    target = config.scenario.target_class
    binary_ls = LabelSet((f"not:{target}", target))
    return ConditionPools(
        binary_ls,
        binarize(train_windows, target, corpus.label_set),
        binarize(test_windows, target, corpus.label_set),
    )


def evaluate_model(
    model: Model, items: Sequence[tuple[ContextWindow, str | int]]
) -> EvalReport:
    """Score a model on labeled items: F1s, kappa, one-vs-rest AUC per class."""
    X, y = prepare_items(model, items)
    Z = logits_batch(model, X)
    S = sigmoid(Z)
    preds = Z.argmax(axis=1)
    cm = confusion(preds, y, model.label_set.K)
    aucs: list[float | None] = []
    for k in range(model.label_set.K):
        try:
            aucs.append(roc_auc(S[:, k], (y == k).astype(np.int64)))
        except UndefinedAUCError:
            aucs.append(None)
    return EvalReport(
        f1_macro=f1_macro(cm),
        f1_per_class=tuple(f1_per_class(cm).tolist()),
        kappa=cohens_kappa(cm),
        auc_per_class=tuple(aucs),
        confusion=cm,
    )


def carve_validation(items: list, n_total: int | None = None) -> tuple[list, list]:
    """Split an already-shuffled sample into train head and validation tail (20%)."""
    n = len(items) if n_total is None else n_total
    if n < 2:
        raise ValueError("need at least 2 items to carve a validation set")
    n_val = max(1, round_half_up(VAL_FRACTION * n))
    if n_val >= n:
        n_val = n - 1
    return items[: n - n_val], items[n - n_val :]


def run_trial(
    config: ExperimentConfig,
    method: str,
    condition: int | float,
    trial_seed: int,
    pools: ConditionPools | None = None,
) -> TrialResult:
    """One training + evaluation, fully determined by its arguments."""
    method = method.upper()
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    if pools is None:
        pools = build_pools(config)
    spec = config.scenario
    if spec.kind == KIND_LOW_RESOURCE:
        sample = sample_low_resource(pools.train_pool, int(condition), derive_seed(trial_seed, "sample"))
        test_items: list = pools.test_pool
    else:
        sample, test_items = build_condition(
            pools.train_pool, pools.test_pool, spec, float(condition), derive_seed(trial_seed, "sample")
        )
    train_items, val_items = carve_validation(sample)
    model = init_model(pools.label_set, config.hidden_dim, config.features, derive_seed(trial_seed, "init"))
    train_cfg = replace(config.train, seed=derive_seed(trial_seed, "shuffle"))
    t0 = time.perf_counter()
    best, history = train(model, train_items, val_items, config.loss_config_for(method), train_cfg)
    wall = time.perf_counter() - t0
    report = evaluate_model(best, test_items)
    if spec.kind == KIND_LOW_RESOURCE:
        f1, auc = report.f1_macro, None
    else:
        f1, auc = report.f1_per_class[1], report.auc_per_class[1]
    return TrialResult(
        method=method,
        kind=spec.kind,
        condition=condition,
        seed=trial_seed,
        f1=f1,
        kappa=report.kappa,
        auc=auc,
        epochs_run=len(history.epochs),
        wall_time=wall,
    )


def _run_sweep(config: ExperimentConfig) -> SweepResult:
    pools = build_pools(config)
    spec = config.scenario
    trials: list[TrialResult] = []
    for ci, cond in enumerate(spec.conditions):
        for method in config.methods:
            for pi in range(spec.partitions_per_condition):
                trial_seed = derive_seed(config.master_seed, "trial", ci, pi)
                try:
                    tr = run_trial(config, method, cond, trial_seed, pools=pools)
                except Exception as exc:
                    raise RuntimeError(
                        f"trial failed: method={method} condition={cond} "
                        f"partition={pi} seed={trial_seed}: {exc}"
                    ) from exc
                if not config.record_timing:
                    tr = replace(tr, wall_time=0.0)
                trials.append(tr)
    trials.sort(key=lambda t: (t.method, t.condition, t.seed))
    return SweepResult(config.to_dict(), trials)


def sweep_low_resource(config: ExperimentConfig) -> SweepResult:
    """size x method x partition grid on the multi-class task."""
    if config.scenario.kind != KIND_LOW_RESOURCE:
        raise ValueError(f"scenario kind must be {KIND_LOW_RESOURCE!r}, got {config.scenario.kind!r}")
    return _run_sweep(config)


def sweep_imbalance(config: ExperimentConfig) -> SweepResult:
    """ratio x method x partition grid on the binarized target-class task."""
    if config.scenario.kind not in (KIND_TRAIN_SHIFT, KIND_TRAIN_TEST_SHIFT):
        raise ValueError(f"scenario kind must be an imbalance kind, got {config.scenario.kind!r}")
    return _run_sweep(config)


# --- aggregation and reporting ----------------------------------------------

def _mean_sd_ci(values: list[float]) -> tuple[float, float, float]:
    n = len(values)
    arr = np.asarray(values, dtype=np.float64)
    mean = float(arr.mean())
    if n < 2:
        return mean, 0.0, 0.0
    sd = float(arr.std(ddof=1))
    t = float(sps.t.ppf(0.975, n - 1))
    return mean, sd, t * sd / np.sqrt(n)


def aggregate(trials: Sequence[TrialResult]) -> list[dict]:
    """Per (method, condition) mean / sample sd / 95% t-interval over seeds."""
    groups: dict[tuple[str, str, int | float], list[TrialResult]] = {}
    for tr in trials:
        groups.setdefault((tr.method, tr.kind, tr.condition), []).append(tr)
    out = []
    for (method, kind, cond) in sorted(groups, key=lambda k: (k[0], k[2])):
        members = groups[(method, kind, cond)]
        rec: dict = {"method": method, "kind": kind, "condition": cond, "n": len(members)}
        for metric in ("f1", "kappa", "auc"):
            vals = [getattr(t, metric) for t in members]
            if any(v is None for v in vals):
                rec[metric] = None
                continue
            mean, sd, ci = _mean_sd_ci(vals)
            rec[metric] = {"mean": mean, "sd": sd, "ci95": ci}
        out.append(rec)
    return out


def _fmt(value: float | int | None) -> str:
    return "" if value is None else repr(value)


def write_trials_csv(trials: Sequence[TrialResult], path: Path) -> None:
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRIALS_CSV_HEADER)
        for t in trials:
            writer.writerow(
                [t.method, t.kind, _fmt(t.condition), _fmt(t.seed), _fmt(t.f1),
                 _fmt(t.kappa), _fmt(t.auc), _fmt(t.epochs_run), _fmt(t.wall_time)]
            )


def load_trials_csv(path: str | Path) -> list[TrialResult]:
    """Read trials.csv back; aggregates recomputed from it match exactly."""
    out = []
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            kind = row["kind"]
            cond = int(row["condition"]) if kind == KIND_LOW_RESOURCE else float(row["condition"])
            out.append(
                TrialResult(
                    method=row["method"],
                    kind=kind,
                    condition=cond,
                    seed=int(row["seed"]),
                    f1=float(row["f1"]),
                    kappa=float(row["kappa"]),
                    auc=float(row["auc"]) if row["auc"] else None,
                    epochs_run=int(row["epochs"]),
                    wall_time=float(row["wall_time"]),
                )
            )
    return out


def _plotdata(trials: Sequence[TrialResult], summary: list[dict]) -> dict:
    conditions = sorted({t.condition for t in trials})
    methods = sorted({t.method for t in trials})
    by_key = {(r["method"], r["condition"]): r for r in summary}
    out: dict = {}
    for metric in ("f1", "kappa", "auc"):
        if any(by_key[(m, c)][metric] is None for m in methods for c in conditions):
            continue
        series = {}
        for m in methods:
            series[m] = {
                "y": [by_key[(m, c)][metric]["mean"] for c in conditions],
                "err": [by_key[(m, c)][metric]["ci95"] for c in conditions],
            }
        out[metric] = {"x": conditions, "series": series}
    return out


def _dump_json(obj: object, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def report(sweep: SweepResult, out_dir: str | Path) -> dict[str, Path]:
    """Emit trials.csv, summary.json, and plotdata.json into out_dir."""
    if not sweep.trials:
        raise ValueError("cannot report an empty sweep")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trials = sorted(sweep.trials, key=lambda t: (t.method, t.condition, t.seed))
    summary = aggregate(trials)
    paths = {
        "trials": out / "trials.csv",
        "summary": out / "summary.json",
        "plotdata": out / "plotdata.json",
    }
    write_trials_csv(trials, paths["trials"])
    _dump_json(summary, paths["summary"])
    _dump_json(_plotdata(trials, summary), paths["plotdata"])
    return paths


def save_sweep(sweep: SweepResult, path: str | Path) -> None:
    _dump_json({"config": sweep.config, "trials": [t.to_dict() for t in sweep.trials]}, Path(path))


def load_sweep(path: str | Path) -> SweepResult:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    return SweepResult(obj["config"], [TrialResult.from_dict(t) for t in obj["trials"]])

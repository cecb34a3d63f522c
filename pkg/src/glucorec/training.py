"""Training protocol and evaluation harness.

A generic model is pre-trained on the pooled training examples of all
subjects (each scaled with its own training-split statistics), then fine
tuned per subject, with early stopping on validation MSE throughout.
Runs are repeated over several seeds; reports aggregate both the
mean-over-seeds score and the score of the seed with the best validation
MAE per subject.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Iterable

import numpy as np
from scipy import stats as scipy_stats

from . import baselines
from .autodiff import Adam, backward, scale as ad_scale, add_n
from .errors import ConfigError, FitError
from .models import (
    EncodedExample,
    ModelCheckpoint,
    ModelConfig,
    ResidualStack,
    collate,
    default_model_config,
    encode_example,
)
from .preprocess import DaySplit, split
from .recexamples import (
    HORIZONS,
    ExampleClass,
    Scenario,
    ScenarioDataset,
    extract,
    train_label_events,
)
from .timeseries import EventStream, ScalingParams, compute_scaling

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    scenario: Scenario
    example_class: ExampleClass
    architecture: str = "nbeats"
    learning_rate: float = 0.001
    batch_size: int | None = 64        # None tunes over batch_size_grid
    batch_size_grid: tuple[int, ...] = (32, 64, 128)
    patience: int = 10
    max_epochs: int = 200
    seeds: tuple[int, ...] = tuple(range(10))
    model: ModelConfig | None = None   # None takes the tuned defaults

    def model_config(self) -> ModelConfig:
        if self.model is not None:
            return self.model
        return default_model_config(self.architecture, self.scenario,
                                    self.example_class)

    def with_model_overrides(self, **overrides) -> "TrainConfig":
        return replace(self, model=replace(self.model_config(), **overrides))


@dataclass
class SubjectData:
    """Everything training needs for one subject, statistics all train-split."""

    subject_id: str
    datasets: dict[str, ScenarioDataset]
    scaling: ScalingParams
    tod_model: baselines.BaselineModel | None
    global_model: baselines.BaselineModel | None

    def encoded(self, split_name: str, scenario: Scenario) -> list[EncodedExample]:
        return [encode_example(ex, scenario, self.scaling)
                for ex in self.datasets[split_name].examples]


def prepare_subject(stream: EventStream, scenario: Scenario,
                    example_class: ExampleClass,
                    day_split: DaySplit | None = None) -> SubjectData:
    if day_split is None:
        day_split = split(stream)
    datasets = extract(stream, scenario, example_class, day_split)
    scaling = compute_scaling(stream, *day_split.range("train"),
                              provenance="train")
    events = train_label_events(stream, scenario, day_split)
    tod = baselines.fit(events, kind="tod") if events else None
    glob = baselines.fit(events, kind="global") if events else None
    return SubjectData(stream.subject_id, datasets, scaling, tod, glob)


def _group_by_tau(encoded: list[EncodedExample]) -> dict[int, list[EncodedExample]]:
    groups: dict[int, list[EncodedExample]] = {}
    for e in encoded:
        groups.setdefault(e.tau, []).append(e)
    return groups


def predictions_scaled(stack: ResidualStack,
                       encoded: list[EncodedExample]) -> np.ndarray:
    """Eval-mode predictions, aligned with the input order."""
    out = np.zeros(len(encoded))
    by_tau: dict[int, list[int]] = {}
    for i, e in enumerate(encoded):
        by_tau.setdefault(e.tau, []).append(i)
    for tau, idx in sorted(by_tau.items()):
        batch = collate([encoded[i] for i in idx])
        out[np.array(idx)] = stack.predict_scaled(batch)[:, 0]
    return out


def validation_mse(stack: ResidualStack, encoded: list[EncodedExample]) -> float:
    """Plain final-prediction MSE in scaled units (the early-stopping metric)."""
    preds = predictions_scaled(stack, encoded)
    labels = np.array([e.label for e in encoded])
    return float(np.mean((preds - labels) ** 2))


@dataclass
class FitResult:
    weights: dict[str, np.ndarray]
    best_val_mse: float
    best_epoch: int
    epochs_run: int
    val_history: list[float] = field(default_factory=list)


def fit_model(stack: ResidualStack, train_encoded: list[EncodedExample],
              valid_encoded: list[EncodedExample], cfg: TrainConfig,
              seed: int, batch_size: int) -> FitResult:
    """Adam + early stopping; returns the minimum-validation-loss weights."""
    if not train_encoded:
        raise FitError("no training examples")
    if not valid_encoded:
        raise FitError("no validation examples")
    opt = Adam(stack.parameters(), lr=cfg.learning_rate)
    rng = np.random.default_rng([seed, 0x7A1])  # shuffling + dropout masks
    best = float("inf")
    best_state = stack.state_arrays()
    best_epoch = -1
    wait = 0
    history: list[float] = []

    for epoch in range(cfg.max_epochs):
        order = rng.permutation(len(train_encoded))
        for lo in range(0, len(order), batch_size):
            chunk = [train_encoded[i] for i in order[lo:lo + batch_size]]
            total = len(chunk)
            losses = []
            for tau, group in sorted(_group_by_tau(chunk).items()):
                batch = collate(group)
                out = stack.forward_batch(batch, train_mode=True, rng=rng)
                losses.append(ad_scale(stack.loss(out, batch.labels),
                                       len(group) / total))
            opt.zero_grad()
            backward(add_n(losses))
            opt.step()
        val = validation_mse(stack, valid_encoded)
        history.append(val)
        if val < best:
            best = val
            best_state = stack.state_arrays()
            best_epoch = epoch
            wait = 0
        else:
            wait += 1
            if wait >= cfg.patience:
                break
    stack.load_state(best_state)
    return FitResult(best_state, best, best_epoch, len(history), history)


def pretrain(cfg: TrainConfig, subjects: list[SubjectData],
             seed: int) -> dict[str, np.ndarray]:
    """Train one generic weight set on the pooled subjects' examples."""
    if len(subjects) < 2:
        raise FitError("pre-training needs at least 2 subjects")
    train_pool: list[EncodedExample] = []
    valid_pool: list[EncodedExample] = []
    for subject in subjects:
        train_pool += subject.encoded("train", cfg.scenario)
        valid_pool += subject.encoded("valid", cfg.scenario)
    if not train_pool:
        raise FitError("pre-training pool is empty")
    stack = ResidualStack(cfg.model_config(), seed)
    batch_size = cfg.batch_size or cfg.batch_size_grid[1]
    result = fit_model(stack, train_pool, valid_pool, cfg, seed, batch_size)
    logger.info("pretrain seed=%d: best val MSE %.6f at epoch %d (%d epochs)",
                seed, result.best_val_mse, result.best_epoch, result.epochs_run)
    return result.weights


def _val_mae_natural(stack: ResidualStack, subject: SubjectData,
                     cfg: TrainConfig) -> float:
    encoded = subject.encoded("valid", cfg.scenario)
    preds = predictions_scaled(stack, encoded)
    lo, hi = subject.scaling.channels[cfg.scenario.label_channel]
    natural = np.clip(preds * (hi - lo) + lo, 0.0, None)
    labels = np.array([e.label_natural for e in encoded])
    return float(np.mean(np.abs(natural - labels)))


def finetune(generic_weights: dict[str, np.ndarray] | None,
             subject: SubjectData, cfg: TrainConfig,
             seed: int) -> ModelCheckpoint | None:
    """Continue training on one subject; None when the subject lacks data."""
    train_encoded = subject.encoded("train", cfg.scenario)
    valid_encoded = subject.encoded("valid", cfg.scenario)
    if not train_encoded or not valid_encoded or subject.tod_model is None:
        logger.warning("subject %s skipped for %s/%s: insufficient examples",
                       subject.subject_id, cfg.scenario.value,
                       cfg.example_class.value)
        return None

    def run(batch_size: int) -> tuple[ResidualStack, FitResult]:
        stack = ResidualStack(cfg.model_config(), seed)
        if generic_weights is not None:
            stack.load_state(generic_weights)
        result = fit_model(stack, train_encoded, valid_encoded, cfg, seed,
                           batch_size)
        return stack, result

    if cfg.batch_size is not None:
        stack, result = run(cfg.batch_size)
    else:
        candidates = [(run(bs), bs) for bs in cfg.batch_size_grid]
        ((stack, result), _) = min(
            candidates, key=lambda item: (item[0][1].best_val_mse, item[1]))
    val_mae = _val_mae_natural(stack, subject, cfg)
    return ModelCheckpoint(
        config=cfg.model_config(), subject_id=subject.subject_id, seed=seed,
        scaling=subject.scaling, tod_model=subject.tod_model,
        weights=stack.state_arrays(), val_mae=val_mae)


def train_all(cfg: TrainConfig, subjects: list[SubjectData]
              ) -> tuple[list[ModelCheckpoint], list[str]]:
    """Full protocol: per seed, pre-train on the pool then fine-tune each subject."""
    checkpoints: list[ModelCheckpoint] = []
    skipped: list[str] = []
    for seed in cfg.seeds:
        generic = pretrain(cfg, subjects, seed) if len(subjects) >= 2 else None
        for subject in subjects:
            ckpt = finetune(generic, subject, cfg, seed)
            if ckpt is None:
                if subject.subject_id not in skipped:
                    skipped.append(subject.subject_id)
            else:
                checkpoints.append(ckpt)
    return checkpoints, skipped


# -- evaluation ----------------------------------------------------------------

def _metrics(preds: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    rmse = float(np.sqrt(np.mean((preds - labels) ** 2)))
    mae = float(np.mean(np.abs(preds - labels)))
    return rmse, mae


@dataclass
class EvalRow:
    subject_id: str
    seed: int
    rmse: float
    mae: float
    val_mae: float | None
    n_examples: int
    per_horizon: dict[int, dict] = field(default_factory=dict)


@dataclass
class EvalReport:
    """Scores per subject/seed plus aggregates.

    ``best_score`` MAE is guaranteed <= ``mean_score`` MAE when evaluated
    on the validation split (the selection metric); on test no such
    ordering holds and none is asserted. ``significance`` holds one-tailed
    paired t-tests of the model's per-subject mean scores against each
    baseline (lower is better, so small p favors the model).
    """

    scenario: str
    example_class: str
    architecture: str
    rows: list[EvalRow] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)
    mean_score: dict = field(default_factory=dict)
    best_score: dict = field(default_factory=dict)
    baseline_scores: dict = field(default_factory=dict)
    significance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "example_class": self.example_class,
            "architecture": self.architecture,
            "rows": [{**vars(r)} for r in self.rows],
            "skipped": self.skipped,
            "mean_score": self.mean_score,
            "best_score": self.best_score,
            "baseline_scores": self.baseline_scores,
            "significance": self.significance,
        }

    def render_text(self) -> str:
        lines = [f"{self.scenario} ({self.example_class}, {self.architecture})",
                 f"{'model':<14}{'RMSE':>8}{'MAE':>8}"]
        for name, score in self.baseline_scores.items():
            lines.append(f"{name:<14}{score['rmse']:>8.2f}{score['mae']:>8.2f}")
        for name, score in (("mean", self.mean_score), ("best", self.best_score)):
            if score:
                lines.append(f"{self.architecture}.{name:<8}"
                             f"{score['rmse']:>8.2f}{score['mae']:>8.2f}")
        return "\n".join(lines)


def predictions_natural(ckpt_or_stack, subject: SubjectData, cfg: TrainConfig,
                        encoded: list[EncodedExample]) -> np.ndarray:
    stack = ckpt_or_stack.build_stack() \
        if isinstance(ckpt_or_stack, ModelCheckpoint) else ckpt_or_stack
    preds = predictions_scaled(stack, encoded)
    lo, hi = subject.scaling.channels[cfg.scenario.label_channel]
    return np.clip(preds * (hi - lo) + lo, 0.0, None)


def evaluate(checkpoints: list[ModelCheckpoint], subjects: list[SubjectData],
             cfg: TrainConfig, split_name: str = "test",
             horizon: int | None = None,
             exclude_subjects: Iterable[str] = (),
             exclude_added_label_events: bool = False) -> EvalReport:
    """Score checkpoints in natural units; aggregate mean and best scores.

    ``best`` picks, per subject, the seed whose validation MAE was lowest,
    mirroring how a deployed model would be selected.
    ``exclude_subjects`` drops subjects from scoring only (they still
    contribute to pre-training); ``exclude_added_label_events`` scores
    only examples whose label meal was genuinely self-reported, for the
    pre-processing ablation.
    """
    report = EvalReport(cfg.scenario.value, cfg.example_class.value,
                        cfg.architecture)
    excluded = set(exclude_subjects)
    subjects = [s for s in subjects if s.subject_id not in excluded]
    by_subject: dict[str, SubjectData] = {s.subject_id: s for s in subjects}

    def select(encoded):
        if horizon is not None:
            encoded = [e for e in encoded if e.tau == horizon]
        return encoded

    for ckpt in checkpoints:
        subject = by_subject.get(ckpt.subject_id)
        if subject is None:
            continue
        raw = subject.datasets[split_name].examples
        pairs = [(r, e) for r, e in
                 zip(raw, subject.encoded(split_name, cfg.scenario))]
        if exclude_added_label_events:
            pairs = [(r, e) for r, e in pairs if not r.label_event_added]
        encoded = select([e for _, e in pairs])
        if not encoded:
            report.skipped.append(f"{ckpt.subject_id}/seed{ckpt.seed}")
            continue
        preds = predictions_natural(ckpt, subject, cfg, encoded)
        labels = np.array([e.label_natural for e in encoded])
        rmse, mae = _metrics(preds, labels)
        row = EvalRow(ckpt.subject_id, ckpt.seed, rmse, mae, ckpt.val_mae,
                      len(encoded))
        for tau in HORIZONS:
            mask = np.array([e.tau == tau for e in encoded])
            if mask.any():
                h_rmse, h_mae = _metrics(preds[mask], labels[mask])
                row.per_horizon[tau] = {"rmse": h_rmse, "mae": h_mae,
                                        "n": int(mask.sum())}
        report.rows.append(row)

    report.mean_score, report.best_score = aggregate(report.rows)
    per_subject_base, report.baseline_scores = _baseline_detail(
        subjects, cfg, split_name, horizon, exclude_added_label_events)
    report.significance = _significance_vs_baselines(report.rows,
                                                     per_subject_base)
    return report


def _significance_vs_baselines(rows: list[EvalRow],
                               per_subject_base: dict) -> dict:
    """Paired one-tailed t-tests: model per-subject mean scores vs baselines."""
    model_by_subject: dict[str, list[EvalRow]] = {}
    for row in rows:
        model_by_subject.setdefault(row.subject_id, []).append(row)
    out: dict = {}
    for kind, base_scores in per_subject_base.items():
        shared = sorted(set(model_by_subject) & set(base_scores))
        if len(shared) < 2:
            continue
        for metric in ("rmse", "mae"):
            model = [float(np.mean([getattr(r, metric)
                                    for r in model_by_subject[sid]]))
                     for sid in shared]
            base = [base_scores[sid][metric] for sid in shared]
            out[f"model_vs_{kind}_{metric}"] = significance(model, base)
    return out


def aggregate(rows: list[EvalRow]) -> tuple[dict, dict]:
    """Mean-over-seeds and best-validation-seed scores, averaged over subjects."""
    subjects_seen = sorted({r.subject_id for r in rows})
    if not subjects_seen:
        return {}, {}
    per_subject_mean = []
    per_subject_best = []
    for sid in subjects_seen:
        subject_rows = [r for r in rows if r.subject_id == sid]
        per_subject_mean.append((np.mean([r.rmse for r in subject_rows]),
                                 np.mean([r.mae for r in subject_rows])))
        best = min(subject_rows,
                   key=lambda r: (r.val_mae if r.val_mae is not None
                                  else float("inf"), r.seed))
        per_subject_best.append((best.rmse, best.mae))
    mean_score = {
        "rmse": float(np.mean([m[0] for m in per_subject_mean])),
        "mae": float(np.mean([m[1] for m in per_subject_mean])),
    }
    best_score = {
        "rmse": float(np.mean([m[0] for m in per_subject_best])),
        "mae": float(np.mean([m[1] for m in per_subject_best])),
    }
    return mean_score, best_score


def _baseline_detail(subjects: list[SubjectData], cfg: TrainConfig,
                     split_name: str, horizon: int | None,
                     exclude_added_label_events: bool = False
                     ) -> tuple[dict, dict]:
    per_subject_scores: dict[str, dict[str, dict]] = {"global": {}, "tod": {}}
    for kind in ("global", "tod"):
        for subject in subjects:
            model = subject.global_model if kind == "global" else subject.tod_model
            if model is None:
                continue
            examples = subject.datasets[split_name].examples
            if exclude_added_label_events:
                examples = [e for e in examples if not e.label_event_added]
            if horizon is not None:
                examples = [e for e in examples if e.tau == horizon]
            if not examples:
                continue
            preds = np.array([baselines.predict(model, e) for e in examples])
            labels = np.array([e.label for e in examples])
            rmse, mae = _metrics(preds, labels)
            per_subject_scores[kind][subject.subject_id] = {"rmse": rmse,
                                                            "mae": mae}
    aggregates = {}
    for kind, by_subject in per_subject_scores.items():
        if by_subject:
            aggregates[kind] = {
                "rmse": float(np.mean([s["rmse"] for s in by_subject.values()])),
                "mae": float(np.mean([s["mae"] for s in by_subject.values()])),
            }
    return per_subject_scores, aggregates


def evaluate_baselines(subjects: list[SubjectData], cfg: TrainConfig,
                       split_name: str = "test",
                       horizon: int | None = None) -> dict:
    """Global and ToD average scores on the same examples, averaged per subject."""
    _, aggregates = _baseline_detail(subjects, cfg, split_name, horizon)
    return aggregates


def significance(scores_a: list[float], scores_b: list[float]) -> dict:
    """One-tailed paired t-test that model A's scores are lower than B's.

    Returns p for H1: mean(a - b) < 0. With fewer than two pairs the
    result is undefined and reported as such.
    """
    if len(scores_a) != len(scores_b):
        raise ConfigError("paired t-test needs equal-length score vectors")
    n = len(scores_a)
    if n < 2:
        return {"p_value": None, "t": None, "df": None,
                "note": "undefined: fewer than 2 pairs"}
    d = np.asarray(scores_a, dtype=float) - np.asarray(scores_b, dtype=float)
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    df = n - 1
    if sd == 0.0:
        p = 0.5 if mean == 0.0 else (0.0 if mean < 0 else 1.0)
        return {"p_value": p, "t": None, "df": df,
                "note": "zero-variance differences"}
    t = mean / (sd / np.sqrt(n))
    p = float(scipy_stats.t.cdf(t, df))
    return {"p_value": p, "t": float(t), "df": df}


def load_ohio_test_exclusions() -> dict[str, list[str]]:
    """Per-scenario subject IDs held out of real-dataset test scoring.

    Shipped as configuration (the exclusions are data-dependent, not
    logic); irrelevant for synthetic corpora.
    """
    text = resources.files("glucorec.data") \
        .joinpath("ohio_test_exclusions.json").read_text(encoding="utf-8")
    table = json.loads(text)
    return {name: list(ids) for name, ids in table.items()
            if name != "comment"}


# -- transfer-learning experiment ----------------------------------------------

EXPERIMENT_HORIZONS = (30, 45, 60, 75, 90)


def _filter_subject(subject: SubjectData, tau: int) -> SubjectData:
    filtered = {}
    for name, ds in subject.datasets.items():
        kept = [ex for ex in ds.examples if ex.tau == tau]
        filtered[name] = ScenarioDataset(ds.scenario, ds.example_class,
                                         name, kept)
    return SubjectData(subject.subject_id, filtered, subject.scaling,
                       subject.tod_model, subject.global_model)


def horizon_experiment(cfg: TrainConfig, subjects: list[SubjectData]) -> dict:
    """All-horizon vs single-horizon training, compared per horizon.

    Trains one model family on all horizons, then for each tau in
    {30, 45, 60, 75, 90} trains models on that horizon only and evaluates
    both on that horizon's test examples.
    """
    all_ckpts, _ = train_all(cfg, subjects)
    table: dict = {"scenario": cfg.scenario.value,
                   "example_class": cfg.example_class.value,
                   "architecture": cfg.architecture, "rows": []}
    for tau in EXPERIMENT_HORIZONS:
        narrowed = [_filter_subject(s, tau) for s in subjects]
        trainable = [s for s in narrowed
                     if s.datasets["train"].examples
                     and s.datasets["valid"].examples]
        if not trainable:
            table["rows"].append({"tau": tau, "available": False})
            continue
        single_ckpts, _ = train_all(cfg, trainable)
        all_report = evaluate(all_ckpts, subjects, cfg, horizon=tau)
        single_report = evaluate(single_ckpts, narrowed, cfg, horizon=tau)
        table["rows"].append({
            "tau": tau, "available": True,
            "all_horizons": {"mean": all_report.mean_score,
                             "best": all_report.best_score},
            "single_horizon": {"mean": single_report.mean_score,
                               "best": single_report.best_score},
        })
    return table

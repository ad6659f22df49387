"""Cross-validated training and evaluation of classifier cells, and ablation grids."""
import json
import logging
import os
from dataclasses import dataclass, field, fields, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from ..dataset import (
    AugmentationPolicy,
    FoldAssignment,
    PhantomConfig,
    Volume,
    augment,
    generate_from_config,
    load_dataset,
    load_folds,
    oversample_indices,
    stratified_kfold,
    tta_predict,
)
from ..other.metr import (
    METRICS,
    FoldResult,
    atomic_write,
    format_mean_std,
    metrics_table,
    summarize,
    write_table,
)
from ..preproc import preprocess
from ..tensor import SGD, NonFiniteError, SgdConfig, save_checkpoint
from .aggregation import AGGREGATORS
from .classifier import MODES, Classifier, build_classifier
from .encoders import VARIANT_NAMES, count_params
from .losses import (
    MINING_MODES,
    RECIPES,
    CenterState,
    LabeledBatch,
    LossConfig,
    combine_terms,
    joint_loss_terms,
)

logger = logging.getLogger(__name__)

SORT_KEYS = tuple(f"{m}_{s}" for m in METRICS for s in ("mean", "std")) + ("params",)


class TrainingDivergedError(RuntimeError):
    """Loss or activations became non-finite during training."""


@dataclass(frozen=True)
class ExperimentConfig:
    """One (variant × mode × aggregator × loss recipe) cell and its protocol.

    ``data_dir`` takes precedence over ``phantom``; ``batch_size`` counts volumes
    in both modes.
    Test-time augmentation draws from ``tta_augmentation``, or from the training
    ``augmentation`` when it is None.
    """

    arch: str = "f-R2D"
    mode: str = "slice"
    aggregator: Optional[str] = None
    recipe: str = "focal"
    gamma: float = 2.0
    center_alpha: float = 0.5
    center_lambda: float = 0.003
    triplet_margin: float = 0.2
    triplet_lambda: float = 1.0
    mining_mode: str = "batch-hard"
    normalize_embeddings: bool = True
    lr: float = 0.01
    weight_decay: float = 0.01
    momentum: float = 0.0
    epochs: int = 30
    batch_size: int = 8
    seed: int = 0
    folds: int = 10
    target_xy: int = 64
    tta: int = 10
    threshold: float = 0.5
    data_dir: Optional[str] = None
    phantom: PhantomConfig = field(default_factory=PhantomConfig)
    augmentation: AugmentationPolicy = field(default_factory=AugmentationPolicy.default)
    tta_augmentation: Optional[AugmentationPolicy] = None
    output_dir: str = "results"
    save_checkpoints: bool = True
    verbose: bool = False

    def validate(self) -> "ExperimentConfig":
        """Check tokens, the mode/aggregator invariant and ranges."""
        if self.arch not in VARIANT_NAMES:
            raise ValueError(
                f"Unknown arch '{self.arch}'. Valid names: {', '.join(VARIANT_NAMES)}."
            )
        if self.mode not in MODES:
            raise ValueError(f"Unknown mode '{self.mode}'. Valid modes: {', '.join(MODES)}.")
        if self.mode == "slice" and self.aggregator:
            raise ValueError("Slice mode forbids an aggregator.")
        if self.mode == "volume" and self.aggregator not in AGGREGATORS:
            raise ValueError(
                f"Volume mode needs an aggregator in {AGGREGATORS}, got {self.aggregator!r}."
            )
        if self.recipe not in RECIPES:
            raise ValueError(
                f"Unknown recipe '{self.recipe}'. Valid recipes: {', '.join(RECIPES)}."
            )
        if self.mining_mode not in MINING_MODES:
            raise ValueError(f"Unknown mining_mode '{self.mining_mode}'.")
        if self.epochs < 1 or self.batch_size < 1 or self.folds < 2 or self.tta < 0:
            raise ValueError("epochs, batch_size >= 1, folds >= 2 and tta >= 0 are required.")
        if self.target_xy % 16:
            raise ValueError(f"target_xy must be divisible by 16, got {self.target_xy}.")
        self.loss_config()
        self.sgd_config()
        return self

    def loss_config(self) -> LossConfig:
        """Loss settings."""
        return LossConfig(
            self.recipe,
            self.gamma,
            self.center_alpha,
            self.center_lambda,
            self.triplet_margin,
            self.triplet_lambda,
            self.mining_mode,
            self.normalize_embeddings,
        )

    def sgd_config(self) -> SgdConfig:
        """Optimizer settings."""
        return SgdConfig(self.lr, self.weight_decay, self.momentum)

    def tta_policy(self) -> AugmentationPolicy:
        """Policy of the test-time copies; empty when ``tta`` is 0."""
        if self.tta == 0:
            return AugmentationPolicy.empty()
        if self.tta_augmentation is None:
            return self.augmentation
        return self.tta_augmentation

    def label(self) -> str:
        """Short cell name like ``f-rMC5/volume/bilinear/focal+triplet``."""
        return "/".join(x for x in (self.arch, self.mode, self.aggregator, self.recipe) if x)

    def to_dict(self) -> Dict:
        """JSON-friendly dictionary."""
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["phantom"] = self.phantom.to_dict()
        d["augmentation"] = self.augmentation.to_dict()
        if self.tta_augmentation is not None:
            d["tta_augmentation"] = self.tta_augmentation.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: Dict) -> "ExperimentConfig":
        """Build from a dictionary; unknown keys are rejected."""
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"Unknown config keys {unknown}.")
        d = dict(d)
        if isinstance(d.get("phantom"), dict):
            d["phantom"] = PhantomConfig(**d["phantom"])
        if isinstance(d.get("augmentation"), dict):
            d["augmentation"] = AugmentationPolicy.from_dict(d["augmentation"])
        if isinstance(d.get("tta_augmentation"), dict):
            d["tta_augmentation"] = AugmentationPolicy.from_dict(d["tta_augmentation"])
        return cls(**d).validate()

    def override(self, cell: Dict) -> "ExperimentConfig":
        """Copy with the keys of ``cell`` replaced."""
        return ExperimentConfig.from_dict({**self.to_dict(), **cell})

    def to_json(self, path: str) -> str:
        """Write as JSON."""
        return atomic_write(path, json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def from_json(cls, path: str) -> "ExperimentConfig":
        """Read a JSON config file."""
        with open(path) as f:
            return cls.from_dict(json.load(f))

    @classmethod
    def phantom_benchmark(cls, **overrides) -> "ExperimentConfig":
        """f-rMC5 + bilinear + focal+triplet on 200 easy phantoms, five folds, seed 7.

        Volumes are resampled to 32 pixels in-plane; SGD runs with momentum 0.9 and
        both training and test-time copies use the rigid augmentation policy.

        :param overrides: Fields replaced in the preset.
        :rtype: ExperimentConfig
        """
        settings = dict(
            arch="f-rMC5",
            mode="volume",
            aggregator="bilinear",
            recipe="focal+triplet",
            momentum=0.9,
            epochs=10,
            batch_size=8,
            seed=7,
            folds=5,
            target_xy=32,
            tta=4,
            phantom=PhantomConfig(n=200, difficulty=0.2, seed=7, size=64),
            augmentation=AugmentationPolicy.rigid(seed=7),
            tta_augmentation=AugmentationPolicy.rigid(seed=8),
        )
        settings.update(overrides)
        return cls(**settings).validate()


@dataclass
class FoldRun:
    """Trained model and bookkeeping of one fold."""

    model: Classifier
    history: pd.DataFrame
    trained_ids: set = field(default_factory=set)


@dataclass
class ExperimentResult:
    """Per-fold results, their summary and the files written."""

    config: ExperimentConfig
    folds: List[FoldResult]
    summary: Dict[str, float]
    params: int
    files: List[str] = field(default_factory=list)


def prepare_volumes(volumes: Sequence[Volume], target_xy: int) -> List[Volume]:
    """Z-score and resize every volume; metadata is kept."""
    return [v.with_voxels(preprocess(v, target_xy)[0]) for v in volumes]


def load_data(config: ExperimentConfig) -> Tuple[List[Volume], Optional[FoldAssignment]]:
    """Raw volumes and, when the dataset carries one, its fold assignment."""
    if not config.data_dir:
        return generate_from_config(config.phantom, config.verbose), None
    volumes = load_dataset(config.data_dir)
    folds = None
    if os.path.exists(os.path.join(config.data_dir, "folds.json")):
        lists = load_folds(config.data_dir, volumes)
        if len(lists) == config.folds:
            folds = FoldAssignment([np.asarray(f) for f in lists])
    return volumes, folds


def fold_seed(config: ExperimentConfig, fold: int) -> int:
    """Seed of everything random inside a fold."""
    return config.seed * 1000 + fold


def train_fold(
    config: ExperimentConfig, volumes: Sequence[Volume], train_idx: np.ndarray, fold: int
) -> FoldRun:
    """Train one classifier on ``train_idx`` with oversampling and augmentation.

    :param config: Experiment settings.
    :type config: ExperimentConfig
    :param volumes: Preprocessed volumes.
    :type volumes: Sequence[Volume]
    :param train_idx: Training indices.
    :type train_idx: np.ndarray
    :param fold: Fold number.
    :type fold: int
    :rtype: FoldRun
    """
    seed = fold_seed(config, fold)
    model = build_classifier(config.arch, config.mode, config.aggregator, seed)
    optimizer = SGD(model.parameters(), config.sgd_config())
    loss_config = config.loss_config()
    centers = (
        CenterState.init(model.embedding_dim, config.center_alpha)
        if config.recipe == "focal+center"
        else None
    )
    labels = np.array([volumes[i].label for i in train_idx])
    rows = []
    trained = set()
    model.train()
    for epoch in tqdm(range(config.epochs), disable=not config.verbose, desc=f"fold {fold}"):
        order = train_idx[oversample_indices(labels, len(train_idx), seed * 100 + epoch)]
        sums: Dict[str, float] = {}
        n_batches = 0
        for start in range(0, len(order), config.batch_size):
            picked = order[start : start + config.batch_size]
            batch = [
                augment(volumes[i], config.augmentation, (epoch * len(order) + start + k))
                for k, i in enumerate(picked)
            ]
            try:
                optimizer.zero_grad()
                logits, embeddings, owner = model(batch)
                terms, centers = joint_loss_terms(
                    LabeledBatch(logits, embeddings, model.sample_labels(batch, owner)),
                    loss_config,
                    centers,
                )
                total = combine_terms(terms, loss_config)
                if not np.isfinite(total.item()):
                    raise NonFiniteError(f"loss {total.item()}")
                total.backward()
                optimizer.step()
            except NonFiniteError as e:
                raise TrainingDivergedError(
                    f"Fold {fold}, epoch {epoch}, batch at {start}: {e}"
                ) from e
            trained.update(int(i) for i in picked)
            for name, value in [("loss", total)] + list(terms.items()):
                sums[name] = sums.get(name, 0.0) + value.item()
            n_batches += 1
        rows.append({"epoch": epoch, **{k: v / n_batches for k, v in sums.items()}})
        logger.debug("fold %d epoch %d loss %.5f", fold, epoch, rows[-1]["loss"])
    return FoldRun(model, pd.DataFrame(rows), trained)


def evaluate_fold(
    config: ExperimentConfig,
    model: Classifier,
    volumes: Sequence[Volume],
    test_idx: np.ndarray,
    fold: int,
) -> pd.DataFrame:
    """Hold-out predictions with test-time augmentation, one row per scored sample.

    Copies are drawn from :meth:`ExperimentConfig.tta_policy`.

    :param config: Experiment settings.
    :type config: ExperimentConfig
    :param model: Trained classifier.
    :type model: Classifier
    :param volumes: Preprocessed volumes.
    :type volumes: Sequence[Volume]
    :param test_idx: Hold-out indices.
    :type test_idx: np.ndarray
    :param fold: Fold number.
    :type fold: int
    :rtype: pd.DataFrame
    """
    model.eval()
    policy = config.tta_policy()
    rows = []
    for i in test_idx:
        volume = volumes[i]
        probs = tta_predict(
            model.predict_proba, volume, config.tta, policy, fold_seed(config, fold) + int(i)
        )
        samples = volume.representative_slices if config.mode == "slice" else (-1,)
        for s, p in zip(samples, np.atleast_1d(probs)):
            rows.append(
                {
                    "fold": fold,
                    "volume": volume.name or str(i),
                    "index": int(i),
                    "slice": int(s),
                    "label": volume.label,
                    "score": float(p),
                }
            )
    return pd.DataFrame(rows)


def run_experiment(
    config: ExperimentConfig,
    volumes: Optional[Sequence[Volume]] = None,
    folds: Optional[FoldAssignment] = None,
) -> ExperimentResult:
    """k-fold cross-validation of one cell; writes predictions, metrics and checkpoints.

    Output files under ``config.output_dir``: ``resolved_config.json``,
    ``metrics.csv``/``metrics.txt``, ``predictions.csv`` and per fold
    ``fold_<i>/history.csv`` and ``fold_<i>/checkpoint.zip``. A fold whose
    training diverges is reported as failed and the others still run.

    :param config: Experiment settings.
    :type config: ExperimentConfig
    :param volumes: Raw volumes; loaded or generated from the config when None.
    :type volumes: Optional[Sequence[Volume]]
    :param folds: Fold assignment; stratified from ``config.seed`` when None.
    :type folds: Optional[FoldAssignment]
    :rtype: ExperimentResult
    """
    config.validate()
    if volumes is None:
        volumes, stored = load_data(config)
        folds = folds or stored
    volumes = prepare_volumes(volumes, config.target_xy)
    labels = np.array([v.label for v in volumes])
    if folds is None:
        folds = stratified_kfold(labels, config.folds, config.seed)
    out = config.output_dir
    os.makedirs(out, exist_ok=True)
    files = [config.to_json(os.path.join(out, "resolved_config.json"))]
    logger.info("Running %s with %d folds on %d volumes", config.label(), folds.k, len(volumes))

    results, predictions = [], []
    params = cell_params(config)
    for fold in tqdm(range(folds.k), disable=not config.verbose, desc="folds"):
        fold_dir = os.path.join(out, f"fold_{fold}")
        os.makedirs(fold_dir, exist_ok=True)
        train_idx, test_idx = folds.train_indices(fold), folds.test_indices(fold)
        try:
            run = train_fold(config, volumes, train_idx, fold)
        except TrainingDivergedError as e:
            logger.warning("Fold %d failed: %s", fold, e)
            results.append(FoldResult(fold, error=str(e)))
            continue
        if run.trained_ids & set(int(i) for i in test_idx):
            raise RuntimeError(f"Fold {fold}: hold-out volumes were used for training.")
        files.append(
            atomic_write(
                os.path.join(fold_dir, "history.csv"),
                run.history.to_csv(index=False, float_format="%.8f"),
            )
        )
        if config.save_checkpoints:
            files.append(
                save_checkpoint(run.model, os.path.join(fold_dir, "checkpoint.zip"), config.arch)
            )
        pred = evaluate_fold(config, run.model, volumes, test_idx, fold)
        predictions.append(pred)
        results.append(
            FoldResult.from_scores(fold, pred["score"], pred["label"], config.threshold)
        )
        logger.info("Fold %d AUC %.4f", fold, results[-1].auc)

    summary = summarize(results)
    if predictions:
        files.append(
            atomic_write(
                os.path.join(out, "predictions.csv"),
                pd.concat(predictions).to_csv(index=False, float_format="%.8f"),
            )
        )
    footer = (
        f"{config.label()}  params={params}  "
        f"AUC {format_mean_std(summary['auc_mean'], summary['auc_std'])}\n"
        "std is the population standard deviation over successful folds."
    )
    files += write_table(metrics_table(results), os.path.join(out, "metrics"), footer)
    return ExperimentResult(config, results, summary, params, files)


def cell_params(config: ExperimentConfig) -> int:
    """Learnable parameters of the classifier a cell trains."""
    return count_params(build_classifier(config.arch, config.mode, config.aggregator))


def _cell_dir(i: int, config: ExperimentConfig) -> str:
    safe = "".join(c if c.isalnum() or c in "-+" else "_" for c in config.label())
    return f"cell_{i:02d}_{safe}"


def run_ablation(
    base: ExperimentConfig,
    cells: Sequence[Dict],
    sort_key: str = "auc_mean",
    output_dir: Optional[str] = None,
) -> pd.DataFrame:
    """Run every cell on the same data and folds and tabulate mean ± std metrics.

    Rows are sorted by ``sort_key`` (descending for metrics, stable on ties);
    the cell with the highest mean AUC is marked in column ``best``.

    :param base: Shared settings.
    :type base: ExperimentConfig
    :param cells: Per-cell overrides of ``base``.
    :type cells: Sequence[Dict]
    :param sort_key: Summary column to sort by.
    :type sort_key: str
    :param output_dir: Root of the cell outputs; ``base.output_dir`` when None.
    :type output_dir: Optional[str]
    :rtype: pd.DataFrame
    """
    if sort_key not in SORT_KEYS:
        raise ValueError(f"Unknown sort key '{sort_key}'. Valid keys: {', '.join(SORT_KEYS)}.")
    out = output_dir or base.output_dir
    configs = [base.override(dict(cell)) for cell in (cells or [{}])]
    shared = ("seed", "folds", "data_dir", "phantom", "target_xy")
    for cfg in configs:
        differing = [k for k in shared if getattr(cfg, k) != getattr(configs[0], k)]
        if differing:
            raise ValueError(
                f"Cell {cfg.label()} changes {differing}; all cells must share data and folds."
            )
    volumes, folds = load_data(configs[0])
    if folds is None:
        folds = stratified_kfold([v.label for v in volumes], configs[0].folds, configs[0].seed)

    rows = []
    for i, cfg in enumerate(tqdm(configs, disable=not base.verbose, desc="cells")):
        cfg = replace(cfg, output_dir=os.path.join(out, _cell_dir(i, cfg)))
        result = run_experiment(cfg, volumes, folds)
        row = {
            "cell": i,
            "arch": cfg.arch,
            "mode": cfg.mode,
            "aggregator": cfg.aggregator or "",
            "recipe": cfg.recipe,
            "params": result.params,
        }
        for m in METRICS:
            row[m] = format_mean_std(result.summary[f"{m}_mean"], result.summary[f"{m}_std"])
        row.update({k: v for k, v in result.summary.items() if k.endswith(("_mean", "_std"))})
        row["failed_folds"] = result.summary["failed_folds"]
        rows.append(row)

    df = pd.DataFrame(rows)
    best = df["auc_mean"].idxmax() if df["auc_mean"].notna().any() else None
    df["best"] = ["*" if i == best else "" for i in df.index]
    ascending = sort_key == "params"
    df = df.sort_values(sort_key, ascending=ascending, kind="mergesort", na_position="last")
    os.makedirs(out, exist_ok=True)
    write_table(
        df,
        os.path.join(out, "ablation"),
        "'*' marks the cell with the highest mean AUC; "
        "std is the population standard deviation over folds.",
    )
    return df.reset_index(drop=True)


def load_grid(path: str) -> Tuple[ExperimentConfig, List[Dict], str]:
    """Read ``{"base": {...}, "cells": [...], "sort_key": ...}``."""
    with open(path) as f:
        grid = json.load(f)
    unknown = sorted(set(grid) - {"base", "cells", "sort_key"})
    if unknown:
        raise ValueError(f"Unknown grid keys {unknown}.")
    base = ExperimentConfig.from_dict(grid.get("base", {}))
    return base, list(grid.get("cells", [])), grid.get("sort_key", "auc_mean")

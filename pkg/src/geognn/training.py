"""Training harness: Adam, metrics, dataset splits, and the
pretrain -> finetune -> best-epoch-select -> test loop.

Reports are pure functions of (inputs, seed): they carry no timestamps,
so identical runs produce byte-identical report files.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import save_checkpoint
from .errors import ConfigError, DataError, NumericalError
from .features import FeatureConfig, encode
from .geometry import build_dual_graph
from .model import GeoGNN, ModelConfig, ParamStore
from .molio import Molecule
from .pretrain import PreparedMolecule, loss_pre
from .rng import Rng
from .tensor import Tape, Tensor

logger = logging.getLogger("geognn")

METRIC_DIRECTIONS = {"rmse": "min", "mae": "min", "rocauc": "max"}


@dataclass
class RunConfig:
    epochs: int = 10
    batch_size: int = 32
    lr_body: float = 1e-3
    lr_head: float = 1e-3
    seed: int = 0
    task_type: str = "regression"      # or "classification"
    metric: str = "rmse"               # rmse | mae | rocauc
    tasks: tuple[str, ...] = ("length", "angle", "distance")
    mask_ratio: float = 0.15
    fingerprint_weight: float = 1.0
    max_distance_pairs: int | None = None
    grad_clip: float | None = None
    checkpoint_every: int = 1

    def validate(self) -> "RunConfig":
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch size >= 1")
        if self.task_type not in ("regression", "classification"):
            raise ConfigError(f"unknown task type {self.task_type!r}")
        if self.metric not in METRIC_DIRECTIONS:
            raise ConfigError(f"unknown metric {self.metric!r}")
        if self.task_type == "regression" and self.metric == "rocauc":
            raise ConfigError("rocauc is a classification metric")
        if self.task_type == "classification" and self.metric != "rocauc":
            raise ConfigError(f"{self.metric} is a regression metric")
        if not 0.0 < self.mask_ratio <= 1.0:
            raise ConfigError("mask ratio must lie in (0, 1]")
        return self

    def to_dict(self) -> dict:
        out = asdict(self)
        out["tasks"] = list(self.tasks)
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "RunConfig":
        obj = dict(obj)
        if "tasks" in obj:
            obj["tasks"] = tuple(obj["tasks"])
        return cls(**obj).validate()


# --- optimizer ----------------------------------------------------------------


def adam_step(
    store: ParamStore,
    lr_body: float,
    lr_head: float | None = None,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    head_prefixes: tuple[str, ...] = ("head_down.",),
    grad_clip: float | None = None,
) -> None:
    """One bias-corrected Adam update over every parameter with a gradient.

    Parameters whose names start with a head prefix use lr_head; everything
    else uses lr_body. Missing gradients are treated as zero.
    """
    if lr_head is None:
        lr_head = lr_body
    if grad_clip is not None:
        total = 0.0
        for _, tensor in store.items():
            if tensor.grad is not None:
                total += float((tensor.grad * tensor.grad).sum())
        norm = math.sqrt(total)
        scale = grad_clip / norm if norm > grad_clip else 1.0
    else:
        scale = 1.0

    store.step += 1
    t = store.step
    correction1 = 1.0 - beta1**t
    correction2 = 1.0 - beta2**t
    for name, tensor in store.items():
        grad = tensor.grad
        if grad is None:
            grad = np.zeros_like(tensor.data)
        elif not np.all(np.isfinite(grad)):
            raise NumericalError(f"non-finite gradient for {name}")
        if scale != 1.0:
            grad = grad * scale
        if name not in store.moments:
            store.moments[name] = (np.zeros_like(tensor.data), np.zeros_like(tensor.data))
        m, v = store.moments[name]
        m *= beta1
        m += (1.0 - beta1) * grad
        v *= beta2
        v += (1.0 - beta2) * grad * grad
        m_hat = m / correction1
        v_hat = v / correction2
        lr = lr_head if name.startswith(head_prefixes) else lr_body
        tensor.data = tensor.data - lr * m_hat / (np.sqrt(v_hat) + eps)


# --- metrics -------------------------------------------------------------------


def _paired(preds, targets):
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.shape != targets.shape:
        raise DataError("prediction/target shape mismatch")
    if preds.ndim == 1:
        preds = preds.reshape(-1, 1)
        targets = targets.reshape(-1, 1)
    return preds, targets


def _per_task_regression(preds, targets, fn) -> float:
    preds, targets = _paired(preds, targets)
    values = []
    for task in range(preds.shape[1]):
        keep = ~np.isnan(targets[:, task])
        if not keep.any():
            logger.warning("task %d has no labels; skipped", task)
            continue
        values.append(fn(preds[keep, task], targets[keep, task]))
    if not values:
        raise DataError("no task had any labels")
    return float(np.mean(values))


def metric_rmse(preds, targets) -> float:
    """Root mean squared error; multi-task inputs average per-task values."""
    return _per_task_regression(
        preds, targets, lambda p, t: math.sqrt(float(np.mean((p - t) ** 2)))
    )


def metric_mae(preds, targets) -> float:
    """Mean absolute error; multi-task inputs average per-task values."""
    return _per_task_regression(preds, targets, lambda p, t: float(np.mean(np.abs(p - t))))


def _auc_rank(scores: np.ndarray, labels: np.ndarray) -> float:
    """Rank-statistic AUC with midranks: P(s+ > s-) + 0.5 P(tie)."""
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    npos = int((labels == 1).sum())
    nneg = int((labels == 0).sum())
    rank_sum = float(ranks[labels == 1].sum())
    return (rank_sum - npos * (npos + 1) / 2.0) / (npos * nneg)


def metric_rocauc(scores, labels) -> float:
    """Average ROC-AUC over tasks; single-class tasks are skipped."""
    scores, labels = _paired(scores, labels)
    values = []
    for task in range(scores.shape[1]):
        keep = ~np.isnan(labels[:, task])
        y = labels[keep, task]
        if not set(y.tolist()) <= {0.0, 1.0}:
            raise ConfigError("rocauc requires binary 0/1 labels")
        if (y == 1).sum() == 0 or (y == 0).sum() == 0:
            logger.warning("task %d lacks both classes; skipped", task)
            continue
        values.append(_auc_rank(scores[keep, task], y))
    if not values:
        raise DataError("no task had both classes present")
    return float(np.mean(values))


METRIC_FNS = {"rmse": metric_rmse, "mae": metric_mae, "rocauc": metric_rocauc}


def metric_is_better(metric: str, candidate: float, incumbent: float | None) -> bool:
    if incumbent is None:
        return True
    if METRIC_DIRECTIONS[metric] == "min":
        return candidate < incumbent
    return candidate > incumbent


# --- datasets -------------------------------------------------------------------


@dataclass
class DatasetSplit:
    train: list[Molecule]
    valid: list[Molecule]
    test: list[Molecule]

    def validate(self) -> "DatasetSplit":
        if not self.train:
            raise DataError("training split is empty")
        return self

    @classmethod
    def from_tags(cls, molecules: list[Molecule]) -> "DatasetSplit":
        """Split by each molecule's tag. Untagged molecules train; missing
        valid falls back to train, missing test falls back to valid."""
        train = [m for m in molecules if m.split in (None, "train")]
        valid = [m for m in molecules if m.split == "valid"]
        test = [m for m in molecules if m.split == "test"]
        if not valid:
            valid = train
        if not test:
            test = valid
        return cls(train=train, valid=valid, test=test).validate()

    @classmethod
    def from_index(cls, molecules: list[Molecule], index: dict) -> "DatasetSplit":
        """Split by an index mapping {"train": [ids...], "valid": ..., "test": ...}."""
        by_id = {m.id: m for m in molecules}
        parts = {}
        for part in ("train", "valid", "test"):
            wanted = index.get(part, [])
            missing = [i for i in wanted if i not in by_id]
            if missing:
                raise DataError(f"split index references unknown ids: {missing[:5]}")
            parts[part] = [by_id[i] for i in wanted]
        if not parts["valid"]:
            parts["valid"] = parts["train"]
        if not parts["test"]:
            parts["test"] = parts["valid"]
        return cls(**parts).validate()


def task_names(molecules: list[Molecule]) -> list[str]:
    """Sorted union of label keys that have at least one present value."""
    names = sorted({k for m in molecules for k in m.labels})
    present = [
        n for n in names if any(m.labels.get(n) is not None for m in molecules)
    ]
    for n in names:
        if n not in present:
            logger.warning("label %r has no values anywhere; excluded", n)
    return present


def label_matrix(molecules: list[Molecule], names: list[str]) -> np.ndarray:
    out = np.full((len(molecules), len(names)), np.nan)
    for i, m in enumerate(molecules):
        for j, n in enumerate(names):
            v = m.labels.get(n)
            if v is not None:
                out[i, j] = v
    return out


def prepare_molecules(
    molecules: list[Molecule], features: FeatureConfig, dtype=np.float64
) -> list[PreparedMolecule]:
    return [
        PreparedMolecule(
            molecule=m, graph=(g := build_dual_graph(m)), encoded=encode(g, m, features, dtype=dtype)
        )
        for m in molecules
    ]


# --- pretraining loop -----------------------------------------------------------


@dataclass
class PretrainResult:
    history: list[dict]
    checkpoint_paths: list[str]
    store: ParamStore


def _batches(n: int, batch_size: int, rng: Rng):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def pretrain(
    molecules: list[Molecule],
    model_config: ModelConfig,
    run_config: RunConfig,
    out_dir: str | Path | None = None,
    feature_config: FeatureConfig | None = None,
) -> PretrainResult:
    """Minibatch Adam on the self-supervised loss; one checkpoint per epoch.

    Molecules tagged "valid" form a held-out loss log; everything else trains.
    """
    run_config.validate()
    model_config.validate()
    features = feature_config or FeatureConfig()
    rng = Rng(run_config.seed)
    model = GeoGNN(model_config, features=features, rng=rng)

    train_mols = [m for m in molecules if m.split != "valid"]
    eval_mols = [m for m in molecules if m.split == "valid"]
    if not train_mols:
        raise DataError("no molecules to pretrain on")
    train_items = prepare_molecules(train_mols, features, dtype=model_config.dtype)
    eval_items = prepare_molecules(eval_mols, features, dtype=model_config.dtype)

    out_dir = Path(out_dir) if out_dir is not None else None
    history: list[dict] = []
    paths: list[str] = []

    def write_checkpoint(tag: str, epoch: int):
        if out_dir is None:
            return
        path = out_dir / f"pretrain_{tag}.ckpt"
        save_checkpoint(
            path, model.store, model_config, features, extra={"epoch": epoch, "phase": "pretrain"}
        )
        paths.append(str(path))

    write_checkpoint("epoch000", 0)
    for epoch in range(1, run_config.epochs + 1):
        epoch_rng = rng.fork(f"epoch{epoch}")
        sums: dict[str, float] = {}
        total_sum = 0.0
        count = 0
        try:
            for batch_ids in _batches(len(train_items), run_config.batch_size, epoch_rng.fork("shuffle")):
                batch = [train_items[i] for i in batch_ids]
                batch_rngs = [epoch_rng.fork(f"mol{i}") for i in batch_ids]
                model.store.zero_grad()
                with Tape() as tape:
                    loss, parts = loss_pre(
                        model, batch, batch_rngs,
                        tasks=run_config.tasks,
                        mask_ratio=run_config.mask_ratio,
                        fingerprint_weight=run_config.fingerprint_weight,
                        max_distance_pairs=run_config.max_distance_pairs,
                        mode="train",
                    )
                tape.backward(loss)
                adam_step(
                    model.store, run_config.lr_body, run_config.lr_head,
                    grad_clip=run_config.grad_clip,
                )
                total_sum += loss.item() * len(batch)
                for k, v in parts.items():
                    sums[k] = sums.get(k, 0.0) + v * len(batch)
                count += len(batch)
        except NumericalError as err:
            logger.error("pretraining diverged at epoch %d: %s", epoch, err)
            raise
        entry = {"epoch": epoch, "loss": total_sum / count}
        entry.update({k: v / count for k, v in sums.items()})
        if eval_items:
            eval_loss, eval_parts = loss_pre(
                model, eval_items,
                [Rng(run_config.seed).fork(f"eval{i}") for i in range(len(eval_items))],
                tasks=run_config.tasks,
                mask_ratio=run_config.mask_ratio,
                fingerprint_weight=run_config.fingerprint_weight,
                max_distance_pairs=run_config.max_distance_pairs,
                mode="eval",
            )
            entry["eval_loss"] = eval_loss.item()
        history.append(entry)
        logger.info("pretrain epoch %d: loss %.6f", epoch, entry["loss"])
        if epoch % run_config.checkpoint_every == 0 or epoch == run_config.epochs:
            write_checkpoint(f"epoch{epoch:03d}", epoch)

    if out_dir is not None:
        log_path = out_dir / "pretrain_log.json"
        log_path.parent.mkdir(parents=True, exist_ok=True)
        log_path.write_text(json.dumps({"history": history, "config": run_config.to_dict()},
                                       sort_keys=True, indent=2) + "\n")
    return PretrainResult(history=history, checkpoint_paths=paths, store=model.store)


# --- downstream loop ------------------------------------------------------------


def _downstream_predictions(model: GeoGNN, items: list[PreparedMolecule]) -> np.ndarray:
    rows = []
    for item in items:
        emb = model.forward(item.graph, item.encoded, mode="eval")
        rows.append(model.head_downstream(emb.h_graph).data.reshape(-1))
    return np.asarray(rows)


def _downstream_batch_loss(
    model: GeoGNN,
    items: list[PreparedMolecule],
    labels: np.ndarray,
    task_type: str,
    rng: Rng,
) -> Tensor:
    total = Tensor(np.zeros(()))
    used = 0
    for row, item in enumerate(items):
        present = ~np.isnan(labels[row])
        if not present.any():
            continue
        emb = model.forward(item.graph, item.encoded, mode="train", rng=rng.fork(f"drop{row}"))
        pred = model.head_downstream(emb.h_graph)
        y = np.where(present, labels[row], 0.0).reshape(1, -1)
        mask = present.astype(np.float64).reshape(1, -1)
        if task_type == "regression":
            diff = T.sub(pred, Tensor(y))
            sq = T.mul(T.mul(diff, diff), Tensor(mask))
            mol_loss = T.mul(T.sum_all(sq), 1.0 / float(mask.sum()))
        else:
            mol_loss = T.bce_with_logits(pred, Tensor(y), mask)
        total = T.add(total, mol_loss)
        used += 1
    if used == 0:
        raise DataError("batch had no labelled molecules")
    return T.mul(total, 1.0 / used)


@dataclass
class FinetuneResult:
    report: dict
    store: ParamStore
    model_config: ModelConfig


def finetune(
    split: DatasetSplit,
    model_config: ModelConfig,
    run_config: RunConfig,
    init_store: ParamStore | None = None,
    out_dir: str | Path | None = None,
    feature_config: FeatureConfig | None = None,
) -> FinetuneResult:
    """Train the downstream head (and body) on the train split, select the
    epoch with the best validation metric, and report the test metric of
    that epoch. Ties keep the earliest epoch."""
    run_config.validate()
    features = feature_config or FeatureConfig()
    names = task_names(split.train)
    if not names:
        raise DataError("no labelled tasks in the training split")
    model_config = ModelConfig.from_dict({**model_config.to_dict(), "num_tasks": len(names)})

    rng = Rng(run_config.seed)
    model = GeoGNN(model_config, features=features, rng=rng)
    if init_store is not None:
        model.store.load_values(init_store)
        loaded = set(init_store.names()) & set(model.store.names())
        logger.info("loaded %d parameter tensors from checkpoint", len(loaded))

    items = {
        part: prepare_molecules(getattr(split, part), features, dtype=model_config.dtype)
        for part in ("train", "valid", "test")
    }
    labels = {part: label_matrix(getattr(split, part), names) for part in ("train", "valid", "test")}
    metric_fn = METRIC_FNS[run_config.metric]

    best_metric = None
    best_epoch = 0
    best_store = model.store.copy()
    epochs_log: list[dict] = []
    for epoch in range(1, run_config.epochs + 1):
        epoch_rng = rng.fork(f"epoch{epoch}")
        epoch_loss = 0.0
        count = 0
        for batch_ids in _batches(len(items["train"]), run_config.batch_size, epoch_rng.fork("shuffle")):
            batch = [items["train"][i] for i in batch_ids]
            batch_labels = labels["train"][batch_ids]
            model.store.zero_grad()
            with Tape() as tape:
                loss = _downstream_batch_loss(
                    model, batch, batch_labels, run_config.task_type, epoch_rng.fork("drop")
                )
            tape.backward(loss)
            adam_step(
                model.store, run_config.lr_body, run_config.lr_head,
                grad_clip=run_config.grad_clip,
            )
            epoch_loss += loss.item() * len(batch)
            count += len(batch)

        train_metric = metric_fn(_downstream_predictions(model, items["train"]), labels["train"])
        valid_metric = metric_fn(_downstream_predictions(model, items["valid"]), labels["valid"])
        epochs_log.append(
            {
                "epoch": epoch,
                "train_loss": epoch_loss / max(count, 1),
                "train_metric": train_metric,
                "valid_metric": valid_metric,
            }
        )
        logger.info(
            "finetune epoch %d: loss %.6f train %s %.6f valid %s %.6f",
            epoch, epoch_loss / max(count, 1),
            run_config.metric, train_metric, run_config.metric, valid_metric,
        )
        if metric_is_better(run_config.metric, valid_metric, best_metric):
            best_metric = valid_metric
            best_epoch = epoch
            best_store = model.store.copy()

    eval_model = GeoGNN(model_config, features=features, store=best_store)
    test_metric = metric_fn(_downstream_predictions(eval_model, items["test"]), labels["test"])
    report = {
        "kind": "finetune_report",
        "metric": run_config.metric,
        "task_names": names,
        "seed": run_config.seed,
        "config": {"model": model_config.to_dict(), "run": run_config.to_dict()},
        "epochs": epochs_log,
        "selected_epoch": best_epoch,
        "valid_metric": best_metric,
        "test_metric": test_metric,
        "splits": {part: len(getattr(split, part)) for part in ("train", "valid", "test")},
    }
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(
            out_dir / "finetune_best.ckpt", best_store, model_config, features,
            extra={"epoch": best_epoch, "phase": "finetune", "task_names": names},
        )
        (out_dir / "finetune_report.json").write_text(
            json.dumps(report, sort_keys=True, indent=2) + "\n"
        )
    return FinetuneResult(report=report, store=best_store, model_config=model_config)


def evaluate(
    store: ParamStore,
    model_config: ModelConfig,
    molecules: list[Molecule],
    metric: str,
    names: list[str] | None = None,
    feature_config: FeatureConfig | None = None,
) -> dict:
    """Metric of the stored parameters on an arbitrary molecule list."""
    if metric not in METRIC_FNS:
        raise ConfigError(f"unknown metric {metric!r}")
    features = feature_config or FeatureConfig()
    names = names if names is not None else task_names(molecules)
    if not names:
        raise DataError("no labelled tasks to evaluate")
    if len(names) != model_config.num_tasks:
        raise ConfigError(
            f"checkpoint predicts {model_config.num_tasks} tasks but the dataset has {len(names)}"
        )
    model = GeoGNN(model_config, features=features, store=store)
    items = prepare_molecules(molecules, features, dtype=model_config.dtype)
    preds = _downstream_predictions(model, items)
    value = METRIC_FNS[metric](preds, label_matrix(molecules, names))
    return {"kind": "evaluate_report", "metric": metric, "value": value,
            "task_names": names, "count": len(molecules)}


def embed_molecules(
    store: ParamStore,
    model_config: ModelConfig,
    molecules: list[Molecule],
    feature_config: FeatureConfig | None = None,
) -> list[tuple[str, np.ndarray]]:
    features = feature_config or FeatureConfig()
    model = GeoGNN(model_config, features=features, store=store)
    out = []
    for item in prepare_molecules(molecules, features, dtype=model_config.dtype):
        emb = model.forward(item.graph, item.encoded, mode="eval")
        out.append((item.molecule.id, emb.h_graph.data.copy()))
    return out

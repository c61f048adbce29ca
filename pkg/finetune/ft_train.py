"""
监督微调 (Supervised operator training) with a labeled-sample budget.

Init modes:
    random      fresh FNO from the run seed
    pretrained  encoder from a pretraining checkpoint, fresh seeded head
    frozen      as pretrained, encoder weights excluded from the optimizer
"""
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from datamodel.dm_ops import ChannelStats, channel_stats, denormalize, fingerprint, normalize, pad_channels, split
from datamodel.dm_types import PHYSICAL, ChannelSpec, Dataset, Grid2D
from diffcore import dc_ops
from diffcore.dc_optim import Adam
from diffcore.dc_tape import backward, no_record, record_forward
from diffcore.dc_tensor import Tensor
from finetune.ft_metrics import EvalReport, relative_l2
from finetune.ft_rollout import rollout_dataset
from fno.fno_bundle import TaskSpec, fold_time, model_inputs, supervised_pairs, unfold_time
from fno.fno_checkpoint import Checkpoint, checkpoint_from_model, load_checkpoint, model_from_checkpoint, save_checkpoint
from fno.fno_model import FnoConfig, FnoModel
from pretrain.pt_train import LOSS_CURVE_FILE, write_loss_curve
from utils.constant import LEARNING_RATE, MAX_BATCH_SIZE
from utils.errors import ConfigError, ShapeError
from utils.utils import derive_seed, timed

INIT_MODES = ("random", "pretrained", "frozen")


@dataclass
class TrainRun:
    init: str = "random"
    checkpoint: Optional[str] = None
    n: Optional[int] = None
    epochs: int = 10
    batch_size: Optional[int] = None
    seed: int = 1
    lr: float = LEARNING_RATE
    split_seed: int = 0
    fractions: Tuple[float, float, float] = (0.8, 0.1, 0.1)
    model: Dict[str, object] = field(default_factory=dict)
    task_kind: Optional[str] = None
    rollout_steps: int = 0

    def __post_init__(self):
        if self.init not in INIT_MODES:
            raise ConfigError(f"init mode must be one of {INIT_MODES}, got '{self.init}'")
        if self.init != "random" and not self.checkpoint:
            raise ConfigError(f"init mode '{self.init}' needs a checkpoint path")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.n is not None and self.n < 1:
            raise ConfigError(f"labeled budget must be >= 1, got {self.n}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")

    def effective_batch(self, n: int) -> int:
        return self.batch_size or max(1, min(MAX_BATCH_SIZE, n))

    def to_dict(self) -> dict:
        return asdict(self)


def pad_dataset(dataset: Dataset, channels: int) -> Dataset:
    """Zero-fills extra physical input channels so a model lifted from another PDE can read the dataset."""
    if dataset.C == channels:
        return dataset
    extra = [ChannelSpec(f"pad{i}", PHYSICAL) for i in range(channels - dataset.C)]
    return replace(dataset, inputs=pad_channels(dataset.inputs, channels, axis=2), channels=dataset.channels + extra)


class TrainedOperator:
    """
    A model together with everything needed to map datasets to and from model space:
    task layout, input statistics and per-channel target scale.
    """

    def __init__(self, model: FnoModel, task: TaskSpec, stats: ChannelStats,
                 target_scale: Optional[Sequence[float]] = None):
        self.model = model
        self.task = task
        self.stats = stats
        self.target_scale = None if target_scale is None else np.asarray(target_scale, dtype=np.float64)

    @property
    def _scale_map(self) -> np.ndarray:
        if self.target_scale is None:
            return np.ones((self.task.model_out, 1, 1))
        return np.tile(self.target_scale, self.task.t_out)[:, None, None]

    def _prepare(self, dataset: Dataset) -> Dataset:
        if dataset.C > self.task.channels:
            raise ShapeError(f"dataset has {dataset.C} channels, operator reads {self.task.channels}")
        if dataset.C < self.task.channels and self.task.kind == "next_step":
            raise ShapeError("channel padding is not supported for next-step forecasters")
        ds = pad_dataset(dataset, self.task.channels)
        ds = replace(ds, inputs=normalize(ds.inputs, self.stats))
        if self.task.kind == "next_step" and ds.solutions is not None:
            ds = replace(ds, solutions=normalize(ds.solutions, self.stats))
        return ds

    def inputs(self, dataset: Dataset) -> np.ndarray:
        return model_inputs(self._prepare(dataset), self.task).astype(self.model.config.np_dtype)

    def pairs(self, dataset: Dataset) -> Tuple[np.ndarray, np.ndarray]:
        """(X, Y) in training space: normalized inputs, scaled (or normalized, next-step) targets."""
        X, Y = supervised_pairs(self._prepare(dataset), self.task)
        if self.task.kind != "next_step":
            Y = Y / self._scale_map
        dtype = self.model.config.np_dtype
        return X.astype(dtype), Y.astype(dtype)

    def run_model(self, X: np.ndarray) -> np.ndarray:
        with no_record():
            out = [self.model(Tensor(X[s:s + MAX_BATCH_SIZE])).data for s in range(0, X.shape[0], MAX_BATCH_SIZE)]
        return np.concatenate(out) if out else np.zeros((0, self.task.model_out) + X.shape[2:], X.dtype)

    def to_physical(self, out: np.ndarray) -> np.ndarray:
        if self.task.kind == "next_step":
            return denormalize(out.astype(np.float64), self.stats)
        return out.astype(np.float64) * self._scale_map

    def predict_inputs(self, X: np.ndarray) -> np.ndarray:
        return self.to_physical(self.run_model(X))

    def predict(self, dataset: Dataset) -> np.ndarray:
        """Physical-unit predictions aligned with `targets(dataset)`; next-step tasks use every window."""
        if self.task.kind == "next_step" and dataset.labeled:
            X, _ = supervised_pairs(self._prepare(dataset), self.task)
            return self.predict_inputs(X.astype(self.model.config.np_dtype))
        return self.predict_inputs(self.inputs(dataset))

    def targets(self, dataset: Dataset) -> np.ndarray:
        return supervised_pairs(dataset, self.task)[1].astype(np.float64)

    def predict_frames(self, dataset: Dataset) -> np.ndarray:
        """Static and one-shot predictions as (n, T, C_out, H, W)."""
        return unfold_time(self.predict_inputs(self.inputs(dataset)), self.task.t_out, self.task.out_channels)

    def features(self, dataset: Dataset) -> np.ndarray:
        X = self.inputs(dataset)
        with no_record():
            out = [self.model.extract_backbone_features(Tensor(X[s:s + MAX_BATCH_SIZE])).data
                   for s in range(0, X.shape[0], MAX_BATCH_SIZE)]
        return np.concatenate(out).astype(np.float64)

    def step(self, window: np.ndarray) -> np.ndarray:
        """Next-step forecast in physical units: (B, t_in, C, H, W) -> (B, C, H, W)."""
        if self.task.kind != "next_step":
            raise ShapeError(f"step needs a next-step forecaster, task is '{self.task.kind}'")
        x = fold_time(normalize(np.asarray(window, dtype=np.float64), self.stats))
        return self.predict_inputs(x.astype(self.model.config.np_dtype))


def operator_from_checkpoint(ckpt: Checkpoint) -> TrainedOperator:
    if ckpt.task is None or ckpt.input_stats is None:
        raise ConfigError("checkpoint carries no task layout or input statistics")
    model = model_from_checkpoint(ckpt)
    return TrainedOperator(model, ckpt.task, ckpt.input_stats, ckpt.target_scale)


def evaluate_operator(op: TrainedOperator, dataset: Dataset) -> float:
    """Relative L2 in physical units over the dataset (every window for next-step tasks)."""
    return relative_l2(op.predict(dataset), op.targets(dataset))


def _target_scale(train: Dataset, task: TaskSpec) -> Optional[List[float]]:
    if task.kind == "next_step":
        return None
    y = train.solutions.astype(np.float64)
    rms = np.sqrt(np.mean(y * y, axis=(0, 1, 3, 4)))
    return [float(s) if s > 0 else 1.0 for s in rms]


def _init_model(dataset: Dataset, run: TrainRun, task: TaskSpec, grid: Grid2D):
    """Returns (model, task, input stats or None) for the run's init mode."""
    if run.init == "random":
        config = FnoConfig(in_channels=task.model_in, out_channels=task.model_out, **run.model)
        config.check_resolution(*grid.shape)
        return FnoModel(config, seed=run.seed), task, None

    ckpt = load_checkpoint(run.checkpoint)
    model = model_from_checkpoint(ckpt)
    model.discard_decoder()
    source_channels = ckpt.task.channels if ckpt.task is not None else dataset.C
    if source_channels < dataset.C:
        raise ShapeError(f"checkpoint reads {source_channels} channels, dataset has {dataset.C}")
    if source_channels > dataset.C:
        logging.info(f"Zero-padding {dataset.C} -> {source_channels} input channels for the pretrained encoder")
        task = replace(task, channels=source_channels)
    if model.config.in_channels != task.model_in:
        raise ShapeError(f"checkpoint lifts {model.config.in_channels} channels, task needs {task.model_in}")
    model.attach_head(task.model_out, derive_seed(run.seed, "head"))
    if run.init == "frozen":
        model.freeze_encoder()
    stats = ckpt.input_stats.padded(source_channels) if ckpt.input_stats is not None else None
    return model, task, stats


def train_supervised(
    dataset: Dataset,
    run: TrainRun,
    out_dir: Optional[str | Path] = None,
) -> Tuple[Checkpoint, EvalReport, TrainedOperator]:
    """
    Trains on the first n samples of the seeded training split and evaluates on the test split.

    Returns:
        Tuple[Checkpoint, EvalReport, TrainedOperator]: Finetuned checkpoint,
        train/test relative L2 with the loss curve (and rollout errors for
        next-step tasks), and the operator used for evaluation.
    """
    if not dataset.labeled:
        raise ShapeError(f"supervised training needs a labeled dataset, '{dataset.pde}' has no solutions")
    train_all, _, test = split(dataset, run.fractions, run.split_seed)
    n = run.n if run.n is not None else train_all.n
    if n > train_all.n:
        raise ConfigError(f"budget n = {n} exceeds the {train_all.n}-sample training split")
    if test.n == 0:
        raise ConfigError("the test split is empty; raise the dataset size or the test fraction")
    train = train_all.subset(range(n))

    with timed() as elapsed:
        task = TaskSpec.for_dataset(dataset, run.task_kind)
        model, task, stats = _init_model(dataset, run, task, dataset.grid)
        if stats is None:
            stats = channel_stats(train)
        op = TrainedOperator(model, task, stats, _target_scale(train, task))
        X, Y = op.pairs(train)

        batch = run.effective_batch(X.shape[0])
        logging.info(f"Step 1: training '{dataset.pde}' ({run.init}) on n={n} "
                     f"({X.shape[0]} pairs), batch {batch}, {run.epochs} epochs, seed {run.seed}")
        optimizer = Adam(model.parameters(), lr=run.lr)
        curve: List[float] = []
        for epoch in range(run.epochs):
            order = np.random.default_rng(derive_seed(run.seed, "epoch", epoch)).permutation(X.shape[0])
            total = 0.0
            for start in range(0, X.shape[0], batch):
                idx = order[start:start + batch]
                with record_forward() as tape:
                    loss = dc_ops.relative_l2(model(Tensor(X[idx])), Tensor(Y[idx]))
                    backward(tape, loss)
                optimizer.step()
                total += loss.item() * len(idx)
            curve.append(total / X.shape[0])
            logging.debug(f"finetune epoch {epoch + 1}/{run.epochs}: loss {curve[-1]:.6f}")

        logging.info("Step 2: evaluating on the train and test splits")
        train_rl2 = evaluate_operator(op, train)
        test_rl2 = evaluate_operator(op, test)
        errors: List[float] = []
        if run.rollout_steps > 0 and task.kind == "next_step":
            errors = rollout_dataset(op, test, run.rollout_steps)[1]

    report = EvalReport(
        pde=dataset.pde,
        init=run.init,
        n=n,
        seed=run.seed,
        train_rl2=train_rl2,
        test_rl2=test_rl2,
        rollout=errors,
        secs=elapsed[0],
        curve=curve,
    )
    ckpt = checkpoint_from_model(
        model,
        "finetuned",
        seed=run.seed,
        epochs=run.epochs,
        dataset_fingerprint=fingerprint(train),
        input_stats=stats,
        target_scale=op.target_scale.tolist() if op.target_scale is not None else None,
        task=task,
        extra={"init": run.init, "n": n, "source_checkpoint": run.checkpoint},
    )
    if out_dir is not None:
        save_checkpoint(ckpt, out_dir)
        write_loss_curve(curve, Path(out_dir) / LOSS_CURVE_FILE)
        (Path(out_dir) / "report.json").write_text(report.to_json(), encoding="utf-8")
    logging.info(f"Finished: train rl2 {train_rl2:.4f}, test rl2 {test_rl2:.4f}, gap {report.gap:.4f}")
    return ckpt, report, op

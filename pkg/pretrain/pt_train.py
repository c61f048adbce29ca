"""
无监督预训练 (Unsupervised pretraining) of the FNO encoder/decoder on unlabeled inputs.
"""
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from datamodel.dm_ops import channel_stats, fingerprint, normalize_dataset
from datamodel.dm_types import Dataset
from diffcore import dc_ops
from diffcore.dc_optim import Adam
from diffcore.dc_tape import backward, record_forward
from diffcore.dc_tensor import Tensor
from fno.fno_bundle import TaskSpec, model_inputs, physical_channel_mask
from fno.fno_checkpoint import Checkpoint, checkpoint_from_model, save_checkpoint
from fno.fno_model import FnoModel
from pretrain.pt_proxy import BlurSpec, MaskSpec, apply_blur, apply_mask
from utils.constant import LEARNING_RATE, MAX_BATCH_SIZE
from utils.errors import ConfigError, ModelStateError
from utils.utils import derive_seed, run_indexed_jobs

LOSSES: Dict[str, Callable[[Tensor, Tensor], Tensor]] = {
    "relative_l2": dc_ops.relative_l2,
    "mse": dc_ops.mse,
}
ORDERS = ("mask_blur", "blur_mask")
LOSS_CURVE_FILE = "loss.csv"


@dataclass
class PretrainConfig:
    mask: MaskSpec = field(default_factory=MaskSpec)
    blur: BlurSpec = field(default_factory=BlurSpec)
    epochs: int = 10
    batch_size: int = MAX_BATCH_SIZE
    lr: float = LEARNING_RATE
    seed: int = 1
    loss: str = "relative_l2"
    order: str = "mask_blur"
    n: Optional[int] = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"pretrain batch size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"pretrain epochs must be >= 0, got {self.epochs}")
        if self.loss not in LOSSES:
            raise ConfigError(f"unknown loss '{self.loss}', expected one of {sorted(LOSSES)}")
        if self.order not in ORDERS:
            raise ConfigError(f"unknown proxy order '{self.order}', expected one of {ORDERS}")

    def to_dict(self) -> dict:
        return asdict(self)


def perturb_sample(x: np.ndarray, config: PretrainConfig, seed: int,
                   channel_mask: Optional[np.ndarray] = None) -> np.ndarray:
    """Applies mask and blur to one (C, H, W) sample; sigma is drawn per sample."""
    sigma = config.blur.sample(np.random.default_rng(derive_seed(seed, "sigma")))
    mask_seed = derive_seed(seed, "mask")
    if config.order == "mask_blur":
        masked, _ = apply_mask(x, config.mask, mask_seed, channel_mask)
        return apply_blur(masked, sigma, channel_mask)
    blurred = apply_blur(x, sigma, channel_mask)
    return apply_mask(blurred, config.mask, mask_seed, channel_mask)[0]


def perturb_batch(batch: np.ndarray, config: PretrainConfig, seed: int,
                  channel_mask: Optional[np.ndarray] = None) -> np.ndarray:
    jobs = list(range(batch.shape[0]))
    out = run_indexed_jobs(
        lambda i: perturb_sample(batch[i], config, derive_seed(seed, i), channel_mask),
        jobs,
        label="augmentation",
    )
    return np.stack(out).astype(batch.dtype) if out else batch.copy()


def _reconstruction_loss(model: FnoModel, corrupted: np.ndarray, clean: np.ndarray, loss: str) -> float:
    if not model.has_decoder:
        raise ModelStateError("pretraining needs a model with its decoder attached")
    with record_forward() as tape:
        recon = model.reconstruct(Tensor(corrupted))
        value = LOSSES[loss](recon, Tensor(clean.astype(recon.dtype)))
        backward(tape, value)
    return value.item()


def pretrain_step(model: FnoModel, batch: np.ndarray, config: PretrainConfig, seed: int,
                  channel_mask: Optional[np.ndarray] = None) -> float:
    """
    One reconstruction step: x~ = blur(mask(x)), loss = L(decode(encode(x~)), x)
    over the full field, averaged over the batch. Gradients are accumulated
    into the model parameters; the optimizer update is left to the caller.
    """
    corrupted = perturb_batch(batch, config, seed, channel_mask)
    return _reconstruction_loss(model, corrupted, batch, config.loss)


def autoencode_step(model: FnoModel, batch: np.ndarray, loss: str = "relative_l2") -> float:
    return _reconstruction_loss(model, batch.copy(), batch, loss)


def write_loss_curve(losses: List[float], path: str | Path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame({"epoch": np.arange(1, len(losses) + 1), "loss": losses}).to_csv(p, index=False)
    return p


def train_pretrain(
    dataset: Dataset,
    model: FnoModel,
    config: PretrainConfig,
    task: Optional[TaskSpec] = None,
    out_dir: Optional[str | Path] = None,
) -> Tuple[Checkpoint, List[float]]:
    """
    Epoch loop over an unlabeled (or labeled, solutions ignored) dataset.

    Args:
        dataset (Dataset): Training inputs; the first config.n samples are used when n is set.
        model (FnoModel): Model with its pretraining decoder.
        config (PretrainConfig): Proxy-task and optimizer settings.
        task (TaskSpec | None): Model-space mapping, defaults to the dataset's task.
        out_dir (str | Path | None): When set, the checkpoint and loss.csv are written there.

    Returns:
        Tuple[Checkpoint, List[float]]: Checkpoint tagged "pretrained" and the per-epoch mean loss.
    """
    if not model.has_decoder:
        raise ModelStateError("pretraining needs a model with its decoder attached")
    if config.n is not None:
        if config.n > dataset.n:
            raise ConfigError(f"pretrain.n = {config.n} exceeds the {dataset.n} available samples")
        dataset = dataset.subset(range(config.n))
    if dataset.n == 0:
        raise ConfigError("cannot pretrain on an empty dataset")
    task = task or TaskSpec.for_dataset(dataset)

    logging.info(f"Step 1: normalizing {dataset.n} '{dataset.pde}' samples")
    normalized, stats = normalize_dataset(dataset.without_solutions(), channel_stats(dataset))
    X = model_inputs(normalized, task).astype(model.config.np_dtype)
    channel_mask = physical_channel_mask(task, dataset.physical_mask())

    logging.info(f"Step 2: pretraining for {config.epochs} epochs (mask {config.mask.ratio}, "
                 f"sigma [{config.blur.sigma_min}, {config.blur.sigma_max}], order {config.order})")
    optimizer = Adam(model.parameters(), lr=config.lr)
    losses: List[float] = []
    N = X.shape[0]
    for epoch in range(config.epochs):
        order = np.random.default_rng(derive_seed(config.seed, "epoch", epoch)).permutation(N)
        total = 0.0
        for b, start in enumerate(range(0, N, config.batch_size)):
            idx = order[start:start + config.batch_size]
            loss = pretrain_step(model, X[idx], config, derive_seed(config.seed, "augment", epoch, b), channel_mask)
            optimizer.step()
            total += loss * len(idx)
        losses.append(total / N)
        logging.info(f"pretrain epoch {epoch + 1}/{config.epochs}: loss {losses[-1]:.6f}")

    ckpt = checkpoint_from_model(
        model,
        "pretrained",
        epochs=config.epochs,
        dataset_fingerprint=fingerprint(dataset),
        input_stats=stats,
        task=task,
        extra={"pretrain": config.to_dict()},
    )
    if out_dir is not None:
        save_checkpoint(ckpt, out_dir)
        write_loss_curve(losses, Path(out_dir) / LOSS_CURVE_FILE)
    logging.info("Step 3: pretraining finished")
    return ckpt, losses

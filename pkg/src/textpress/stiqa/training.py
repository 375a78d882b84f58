"""Training and evaluation of the quality assessor."""

from __future__ import annotations

import copy
import logging
import time
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from ..imagedata import ALPHABET, ASSESS_HEIGHT, ASSESS_WIDTH, RasterImage
from ..metrics import RegressionMetrics, regression_metrics
from .losses import regression_loss
from .model import StiqaConfig, StiqaModel

log = logging.getLogger(__name__)

LabeledRegion = Tuple[RasterImage, float]


def _stack(regions: Sequence[LabeledRegion]):
    images, labels = [], []
    for img, label in regions:
        if img.shape != (ASSESS_HEIGHT, ASSESS_WIDTH):
            raise ValueError(f"training crops must be {ASSESS_HEIGHT}x{ASSESS_WIDTH}, got {img.shape}")
        if not 0.0 <= label <= 1.0:
            raise ValueError(f"label {label} outside [0, 1]")
        images.append(img.pixels)
        labels.append(label)
    x = torch.tensor(np.stack(images)[:, None], dtype=torch.float32)
    return x, torch.tensor(labels, dtype=torch.float32)


def split_indices(n: int, val_fraction: float, seed: int):
    """Seeded train/validation split; validation gets at least one item."""
    if n < 2:
        raise ValueError("need at least 2 labeled regions to split")
    perm = np.random.default_rng(seed).permutation(n)
    n_val = min(n - 1, max(1, int(round(n * val_fraction))))
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def predict(model: StiqaModel, x: torch.Tensor, batch_size: int = 256) -> np.ndarray:
    model.eval()
    outs = []
    with torch.no_grad():
        for i in range(0, len(x), batch_size):
            outs.append(model(x[i:i + batch_size]).double().numpy())
    return np.concatenate(outs) if outs else np.zeros(0)


def augment_batch(x: torch.Tensor, gen: torch.Generator) -> torch.Tensor:
    """Random horizontal/vertical flips and polarity inversion per crop.

    Blur, noise and block quantization look the same under all three, so the
    quality label is unchanged."""
    flips = torch.rand(len(x), 3, generator=gen) < 0.5
    x = torch.where(flips[:, 0, None, None, None], x.flip(-1), x)
    x = torch.where(flips[:, 1, None, None, None], x.flip(-2), x)
    return torch.where(flips[:, 2, None, None, None], 1.0 - x, x)


def pretrain_recognizer(model: StiqaModel, images: torch.Tensor, texts: Sequence[str], epochs: int,
                        batch_size: int = 16, lr: float = 1e-3, seed: int = 0) -> List[float]:
    """Fit the probability branch as a text recognizer with CTC.

    A blank class is appended to the 37 classes only for the CTC objective;
    the branch's softmax over the 37 characters is what the assessor sees.
    """
    gen = torch.Generator().manual_seed(seed)
    params = list(model.recognizer.parameters())
    for p in params:
        p.requires_grad_(True)
    blank_bias = torch.zeros(1, requires_grad=True)
    opt = torch.optim.Adam(params + [blank_bias], lr=lr)
    targets = [torch.tensor([ALPHABET.index(c) + 1 for c in t], dtype=torch.long) for t in texts]
    history = []
    model.train()
    for _ in range(epochs):
        order = torch.randperm(len(images), generator=gen)
        total = 0.0
        for i in range(0, len(order), batch_size):
            idx = order[i:i + batch_size]
            logits = model.recognizer.logits(images[idx])
            blank = blank_bias.expand(logits.shape[0], logits.shape[1], 1)
            logp = F.log_softmax(torch.cat([blank, logits], dim=-1), dim=-1).transpose(0, 1)
            tg = [targets[j] for j in idx.tolist()]
            lengths = torch.tensor([len(t) for t in tg])
            loss = F.ctc_loss(logp, torch.cat(tg), torch.full((len(idx),), logp.shape[0]), lengths,
                              blank=0, zero_infinity=True)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        history.append(total / len(images))
    if model.config.recognizer_mode == "frozen":
        model.recognizer.requires_grad_(False)
    return history


def train(config: StiqaConfig, labeled_regions: Sequence[LabeledRegion],
          texts: Optional[Sequence[str]] = None) -> StiqaModel:
    """Train with Adam on a seeded split; return the lowest-validation-MAE
    snapshot. ``texts`` (transcriptions) are only needed when the recognizer
    branch is pretrained."""
    if len(labeled_regions) < 2:
        raise ValueError("training needs at least 2 labeled regions")
    x, y = _stack(labeled_regions)
    train_idx, val_idx = split_indices(len(y), config.val_fraction, config.seed)
    torch.manual_seed(config.seed)
    model = StiqaModel(config)

    pre_history: List[float] = []
    if config.recognizer_pretrain_epochs and config.variant != "conv":
        if texts is None:
            raise ValueError("recognizer pretraining needs the region transcriptions")
        pre_history = pretrain_recognizer(
            model, x[train_idx], [texts[i] for i in train_idx], config.recognizer_pretrain_epochs,
            config.batch_size, config.learning_rate, config.seed,
        )

    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.AdamW(params, lr=config.learning_rate, weight_decay=config.weight_decay)
    sched = None
    if config.lr_schedule == "cosine":
        sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=config.epochs)
    gen = torch.Generator().manual_seed(config.seed)
    xt, yt = x[train_idx], y[train_idx]
    xv, yv = x[val_idx], y[val_idx].double().numpy()

    best_mae, best_state, best_epoch = float("inf"), None, -1
    history = []
    start = time.time()
    for epoch in range(config.epochs):
        model.train()
        order = torch.randperm(len(yt), generator=gen)
        total = 0.0
        for i in range(0, len(order), config.batch_size):
            idx = order[i:i + config.batch_size]
            xb = augment_batch(xt[idx], gen) if config.augment else xt[idx]
            loss = regression_loss(yt[idx], model(xb), config.epsilon, config.loss)
            if not torch.isfinite(loss):
                raise FloatingPointError(
                    f"non-finite loss {loss.item()} at epoch {epoch}, batch {i // config.batch_size}; "
                    f"check labels and learning rate ({config.learning_rate})"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        if sched is not None:
            sched.step()
        val_mae = float(np.mean(np.abs(predict(model, xv) - yv)))
        history.append({"epoch": epoch, "train_loss": total / len(yt), "val_mae": val_mae})
        log.debug("epoch %d loss %.4f val_mae %.4f", epoch, total / len(yt), val_mae)
        if val_mae < best_mae:
            best_mae, best_epoch = val_mae, epoch
            best_state = copy.deepcopy(model.state_dict())

    model.load_state_dict(best_state)
    model.eval()
    model.meta = {
        "split_seed": config.seed,
        "val_indices": val_idx.tolist(),
        "best_epoch": best_epoch,
        "best_val_mae": best_mae,
        "history": history,
        "recognizer_pretrain_loss": pre_history,
        "train_seconds": time.time() - start,
    }
    return model


def evaluate(model: StiqaModel, labeled_regions: Sequence[LabeledRegion]) -> RegressionMetrics:
    """MAE, Spearman and Pearson between labels and model scores."""
    if len(labeled_regions) < 2:
        raise ValueError("evaluation needs at least 2 regions")
    x, y = _stack(labeled_regions)
    return regression_metrics(y.double().numpy(), predict(model, x))


def validation_set(model: StiqaModel, labeled_regions: Sequence[LabeledRegion]) -> List[LabeledRegion]:
    """The held-out regions recorded in the model's metadata."""
    return [labeled_regions[i] for i in model.meta["val_indices"]]

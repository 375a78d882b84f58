"""Scene-text quality assessor.

Two feature branches read a 32x128 text crop:

* a small convolutional-recurrent recognizer that emits a 37-way character
  probability sequence, and
* a single 7x7 convolution producing a spatial feature map.

A transformer encoder self-attends over the embedded probability sequence; a
transformer decoder lets the image features cross-attend to the encoder
output. Pooling, two fully connected layers and a sigmoid give the score.
Ablation variants drop branches or the transformer.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Dict, Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..imagedata import ASSESS_HEIGHT, ASSESS_WIDTH, RasterImage
from ..labels import NUM_CLASSES
from .losses import LOSS_KINDS

VARIANTS = ("full", "prob_transformer", "prob", "conv")
LR_SCHEDULES = ("constant", "cosine")
RECOGNIZER_MODES = ("joint", "frozen")
# which token stream queries the other in the decoder of the full model
CROSS_QUERIES = ("prob", "image")


@dataclass
class StiqaConfig:
    embed_dim: int = 128
    num_heads: int = 4
    encoder_layers: int = 2
    decoder_layers: int = 2
    ff_dim: int = 256
    epsilon: float = 0.1
    learning_rate: float = 1e-3
    batch_size: int = 16
    epochs: int = 500
    seed: int = 0
    variant: str = "full"
    loss: str = "both"
    recognizer_mode: str = "joint"
    recognizer_pretrain_epochs: int = 0
    val_fraction: float = 0.2
    augment: bool = True
    lr_schedule: str = "cosine"
    weight_decay: float = 0.1
    cross_query: str = "prob"

    def __post_init__(self):
        if self.embed_dim < 1 or self.num_heads < 1:
            raise ValueError("embed_dim and num_heads must be positive")
        if self.embed_dim % self.num_heads:
            raise ValueError("embed_dim must be divisible by num_heads")
        if self.encoder_layers < 1 or self.decoder_layers < 1:
            raise ValueError("layer counts must be positive")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"loss must be one of {LOSS_KINDS}")
        if self.recognizer_mode not in RECOGNIZER_MODES:
            raise ValueError(f"recognizer_mode must be one of {RECOGNIZER_MODES}")
        if self.cross_query not in CROSS_QUERIES:
            raise ValueError(f"cross_query must be one of {CROSS_QUERIES}")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ValueError(f"lr_schedule must be one of {LR_SCHEDULES}")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in (0, 1)")

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Dict) -> "StiqaConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def sinusoidal_encoding(length: int, dim: int) -> torch.Tensor:
    pos = torch.arange(length, dtype=torch.float64)[:, None]
    div = torch.exp(torch.arange(0, dim, 2, dtype=torch.float64) * (-math.log(10000.0) / dim))
    pe = torch.zeros(length, dim, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(pos * div)
    pe[:, 1::2] = torch.cos(pos * div[: dim // 2])
    return pe


def standardize(x, floor: float = 0.05):
    """Per-crop zero mean and unit spread, so brightness and contrast of the
    background do not swamp the sharpness cues. ``floor`` keeps flat crops
    from being amplified into noise."""
    mu = x.mean(dim=(2, 3), keepdim=True)
    sd = x.std(dim=(2, 3), keepdim=True)
    return (x - mu) / (sd + floor)


class RecognizerHead(nn.Module):
    """CRNN-style recognizer: conv stack collapses height, a BiGRU reads the
    32 columns, a linear layer gives 37-way logits per column."""

    seq_len = ASSESS_WIDTH // 4

    def __init__(self, hidden: int = 48):
        super().__init__()
        self.features = nn.Sequential(
            nn.Conv2d(1, 16, 3, padding=1), nn.GELU(), nn.AvgPool2d(2),
            nn.Conv2d(16, 32, 3, padding=1), nn.GELU(), nn.AvgPool2d(2),
            nn.Conv2d(32, 64, 3, padding=1), nn.GELU(), nn.AvgPool2d((2, 1)),
            nn.Conv2d(64, 64, (ASSESS_HEIGHT // 8, 1)), nn.GELU(),
        )
        self.rnn = nn.GRU(64, hidden, batch_first=True, bidirectional=True)
        self.classifier = nn.Linear(2 * hidden, NUM_CLASSES)

    def logits(self, x):
        f = self.features(x).squeeze(2).transpose(1, 2)
        h, _ = self.rnn(f)
        return self.classifier(h)

    def forward(self, x):
        return F.softmax(self.logits(x), dim=-1)


class ConvBranch(nn.Module):
    """7x7 convolution to the embedding width, pooled to a 4x16 token grid."""

    grid = (ASSESS_HEIGHT // 8, ASSESS_WIDTH // 8)

    def __init__(self, embed_dim: int):
        super().__init__()
        self.conv = nn.Conv2d(1, embed_dim, 7, stride=4, padding=3)
        self.pool = nn.AvgPool2d(2)

    def forward(self, x):
        f = self.pool(F.gelu(self.conv(x)))
        return f.flatten(2).transpose(1, 2)


class StiqaModel(nn.Module):
    def __init__(self, config: Optional[StiqaConfig] = None):
        super().__init__()
        self.config = config or StiqaConfig()
        self.meta: Dict = {}
        cfg = self.config
        e = cfg.embed_dim
        self.recognizer = RecognizerHead()
        self.prob_embed = nn.Linear(NUM_CLASSES, e)
        # RPE: probability sequence positions; FPE: flattened image-feature grid
        self.register_buffer("rpe", sinusoidal_encoding(RecognizerHead.seq_len, e).float(), persistent=False)
        gh, gw = ConvBranch.grid
        self.register_buffer("fpe", sinusoidal_encoding(gh * gw, e).float(), persistent=False)

        if cfg.variant in ("full", "prob_transformer"):
            enc_layer = nn.TransformerEncoderLayer(e, cfg.num_heads, cfg.ff_dim, dropout=0.0,
                                                   activation="gelu", batch_first=True, norm_first=True)
            self.encoder = nn.TransformerEncoder(enc_layer, cfg.encoder_layers, enable_nested_tensor=False)
        if cfg.variant in ("full", "conv"):
            self.conv_branch = ConvBranch(e)
        if cfg.variant == "full":
            dec_layer = nn.TransformerDecoderLayer(e, cfg.num_heads, cfg.ff_dim, dropout=0.0,
                                                   activation="gelu", batch_first=True, norm_first=True)
            self.decoder = nn.TransformerDecoder(dec_layer, cfg.decoder_layers)
        self.head = nn.Sequential(nn.Linear(e, 64), nn.GELU(), nn.Linear(64, 1))
        if cfg.recognizer_mode == "frozen":
            self.recognizer.requires_grad_(False)

    def char_probs(self, x):
        return self.recognizer(x)

    def features(self, x):
        """Token features before pooling, shape (B, tokens, embed_dim)."""
        x = standardize(x)
        variant = self.config.variant
        if variant == "conv":
            return self.conv_branch(x) + self.fpe
        probs = self.recognizer(x)
        seq = self.prob_embed(probs) + self.rpe
        if variant == "prob":
            return seq
        memory = self.encoder(seq)
        if variant == "prob_transformer":
            return memory
        img = self.conv_branch(x) + self.fpe
        if self.config.cross_query == "image":
            return self.decoder(img, memory)
        # probability tokens keep their residual stream and read the image
        return self.decoder(memory, img)

    def forward(self, x):
        """(B, 1, 32, 128) in [0, 1] -> (B,) scores in (0, 1)."""
        if x.dim() != 4 or tuple(x.shape[1:]) != (1, ASSESS_HEIGHT, ASSESS_WIDTH):
            raise ValueError(f"expected input (B, 1, {ASSESS_HEIGHT}, {ASSESS_WIDTH}), got {tuple(x.shape)}")
        pooled = self.features(x).mean(dim=1)
        return torch.sigmoid(self.head(pooled)).squeeze(-1)

    @torch.no_grad()
    def score_batch(self, pixels: np.ndarray) -> np.ndarray:
        """Scores for a stack of 32x128 crops, shape (B, 32, 128)."""
        was_training = self.training
        self.eval()
        dtype = next(self.parameters()).dtype
        x = torch.tensor(np.asarray(pixels), dtype=dtype).unsqueeze(1)
        out = self(x).double().numpy()
        self.train(was_training)
        return out


def assess(model: StiqaModel, region_image: RasterImage) -> float:
    """Score one 32x128 text crop; deterministic, strictly inside (0, 1)."""
    if region_image.shape != (ASSESS_HEIGHT, ASSESS_WIDTH):
        raise ValueError(
            f"assess expects a {ASSESS_HEIGHT}x{ASSESS_WIDTH} crop, got {region_image.shape}"
        )
    score = float(model.score_batch(region_image.pixels[None])[0])
    # float32 sigmoid can round to the endpoints for extreme logits
    return min(max(score, 1e-7), 1.0 - 1e-7)

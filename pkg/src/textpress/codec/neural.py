"""Toy variable-rate autoencoder conditioned on a quality map through
spatial feature transform (SFT) layers.

The quality map is average-pooled to the latent grid (stride 8) and quantized
to 16 levels; that coarse map is transmitted in the payload so encoder and
decoder condition on the same signal. Latents are rounded at inference and
relaxed with uniform noise while training; the rate estimate uses a
per-channel Laplace density, the actual bitstream an adaptive range coder.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import asdict, dataclass
from typing import List, Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..imagedata import RasterImage
from .bitio import BitReader, BitWriter, CorruptStreamError
from .rangecoder import AdaptiveModel, RangeDecoder, RangeEncoder

log = logging.getLogger(__name__)

STRIDE = 8
QMAP_LEVELS = 16
QMAP_BITS = 4
LATENT_BOUND = 15
FINGERPRINT_BITS = 32


@dataclass
class NeuralCodecConfig:
    channels: int = 48
    latent_channels: int = 24
    cond_channels: int = 16
    lambda_min: float = 4.0
    lambda_max: float = 512.0
    crop: int = 64
    batch_size: int = 8
    epochs: int = 2
    steps_per_epoch: int = 50
    learning_rate: float = 1e-3
    seed: int = 0


class SFTLayer(nn.Module):
    """``x * (1 + gamma(cond)) + beta(cond)``."""

    def __init__(self, channels: int, cond_channels: int, hidden: int = 32):
        super().__init__()
        self.shared = nn.Sequential(nn.Conv2d(cond_channels, hidden, 3, padding=1), nn.LeakyReLU(0.1))
        self.gamma = nn.Conv2d(hidden, channels, 3, padding=1)
        self.beta = nn.Conv2d(hidden, channels, 3, padding=1)

    def forward(self, x, cond):
        h = self.shared(cond)
        return x * (1 + self.gamma(h)) + self.beta(h)


class ConditionNet(nn.Module):
    """Turns the (transmitted) quality map into conditioning features at
    strides 2, 4 and 8."""

    def __init__(self, cc: int):
        super().__init__()
        self.stages = nn.ModuleList([
            nn.Sequential(nn.Conv2d(1, cc, 3, stride=2, padding=1), nn.LeakyReLU(0.1)),
            nn.Sequential(nn.Conv2d(cc, cc, 3, stride=2, padding=1), nn.LeakyReLU(0.1)),
            nn.Sequential(nn.Conv2d(cc, cc, 3, stride=2, padding=1), nn.LeakyReLU(0.1)),
        ])

    def forward(self, qmap):
        feats = []
        h = qmap
        for stage in self.stages:
            h = stage(h)
            feats.append(h)
        return feats


class QmapAutoencoder(nn.Module):
    def __init__(self, config: NeuralCodecConfig):
        super().__init__()
        n, m, cc = config.channels, config.latent_channels, config.cond_channels
        self.config = config
        self.condition = ConditionNet(cc)
        self.enc = nn.ModuleList([
            nn.Conv2d(1, n, 5, stride=2, padding=2),
            nn.Conv2d(n, n, 5, stride=2, padding=2),
            nn.Conv2d(n, m, 5, stride=2, padding=2),
        ])
        self.enc_sft = nn.ModuleList([SFTLayer(n, cc), SFTLayer(n, cc), SFTLayer(m, cc)])
        self.dec_sft = nn.ModuleList([SFTLayer(m, cc), SFTLayer(n, cc), SFTLayer(n, cc)])
        self.dec = nn.ModuleList([
            nn.ConvTranspose2d(m, n, 5, stride=2, padding=2, output_padding=1),
            nn.ConvTranspose2d(n, n, 5, stride=2, padding=2, output_padding=1),
            nn.ConvTranspose2d(n, 1, 5, stride=2, padding=2, output_padding=1),
        ])
        self.log_scale = nn.Parameter(torch.zeros(m))

    def encode(self, x, conds):
        h = x - 0.5
        for i, (conv, sft) in enumerate(zip(self.enc, self.enc_sft)):
            h = sft(conv(h), conds[i])
            if i < 2:
                h = F.leaky_relu(h, 0.1)
        return h

    def decode(self, y, conds):
        h = y
        for i, (sft, conv) in enumerate(zip(self.dec_sft, self.dec)):
            h = conv(sft(h, conds[2 - i]))
            if i < 2:
                h = F.leaky_relu(h, 0.1)
        return h + 0.5

    def likelihood(self, y):
        """Probability mass of each (relaxed) latent under a unit-bin
        Laplace density with per-channel scale."""
        b = torch.exp(self.log_scale).view(1, -1, 1, 1) + 1e-3

        def cdf(v):
            return 0.5 + 0.5 * torch.sign(v) * (1 - torch.exp(-v.abs() / b))

        return (cdf(y + 0.5) - cdf(y - 0.5)).clamp_min(1e-9)

    def forward(self, x, qmap_coarse):
        conds = self.condition(upsample_qmap(qmap_coarse))
        y = self.encode(x, conds)
        y_tilde = y + torch.empty_like(y).uniform_(-0.5, 0.5) if self.training else torch.round(y)
        x_hat = self.decode(y_tilde, conds)
        return x_hat, self.likelihood(y_tilde)


def coarse_qmap(qmap: torch.Tensor) -> torch.Tensor:
    """Pool a (B,1,H,W) map to the latent grid and quantize to 16 levels."""
    pooled = F.avg_pool2d(qmap, STRIDE)
    return torch.round(pooled * (QMAP_LEVELS - 1)) / (QMAP_LEVELS - 1)


def upsample_qmap(coarse: torch.Tensor) -> torch.Tensor:
    return F.interpolate(coarse, scale_factor=STRIDE, mode="nearest")


def distortion_weight(q: torch.Tensor, config: NeuralCodecConfig) -> torch.Tensor:
    return config.lambda_min * (config.lambda_max / config.lambda_min) ** q


def random_qmap(rng: np.random.Generator, size: int) -> np.ndarray:
    """Training-time quality maps: constants, linear ramps or a rectangle on a
    constant background."""
    kind = rng.integers(3)
    if kind == 0:
        return np.full((size, size), rng.uniform())
    if kind == 1:
        a, b = rng.uniform(size=2)
        theta = rng.uniform(0, 2 * np.pi)
        yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
        t = np.cos(theta) * xx + np.sin(theta) * yy
        t = (t - t.min()) / max(t.max() - t.min(), 1e-9)
        return a + (b - a) * t
    q = np.full((size, size), rng.uniform())
    h, w = rng.integers(size // 4, size + 1, size=2)
    y0, x0 = rng.integers(0, size - h + 1), rng.integers(0, size - w + 1)
    q[y0:y0 + h, x0:x0 + w] = rng.uniform()
    return q


def _pad_to_stride(arr: np.ndarray) -> np.ndarray:
    h, w = arr.shape
    return np.pad(arr, ((0, -h % STRIDE), (0, -w % STRIDE)), mode="edge")


def train_neural_codec(corpus: Sequence[RasterImage], config: Optional[NeuralCodecConfig] = None,
                       log_every: int = 0) -> "NeuralBackend":
    config = config or NeuralCodecConfig()
    if not corpus:
        raise ValueError("empty training corpus")
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    model = QmapAutoencoder(config)
    opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    crop = config.crop
    images = [_pad_to_stride(np.pad(im.pixels, ((0, max(0, crop - im.height)), (0, max(0, crop - im.width))),
                                    mode="edge")) for im in corpus]
    model.train()
    history: List[float] = []
    for epoch in range(config.epochs):
        for step in range(config.steps_per_epoch):
            xs, qs = [], []
            for _ in range(config.batch_size):
                img = images[rng.integers(len(images))]
                y0 = rng.integers(0, img.shape[0] - crop + 1)
                x0 = rng.integers(0, img.shape[1] - crop + 1)
                xs.append(img[y0:y0 + crop, x0:x0 + crop])
                qs.append(random_qmap(rng, crop))
            x = torch.tensor(np.stack(xs)[:, None], dtype=torch.float32)
            qc = coarse_qmap(torch.tensor(np.stack(qs)[:, None], dtype=torch.float32))
            x_hat, lik = model(x, qc)
            bpp = -torch.log2(lik).sum() / x.numel()
            dist = (distortion_weight(upsample_qmap(qc), config) * (x - x_hat) ** 2).mean()
            loss = bpp + dist
            if not torch.isfinite(loss):
                raise FloatingPointError(f"non-finite codec loss at epoch {epoch}, step {step}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            history.append(loss.item())
            if log_every and len(history) % log_every == 0:
                log.info("codec step %d loss %.4f bpp %.3f", len(history), float(loss), float(bpp))
    model.eval()
    backend = NeuralBackend(model)
    backend.history = history
    return backend


class NeuralBackend:
    name = "neural"

    def __init__(self, model: Optional[QmapAutoencoder] = None, config: Optional[NeuralCodecConfig] = None):
        self.model = model if model is not None else QmapAutoencoder(config or NeuralCodecConfig())
        self.model.eval()
        self.history: List[float] = []

    def fingerprint(self) -> int:
        h = hashlib.sha256()
        for name, t in sorted(self.model.state_dict().items()):
            h.update(name.encode())
            h.update(t.detach().cpu().numpy().tobytes())
        return int.from_bytes(h.digest()[:4], "big")

    def save(self, path) -> None:
        torch.save({"format": "textpress-neural-codec", "version": 1,
                    "config": asdict(self.model.config), "state": self.model.state_dict()}, path)

    @classmethod
    def load(cls, path) -> "NeuralBackend":
        blob = torch.load(path, map_location="cpu", weights_only=True)
        if blob.get("format") != "textpress-neural-codec":
            raise ValueError(f"{path} is not a neural codec model file")
        model = QmapAutoencoder(NeuralCodecConfig(**blob["config"]))
        model.load_state_dict(blob["state"])
        return cls(model)

    @torch.no_grad()
    def encode(self, image: RasterImage, qmap_weights: np.ndarray):
        x = torch.tensor(_pad_to_stride(image.pixels)[None, None], dtype=torch.float32)
        q = torch.tensor(_pad_to_stride(qmap_weights)[None, None], dtype=torch.float32)
        qc = coarse_qmap(q)
        conds = self.model.condition(upsample_qmap(qc))
        y = torch.round(self.model.encode(x, conds)).clamp(-LATENT_BOUND, LATENT_BOUND)

        writer = BitWriter()
        writer.write(self.fingerprint(), FINGERPRINT_BITS)
        for v in torch.round(qc * (QMAP_LEVELS - 1)).to(torch.int64).flatten().tolist():
            writer.write(int(v), QMAP_BITS)
        enc = RangeEncoder(writer)
        m = y.shape[1]
        models = [AdaptiveModel(2 * LATENT_BOUND + 1) for _ in range(m)]
        sym = (y[0].to(torch.int64) + LATENT_BOUND).numpy()
        for c in range(m):
            for s in sym[c].ravel().tolist():
                enc.encode(models[c], s)
        return enc.finish()

    @torch.no_grad()
    def decode(self, payload: bytes, bit_count: int, width: int, height: int) -> RasterImage:
        reader = BitReader(payload, bit_count)
        if reader.read(FINGERPRINT_BITS) != self.fingerprint():
            raise CorruptStreamError("blob was produced by a different neural codec model")
        gh, gw = -(-height // STRIDE), -(-width // STRIDE)
        levels = [reader.read(QMAP_BITS) for _ in range(gh * gw)]
        qc = torch.tensor(levels, dtype=torch.float32).view(1, 1, gh, gw) / (QMAP_LEVELS - 1)
        m = self.model.config.latent_channels
        dec = RangeDecoder(reader)
        models = [AdaptiveModel(2 * LATENT_BOUND + 1) for _ in range(m)]
        sym = np.empty((m, gh * gw), dtype=np.int64)
        for c in range(m):
            for i in range(gh * gw):
                sym[c, i] = dec.decode(models[c])
        y = torch.tensor(sym - LATENT_BOUND, dtype=torch.float32).view(1, m, gh, gw)
        conds = self.model.condition(upsample_qmap(qc))
        x_hat = self.model.decode(y, conds)[0, 0, :height, :width]
        return RasterImage(x_hat.clamp(0, 1).double().numpy())


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())

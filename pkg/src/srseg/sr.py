"""Back-projection super-resolution network.

Feature extraction (3x3 then 1x1 conv), T up-projection units interleaved with
T-1 down-projections, and a reconstruction conv over the concatenation of all
T high-resolution feature maps. Each projection unit runs the error feedback
cycle: project, project back, re-project the residual, sum. Units from the
second one onward take the concatenation of all previous opposite-space
outputs, squeezed to nr channels by a 1x1 conv.

The network operates on intensities in [0, 1]. Forward output is the raw
reconstruction; clamping is the training pipeline's job.
"""

import dataclasses
import math

import torch
import torch.nn as nn

# kernel, stride, padding per upscale factor; each satisfies
# (h - 1) * stride - 2 * padding + kernel = h * factor
CONV_TRIPLES = {2: (6, 2, 2), 4: (8, 4, 2), 8: (12, 8, 2)}


@dataclasses.dataclass(frozen=True)
class SRConfig:
    factor: int = 4
    stages: int = 7
    feat0: int = 256
    nr: int = 64
    dense: bool = True

    def __post_init__(self):
        if self.factor not in CONV_TRIPLES:
            raise ValueError(f"unsupported factor {self.factor}")
        if self.stages < 1:
            raise ValueError(f"stages must be >= 1, got {self.stages}")

    @property
    def triple(self):
        return CONV_TRIPLES[self.factor]


def init_fan_in_normal(module, seed):
    """Deterministic init: zero-mean normals scaled by 1/sqrt(fan-in) on conv
    weights, zero biases. Iteration follows construction order, so a fixed
    seed gives bit-identical parameters."""
    gen = torch.Generator().manual_seed(int(seed))
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
            with torch.no_grad():
                m.weight.normal_(0.0, math.sqrt(2.0 / fan_in), generator=gen)
                if m.bias is not None:
                    m.bias.zero_()
    return module


def _up_block(nr, triple):
    k, s, p = triple
    return nn.Sequential(nn.ConvTranspose2d(nr, nr, k, s, p), nn.PReLU(nr))


def _down_block(nr, triple):
    k, s, p = triple
    return nn.Sequential(nn.Conv2d(nr, nr, k, s, p), nn.PReLU(nr))


class UpProjection(nn.Module):
    """LR features -> HR features with error feedback.

    H0 = up(L); e = down(H0) - L; returns H0 + up(e).
    """

    def __init__(self, nr, triple, in_channels=None):
        super().__init__()
        self.nr = nr
        self.squeeze = None
        if in_channels is not None:
            self.squeeze = nn.Sequential(nn.Conv2d(in_channels, nr, 1), nn.PReLU(nr))
        self.up1 = _up_block(nr, triple)
        self.down = _down_block(nr, triple)
        self.up2 = _up_block(nr, triple)

    def forward(self, x):
        if self.squeeze is not None:
            x = self.squeeze(x)
        if x.shape[-3] != self.nr:
            raise ValueError(f"expected {self.nr} channels, got {x.shape[-3]}")
        h0 = self.up1(x)
        e = self.down(h0) - x
        return h0 + self.up2(e)


class DownProjection(nn.Module):
    """Mirror image: L0 = down(H); e = up(L0) - H; returns L0 + down(e)."""

    def __init__(self, nr, triple, in_channels=None):
        super().__init__()
        self.nr = nr
        self.stride = triple[1]
        self.squeeze = None
        if in_channels is not None:
            self.squeeze = nn.Sequential(nn.Conv2d(in_channels, nr, 1), nn.PReLU(nr))
        self.down1 = _down_block(nr, triple)
        self.up = _up_block(nr, triple)
        self.down2 = _down_block(nr, triple)

    def forward(self, x):
        if self.squeeze is not None:
            x = self.squeeze(x)
        if x.shape[-3] != self.nr:
            raise ValueError(f"expected {self.nr} channels, got {x.shape[-3]}")
        if x.shape[-2] % self.stride or x.shape[-1] % self.stride:
            raise ValueError(
                f"spatial dims {tuple(x.shape[-2:])} not divisible by {self.stride}"
            )
        l0 = self.down1(x)
        e = self.up(l0) - x
        return l0 + self.down2(e)


class BackProjectionNet(nn.Module):
    def __init__(self, config, seed=0):
        super().__init__()
        self.config = config
        nr, triple = config.nr, config.triple
        self.feat0 = nn.Sequential(nn.Conv2d(3, config.feat0, 3, 1, 1),
                                   nn.PReLU(config.feat0))
        self.feat1 = nn.Sequential(nn.Conv2d(config.feat0, nr, 1),
                                   nn.PReLU(nr))
        ups, downs = [], []
        for t in range(1, config.stages + 1):
            dense_in = (t - 1) * nr if (config.dense and t >= 2) else None
            ups.append(UpProjection(nr, triple, in_channels=dense_in))
            if t < config.stages:
                dense_in = t * nr if (config.dense and t >= 2) else None
                downs.append(DownProjection(nr, triple, in_channels=dense_in))
        self.ups = nn.ModuleList(ups)
        self.downs = nn.ModuleList(downs)
        self.reconstruct = nn.Conv2d(config.stages * nr, 3, 3, 1, 1)
        init_fan_in_normal(self, seed)

    def forward(self, x):
        if x.dim() == 3:
            return self.forward(x[None])[0]
        if x.shape[1] != 3:
            raise ValueError(f"expected 3 input channels, got {x.shape[1]}")
        x = self.feat1(self.feat0(x))
        hs, ls = [], [x]
        for t, up in enumerate(self.ups):
            if up.squeeze is not None:
                h = up(torch.cat(ls[1:], dim=1))
            else:
                h = up(ls[-1])
            hs.append(h)
            if t < len(self.downs):
                down = self.downs[t]
                if down.squeeze is not None:
                    ls.append(down(torch.cat(hs, dim=1)))
                else:
                    ls.append(down(h))
        return self.reconstruct(torch.cat(hs, dim=1))


def sr_forward(lr, net):
    """Map a [0, 1]-scaled 3xhxw (or Bx3xhxw) tensor to its 3xrh x rw
    reconstruction using the given network."""
    return net(lr)


def l1_loss(pred, target):
    """Mean absolute error over all elements."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    return (pred - target).abs().mean()


def clamp01_straight_through(x):
    """Clamp to [0, 1] in the forward pass while letting gradients pass
    through unchanged, so the reconstruction keeps learning from downstream
    losses even where it saturates."""
    return x + (x.clamp(0.0, 1.0) - x).detach()

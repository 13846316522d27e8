"""Encoder-decoder segmentation network with index-preserving pooling.

The encoder records, for every 2x2 max-pool window, the flat position of the
winning element; the mirrored decoder places values back at exactly those
positions (zeros elsewhere) before its conv blocks densify the map again. The
pooling is hand-rolled rather than taken from the framework so the tie rule is
pinned down: ties go to the first element in row-major window order on every
platform.

Forward output is raw per-pixel class scores (logits); ``predict_proba``
applies the per-pixel softmax.
"""

import dataclasses

import torch
import torch.nn as nn
import torch.nn.functional as F

from .sr import init_fan_in_normal
from .validation import IGNORE_ID

DEFAULT_ENCODER_PLAN = ((2, 64), (2, 128), (3, 256), (3, 512), (3, 512))


@dataclasses.dataclass(frozen=True)
class SegConfig:
    num_classes: int
    encoder_plan: tuple = DEFAULT_ENCODER_PLAN
    ignore_ids: frozenset = frozenset({IGNORE_ID})

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        plan = tuple((int(d), int(w)) for d, w in self.encoder_plan)
        if not plan or any(d < 1 or w < 1 for d, w in plan):
            raise ValueError(f"bad encoder plan {plan}")
        object.__setattr__(self, "encoder_plan", plan)
        object.__setattr__(self, "ignore_ids", frozenset(int(i) for i in self.ignore_ids))

    @property
    def stages(self):
        return len(self.encoder_plan)

    @property
    def pool_stride(self):
        return 2 ** self.stages


@dataclasses.dataclass
class PoolIndices:
    """Flat argmax position (into the pre-pool H*W plane) per pooled window."""

    indices: torch.Tensor
    in_size: tuple


def max_pool_with_indices(x, window=2):
    """2x2 max-pool that records where each max came from.

    Ties break to the first element in row-major window order, which framework
    pooling leaves unspecified.
    """
    if window != 2:
        raise ValueError("only 2x2 pooling windows are supported")
    squeeze = x.dim() == 3
    if squeeze:
        x = x[None]
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"spatial dims {(h, w)} must be even")
    xw = (x.reshape(b, c, h // 2, 2, w // 2, 2)
           .permute(0, 1, 2, 4, 3, 5)
           .reshape(b, c, h // 2, w // 2, 4))
    top = xw.max(dim=-1, keepdim=True).values
    pos = torch.arange(4, device=x.device)
    # a NaN max matches no equality test; treat NaN cells as winners so the
    # gather propagates them instead of indexing out of bounds
    hit = (xw == top) | torch.isnan(xw)
    win = torch.where(hit, pos, 4).min(dim=-1).values
    rows = 2 * torch.arange(h // 2, device=x.device)[None, None, :, None] + win // 2
    cols = 2 * torch.arange(w // 2, device=x.device)[None, None, None, :] + win % 2
    flat = (rows * w + cols).reshape(b, c, -1)
    pooled = x.reshape(b, c, -1).gather(2, flat).reshape(b, c, h // 2, w // 2)
    idx = PoolIndices(flat.reshape(b, c, h // 2, w // 2), (h, w))
    if squeeze:
        return pooled[0], PoolIndices(idx.indices[0], idx.in_size)
    return pooled, idx


def max_unpool(x, idx, out_size=None):
    """Place each pooled value at its recorded position; zeros elsewhere."""
    squeeze = x.dim() == 3
    if squeeze:
        x = x[None]
    indices = idx.indices
    if indices.dim() == 3:
        indices = indices[None]
    if out_size is not None and tuple(out_size) != tuple(idx.in_size):
        raise ValueError(f"requested {tuple(out_size)} but indices came from {idx.in_size}")
    if x.shape != indices.shape:
        raise ValueError(
            f"pooled map {tuple(x.shape)} does not match indices {tuple(indices.shape)}"
        )
    b, c = x.shape[:2]
    h, w = idx.in_size
    out = x.new_zeros(b, c, h * w)
    out.scatter_(2, indices.reshape(b, c, -1), x.reshape(b, c, -1))
    out = out.reshape(b, c, h, w)
    return out[0] if squeeze else out


def _conv_block(cin, cout):
    return nn.Sequential(nn.Conv2d(cin, cout, 3, 1, 1),
                         nn.InstanceNorm2d(cout, affine=True),
                         nn.ReLU(inplace=True))


class SegNet(nn.Module):
    def __init__(self, config, seed=0):
        super().__init__()
        self.config = config
        plan = config.encoder_plan
        widths = [w for _, w in plan]

        enc = []
        cin = 3
        for depth, width in plan:
            stage = []
            for _ in range(depth):
                stage.append(_conv_block(cin, width))
                cin = width
            enc.append(nn.Sequential(*stage))
        self.encoder = nn.ModuleList(enc)

        dec = []
        for s in reversed(range(len(plan))):
            depth, width = plan[s]
            out_width = widths[s - 1] if s > 0 else widths[0]
            stage = [_conv_block(width, out_width if j == depth - 1 else width)
                     for j in range(depth)]
            dec.append(nn.Sequential(*stage))
        self.decoder = nn.ModuleList(dec)
        self.classifier = nn.Conv2d(widths[0], config.num_classes, 1)
        init_fan_in_normal(self, seed)

    def forward(self, x):
        if x.dim() == 3:
            return self.forward(x[None])[0]
        if x.shape[1] != 3:
            raise ValueError(f"expected 3 input channels, got {x.shape[1]}")
        stride = self.config.pool_stride
        if x.shape[-2] % stride or x.shape[-1] % stride:
            raise ValueError(
                f"spatial dims {tuple(x.shape[-2:])} must be divisible by {stride}"
            )
        saved = []
        for stage in self.encoder:
            x, idx = max_pool_with_indices(stage(x))
            saved.append(idx)
        for stage in self.decoder:
            x = stage(max_unpool(x, saved.pop()))
        return self.classifier(x)

    def predict_proba(self, x):
        scores = self.forward(x)
        return F.softmax(scores, dim=-3)

    def predict(self, x):
        return self.forward(x).argmax(dim=-3)


def seg_forward(image, net):
    """Per-pixel class scores (KxHxW logits) for a [0, 1]-scaled image."""
    return net(image)


def cross_entropy(scores, labels, ignore_ids=frozenset({IGNORE_ID})):
    """Mean negative log softmax-probability of the true class over counted
    pixels. Ignored pixels contribute nothing to value or gradient; a map
    with no counted pixels is an error, not 0/0.
    """
    squeeze = scores.dim() == 3
    if squeeze:
        scores = scores[None]
        labels = labels[None]
    if scores.shape[0] != labels.shape[0] or scores.shape[-2:] != labels.shape[-2:]:
        raise ValueError(
            f"geometry mismatch: scores {tuple(scores.shape)} vs labels {tuple(labels.shape)}"
        )
    k = scores.shape[1]
    labels = labels.long()
    keep = torch.ones_like(labels, dtype=torch.bool)
    for ig in ignore_ids:
        keep &= labels != ig
    if not bool(keep.any()):
        raise ValueError("every pixel carries an ignored label")
    counted = labels[keep]
    if int(counted.min()) < 0 or int(counted.max()) >= k:
        raise ValueError("label id outside [0, num_classes) at a counted pixel")
    logp = F.log_softmax(scores, dim=1)
    picked = logp.gather(1, labels.clamp(0, k - 1).unsqueeze(1)).squeeze(1)
    return -(picked[keep]).mean()

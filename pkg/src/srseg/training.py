"""Joint training of the reconstruction and segmentation networks.

Three modes share one loop:

* ``lr_baseline``: segmentation alone on bicubic-upsampled LR tiles.
* ``hr_baseline``: segmentation alone on native HR tiles.
* ``end2end``: both networks under one loss, total = alpha * L1(sr, hr)
  + beta * CE(seg(sr), labels). The cross-entropy term back-propagates
  through the segmentation network into the reconstruction, which is what
  couples the two tasks.

Optimization is decoupled-weight-decay Adam, batch size 1, base lr 1e-5
decayed by 10 at the halfway epoch. Baseline modes never construct the SR
network. Epoch order is a seeded permutation drawn from (seed, epoch), never
from carried RNG state, so a resumed run shuffles exactly like an
uninterrupted one.
"""

import dataclasses
import json
import logging
import math
from pathlib import Path

import numpy as np
import torch

from . import checkpoint as ckpt
from .data import load_samples
from .metrics import ConfusionAccumulator, MetricsReport
from .resample import bicubic_upsample
from .seg import SegConfig, SegNet, cross_entropy
from .sr import BackProjectionNet, clamp01_straight_through, l1_loss

log = logging.getLogger(__name__)

LR_BASELINE = "lr_baseline"
HR_BASELINE = "hr_baseline"
END2END = "end2end"
MODES = (LR_BASELINE, END2END, HR_BASELINE)

CLAMP_MODES = ("straight_through", "hard", "none")


@dataclasses.dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.1
    beta: float = 1000.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError(f"weights must be >= 0, got {self.alpha}, {self.beta}")
        if self.alpha == 0 and self.beta == 0:
            raise ValueError("alpha and beta cannot both be zero")


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    mode: str = END2END
    epochs: int = 300
    base_lr: float = 1e-5
    decay_factor: float = 10.0
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    sr_weight_decay: float = 1e-4
    seg_weight_decay: float = 5e-4
    batch_size: int = 1
    seed: int = 0
    weights: LossWeights = LossWeights()
    clamp: str = "straight_through"
    tile: int = 480
    checkpoint_every: int = 50

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got '{self.mode}'")
        if self.epochs < 2:
            raise ValueError(f"epochs must be >= 2, got {self.epochs}")
        if self.base_lr <= 0:
            raise ValueError(f"base_lr must be > 0, got {self.base_lr}")
        if self.batch_size != 1:
            raise ValueError("only batch size 1 is supported")
        if self.clamp not in CLAMP_MODES:
            raise ValueError(f"clamp must be one of {CLAMP_MODES}")


def joint_loss(sr_out, hr_target, scores, labels, w, ignore_ids=None):
    """total = alpha * L1 + beta * CE; the parts are returned for logging.

    Gradients of the total flow into both networks: the cross-entropy term
    reaches the reconstruction through the segmentation graph.
    """
    kwargs = {} if ignore_ids is None else {"ignore_ids": ignore_ids}
    l1 = l1_loss(sr_out, hr_target)
    ce = cross_entropy(scores, labels, **kwargs)
    return w.alpha * l1 + w.beta * ce, l1, ce


def lr_at_epoch(e, cfg):
    """Step schedule: base_lr for the first half, /decay_factor afterward."""
    if not 0 <= e < cfg.epochs:
        raise ValueError(f"epoch {e} outside [0, {cfg.epochs})")
    if e < cfg.epochs / 2:
        return cfg.base_lr
    return cfg.base_lr / cfg.decay_factor


def apply_clamp(x, mode):
    if mode == "straight_through":
        return clamp01_straight_through(x)
    if mode == "hard":
        return x.clamp(0.0, 1.0)
    return x


def _to_chw(image):
    return torch.from_numpy(np.ascontiguousarray(image / 255.0)).permute(2, 0, 1).float()


def prepare_sample(sample, mode):
    """RasterSample -> mode-appropriate float32 tensors in [0, 1]."""
    out = {"source_id": sample.source_id,
           "labels": torch.from_numpy(np.ascontiguousarray(sample.labels))}
    if mode == END2END:
        out["input"] = _to_chw(sample.lr)
        out["hr"] = _to_chw(sample.hr)
    elif mode == LR_BASELINE:
        out["input"] = _to_chw(bicubic_upsample(sample.lr, sample.factor))
        out["hr"] = _to_chw(sample.hr)
    elif mode == HR_BASELINE:
        out["input"] = _to_chw(sample.hr)
    else:
        raise ValueError(f"unknown mode '{mode}'")
    return out


@dataclasses.dataclass
class StepRecord:
    source_id: str
    total: float
    l1: float | None
    ce: float | None
    sr_grad_norm: float | None
    seg_grad_norm: float | None
    aborted: bool = False


def _grad_norm(module):
    acc = 0.0
    for p in module.parameters():
        if p.grad is not None:
            acc += float(p.grad.detach().double().pow(2).sum())
    return math.sqrt(acc)


def train_step(sample, mode, nets, optimizers, weights, ignore_ids=None,
               clamp="straight_through"):
    """One optimizer update per involved network from a single RasterSample.

    A non-finite loss aborts the step before any backward pass, so parameter
    and optimizer state are untouched; the incident is logged.
    """
    batch = sample if isinstance(sample, dict) else prepare_sample(sample, mode)
    sr_net, seg_net = nets.get("sr"), nets["seg"]
    labels = batch["labels"]
    kwargs = {} if ignore_ids is None else {"ignore_ids": ignore_ids}

    if mode == END2END:
        sr_out = sr_net(batch["input"])
        if weights.beta == 0:
            # the segmentation branch is not involved: its parameters must
            # stay bit-identical to a run that never had it
            l1 = l1_loss(sr_out, batch["hr"])
            total = weights.alpha * l1
            ce = None
            involved = [("sr", sr_net, optimizers["sr"])]
        else:
            scores = seg_net(apply_clamp(sr_out, clamp))
            total, l1, ce = joint_loss(sr_out, batch["hr"], scores, labels,
                                       weights, ignore_ids)
            involved = [("sr", sr_net, optimizers["sr"]),
                        ("seg", seg_net, optimizers["seg"])]
    else:
        scores = seg_net(batch["input"])
        total = ce = cross_entropy(scores, labels, **kwargs)
        l1 = None
        involved = [("seg", seg_net, optimizers["seg"])]

    as_float = lambda t: None if t is None else float(t.detach())
    if not bool(torch.isfinite(total.detach())):
        log.warning("non-finite loss on %s; step aborted", batch["source_id"])
        return StepRecord(batch["source_id"], float(total.detach()),
                          as_float(l1), as_float(ce), None, None, aborted=True)

    for _, _, opt in involved:
        opt.zero_grad(set_to_none=True)
    total.backward()
    norms = {name: _grad_norm(net) for name, net, _ in involved}
    for _, _, opt in involved:
        opt.step()

    return StepRecord(batch["source_id"], float(total.detach()),
                      as_float(l1), as_float(ce),
                      norms.get("sr"), norms.get("seg"))


def build_networks(cfg, sr_cfg, seg_cfg):
    nets = {"seg": SegNet(seg_cfg, seed=cfg.seed + 1)}
    if cfg.mode == END2END:
        nets["sr"] = BackProjectionNet(sr_cfg, seed=cfg.seed)
    return nets


def build_optimizers(cfg, nets):
    opts = {"seg": torch.optim.AdamW(nets["seg"].parameters(), lr=cfg.base_lr,
                                     betas=cfg.betas, eps=cfg.eps,
                                     weight_decay=cfg.seg_weight_decay)}
    if "sr" in nets:
        opts["sr"] = torch.optim.AdamW(nets["sr"].parameters(), lr=cfg.base_lr,
                                       betas=cfg.betas, eps=cfg.eps,
                                       weight_decay=cfg.sr_weight_decay)
    return opts


def epoch_order(seed, epoch, n):
    """Permutation for one epoch, a pure function of (seed, epoch)."""
    return np.random.default_rng([seed, epoch]).permutation(n)


# ---------------------------------------------------------------------------
# full experiment loop

def _checkpoint_state(cfg, nets, optimizers, epoch_done, history, meta):
    state = {
        "epoch": epoch_done,
        "history": history,
        "mode": cfg.mode,
        "meta": meta,
        "optim": {},
    }
    containers = {}
    for name, net in nets.items():
        containers[f"{name}_params"] = ckpt.module_tensors(net)
        tensors, opt_meta = ckpt.optimizer_tensors(
            optimizers[name], list(net.named_parameters()))
        containers[f"{name}_opt"] = tensors
        state["optim"][name] = opt_meta
    return containers, state


def _restore(run_dir, resume, cfg, nets, optimizers, meta):
    path = ckpt.resolve_checkpoint(run_dir, resume)
    state, containers = ckpt.load_checkpoint(path)
    saved_fp = (state.get("meta") or {}).get("fingerprint")
    current_fp = (meta or {}).get("fingerprint")
    if saved_fp and current_fp and saved_fp != current_fp:
        raise ValueError(
            f"checkpoint {path} was written under config fingerprint "
            f"{saved_fp}, refusing to resume under {current_fp}")
    if state["mode"] != cfg.mode:
        raise ValueError(f"checkpoint mode '{state['mode']}' != '{cfg.mode}'")
    for name, net in nets.items():
        ckpt.load_module_tensors(net, containers[f"{name}_params"])
        ckpt.load_optimizer_tensors(optimizers[name],
                                    list(net.named_parameters()),
                                    containers[f"{name}_opt"],
                                    state["optim"][name])
    return state["epoch"], state["history"]


def run_experiment(train_manifest, test_manifest, cfg, sr_cfg, seg_cfg,
                   run_dir, meta=None, resume=None, cache=True):
    """Train to cfg.epochs, checkpointing along the way, then score the test
    split. Returns (MetricsReport, final checkpoint path).

    Identical seed and config reproduce the run exactly; passing ``resume``
    ("last", an epoch number, or a path) restarts from a saved state and
    continues bit-identically with the uninterrupted schedule.
    """
    if not train_manifest.records:
        raise ValueError("empty training manifest")
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    meta = dict(meta or {})

    nets = build_networks(cfg, sr_cfg, seg_cfg)
    optimizers = build_optimizers(cfg, nets)
    start_epoch, history = 0, []
    if resume is not None:
        start_epoch, history = _restore(run_dir, resume, cfg, nets,
                                        optimizers, meta)

    samples = load_samples(train_manifest, cfg.tile, cache=cache)
    if not samples:
        raise ValueError(
            f"no {cfg.tile}x{cfg.tile} tiles materialized from "
            f"'{train_manifest.name}/{train_manifest.split}'")
    prepared = [prepare_sample(s, cfg.mode) for s in samples]
    ignore_ids = seg_cfg.ignore_ids

    log_path = run_dir / "train_log.csv"
    mode = "a" if resume is not None and log_path.exists() else "w"
    final_ckpt = None
    with open(log_path, mode) as logfh:
        if mode == "w":
            logfh.write("epoch,step,l1,ce,total,lr\n")
        for epoch in range(start_epoch, cfg.epochs):
            lr = lr_at_epoch(epoch, cfg)
            for opt in optimizers.values():
                for group in opt.param_groups:
                    group["lr"] = lr
            records = []
            for step, i in enumerate(epoch_order(cfg.seed, epoch, len(prepared))):
                rec = train_step(prepared[i], cfg.mode, nets, optimizers,
                                 cfg.weights, ignore_ids, cfg.clamp)
                records.append(rec)
                logfh.write(f"{epoch},{step},"
                            f"{'' if rec.l1 is None else repr(rec.l1)},"
                            f"{'' if rec.ce is None else repr(rec.ce)},"
                            f"{rec.total!r},{lr!r}\n")
            counted = [r for r in records if not r.aborted]
            entry = {
                "epoch": epoch,
                "lr": lr,
                "steps": len(records),
                "aborted": len(records) - len(counted),
                "total": sum(r.total for r in counted) / max(len(counted), 1),
            }
            for part in ("l1", "ce"):
                vals = [getattr(r, part) for r in counted]
                if all(v is not None for v in vals) and vals:
                    entry[part] = sum(vals) / len(vals)
            history.append(entry)
            last = epoch == cfg.epochs - 1
            if last or (cfg.checkpoint_every
                        and (epoch + 1) % cfg.checkpoint_every == 0):
                containers, state = _checkpoint_state(
                    cfg, nets, optimizers, epoch + 1, history, meta)
                path = ckpt.save_checkpoint(run_dir, epoch + 1, containers, state)
                if last:
                    final_ckpt = path

    report = evaluate(nets, test_manifest, cfg, meta=dict(
        meta, mode=cfg.mode, epochs=cfg.epochs, seed=cfg.seed,
        dataset=test_manifest.name,
        factor=None if test_manifest.degradation is None
               else test_manifest.degradation.factor,
        checkpoint=final_ckpt.name,
    ), cache=cache)
    (run_dir / "report.json").write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    return report, final_ckpt


def evaluate(nets, manifest, cfg, meta=None, cache=True, collect_panels=0):
    """Score a split: streaming confusion over every tile plus one PSNR from
    the pooled squared error (so an infinite value means every pixel of every
    tile matched).

    ``collect_panels`` keeps the first few (hr, input, output, truth, pred)
    tile groups for image export.
    """
    seg_net = nets["seg"]
    sr_net = nets.get("sr")
    confusion = ConfusionAccumulator(manifest.num_classes,
                                     manifest.excluded_classes)
    sse, count = 0.0, 0
    panels = []
    with torch.no_grad():
        for sample in load_samples(manifest, cfg.tile, cache=cache):
            batch = prepare_sample(sample, cfg.mode)
            if cfg.mode == END2END:
                out01 = sr_net(batch["input"]).clamp(0.0, 1.0)
                scores = seg_net(out01)
                recon = out01.permute(1, 2, 0).numpy() * 255.0
            else:
                scores = seg_net(batch["input"])
                recon = batch["input"].permute(1, 2, 0).numpy() * 255.0
            pred = scores.argmax(dim=0).numpy()
            confusion.update(pred, sample.labels)
            diff = recon - sample.hr
            sse += float((diff * diff).sum())
            count += diff.size
            if len(panels) < collect_panels:
                panels.append({"source_id": sample.source_id, "hr": sample.hr,
                               "input": batch["input"].permute(1, 2, 0).numpy() * 255.0,
                               "output": recon, "truth": sample.labels,
                               "pred": pred})
    if count == 0:
        raise ValueError(f"no tiles to evaluate in '{manifest.name}/{manifest.split}'")
    psnr_db = math.inf if sse == 0.0 else 10.0 * math.log10(255.0 ** 2 / (sse / count))
    report = MetricsReport.from_parts(psnr_db, confusion.matrix, meta)
    if collect_panels:
        return report, panels
    return report

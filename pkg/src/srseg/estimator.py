"""Estimator facade over the functional training core.

``SuperResSegmenter`` follows the scikit-learn contract: constructor arguments
are stored verbatim and never validated until ``fit``, fitted state lives in
trailing-underscore attributes, ``get_params``/``set_params`` come from
``BaseEstimator``. ``fit`` consumes high-resolution images with label maps and
internally degrades them by the configured factor; ``predict`` then labels
low-resolution inputs (or native HR ones for the HR baseline),
``predict_proba`` gives per-pixel class probabilities and ``transform``
returns the reconstruction the segmentation sees.
"""

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .data import DegradationSpec, RasterSample
from .resample import bicubic_downsample, bicubic_upsample, quantize_u8
from .seg import SegConfig
from .sr import SRConfig
from .training import (END2END, HR_BASELINE, LR_BASELINE, LossWeights,
                       TrainConfig, build_networks, build_optimizers,
                       epoch_order, lr_at_epoch, prepare_sample, train_step)
from .validation import check_labels, check_raster, check_same_hw


class SuperResSegmenter(BaseEstimator):
    def __init__(self, mode=END2END, factor=4, epochs=30, base_lr=1e-4,
                 alpha=0.1, beta=1000.0, sr_stages=2, sr_feat0=32, sr_nr=8,
                 encoder_plan=((2, 8), (2, 16)), num_classes=None, seed=0,
                 clamp="straight_through"):
        self.mode = mode
        self.factor = factor
        self.epochs = epochs
        self.base_lr = base_lr
        self.alpha = alpha
        self.beta = beta
        self.sr_stages = sr_stages
        self.sr_feat0 = sr_feat0
        self.sr_nr = sr_nr
        self.encoder_plan = encoder_plan
        self.num_classes = num_classes
        self.seed = seed
        self.clamp = clamp

    # ------------------------------------------------------------------
    def _images(self, X):
        if isinstance(X, np.ndarray) and X.ndim == 4:
            X = list(X)
        return [check_raster(x, f"X[{i}]") for i, x in enumerate(X)]

    def _check_fitted(self):
        if not hasattr(self, "seg_net_"):
            raise NotFittedError("this SuperResSegmenter instance is not fitted")

    def _samples(self, X, y):
        images = self._images(X)
        labels = [check_labels(t, name=f"y[{i}]") for i, t in enumerate(y)]
        if len(images) != len(labels):
            raise ValueError(f"{len(images)} images but {len(labels)} label maps")
        spec = DegradationSpec(self.factor)
        samples = []
        for i, (img, lab) in enumerate(zip(images, labels)):
            check_same_hw(img, lab, f"X[{i}]", f"y[{i}]")
            lr = quantize_u8(bicubic_downsample(img, spec)).astype(np.float64)
            samples.append(RasterSample(f"sample-{i:04d}", img, lr, lab))
        return samples

    def fit(self, X, y):
        samples = self._samples(X, y)
        k = self.num_classes
        if k is None:
            k = int(max(int(s.labels.max()) for s in samples)) + 1
        self.n_classes_ = k
        self.config_ = TrainConfig(
            mode=self.mode, epochs=max(int(self.epochs), 2),
            base_lr=self.base_lr, seed=self.seed,
            weights=LossWeights(self.alpha, self.beta), clamp=self.clamp,
            tile=samples[0].hr.shape[0], checkpoint_every=0,
        )
        sr_cfg = SRConfig(factor=self.factor, stages=self.sr_stages,
                          feat0=self.sr_feat0, nr=self.sr_nr)
        seg_cfg = SegConfig(num_classes=k, encoder_plan=self.encoder_plan)
        nets = build_networks(self.config_, sr_cfg, seg_cfg)
        optimizers = build_optimizers(self.config_, nets)

        prepared = [prepare_sample(s, self.mode) for s in samples]
        history = []
        for epoch in range(self.config_.epochs):
            lr = lr_at_epoch(epoch, self.config_)
            for opt in optimizers.values():
                for group in opt.param_groups:
                    group["lr"] = lr
            totals = []
            for i in epoch_order(self.seed, epoch, len(prepared)):
                rec = train_step(prepared[i], self.mode, nets, optimizers,
                                 self.config_.weights,
                                 seg_cfg.ignore_ids, self.clamp)
                if not rec.aborted:
                    totals.append(rec.total)
            history.append(sum(totals) / max(len(totals), 1))
        self.history_ = history
        self.seg_net_ = nets["seg"]
        self.sr_net_ = nets.get("sr")
        return self

    # ------------------------------------------------------------------
    def _seg_input(self, image):
        """Image in the mode's natural domain -> the tensor the segmentation
        network consumes."""
        if self.mode == END2END:
            x = torch.from_numpy(image / 255.0).permute(2, 0, 1).float()
            return self.sr_net_(x).clamp(0.0, 1.0)
        if self.mode == LR_BASELINE:
            image = bicubic_upsample(image, self.factor)
        return torch.from_numpy(image / 255.0).permute(2, 0, 1).float()

    def transform(self, X):
        """The reconstruction handed to the segmentation network, in [0, 255]."""
        self._check_fitted()
        out = []
        with torch.no_grad():
            for img in self._images(X):
                t = self._seg_input(img)
                out.append(t.permute(1, 2, 0).numpy() * 255.0)
        return out

    def predict_proba(self, X):
        self._check_fitted()
        out = []
        with torch.no_grad():
            for img in self._images(X):
                scores = self.seg_net_(self._seg_input(img))
                out.append(torch.softmax(scores, dim=0).numpy())
        return out

    def predict(self, X):
        self._check_fitted()
        out = []
        with torch.no_grad():
            for img in self._images(X):
                scores = self.seg_net_(self._seg_input(img))
                out.append(scores.argmax(dim=0).numpy())
        return out

    def score(self, X, y):
        """Mean pixel accuracy over the given pairs."""
        from .metrics import ConfusionAccumulator

        self._check_fitted()
        acc = ConfusionAccumulator(self.n_classes_)
        for pred, truth in zip(self.predict(X), y):
            acc.update(pred, check_labels(truth))
        return acc.summary().acc

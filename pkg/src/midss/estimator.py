"""scikit-learn style wrapper around the mean-teacher trainer."""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_domain_ids, check_images, check_label_maps
from .augment import AugmentRanges
from .data import SampleRecord
from .grid import one_hot
from .metrics import dice
from .trainer import TrainConfig, predict_proba, run


class MiDSSSegmenter(BaseEstimator):
    """Semi-supervised segmenter trained on labeled images from one domain and unlabeled images from many.

    ``fit(X, y, X_unlabeled)`` takes images in [-1, 1] as ``(N, H, W)`` or
    ``(N, H, W, 1)`` and integer class maps ``y`` of shape ``(N, H, W)``.
    ``ablation`` picks the method variant ("full", "row1".."row6", "supervised").
    """

    def __init__(self, t_total=2000, tau=0.95, beta=0.01, lr=0.03, momentum=0.9, weight_decay=1e-4,
                 ema_decay=0.99, batch_size=4, ablation="full", base_width=8, depth=3,
                 augment=None, random_state=0):
        self.t_total = t_total
        self.tau = tau
        self.beta = beta
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.ema_decay = ema_decay
        self.batch_size = batch_size
        self.ablation = ablation
        self.base_width = base_width
        self.depth = depth
        self.augment = augment
        self.random_state = random_state

    def _config(self):
        cfg = TrainConfig(
            t_total=int(self.t_total), tau=self.tau, beta=self.beta, lr=self.lr, momentum=self.momentum,
            weight_decay=self.weight_decay, ema_decay=self.ema_decay, batch_labeled=self.batch_size,
            batch_unlabeled=self.batch_size, seed=int(self.random_state or 0), eval_every=max(int(self.t_total), 1),
            base_width=self.base_width, depth=self.depth,
            augment=self.augment if self.augment is not None else AugmentRanges(),
        )
        return cfg.with_ablation(self.ablation).validate()

    def fit(self, X, y, X_unlabeled=None, unlabeled_domains=None):
        X = check_images(X)
        y, n_classes = check_label_maps(y, X.shape[:3])
        cfg = self._config()
        if X_unlabeled is None:
            if not cfg.method_flags.supervised_only:
                raise ValueError("X_unlabeled is required unless ablation='supervised'")
            U = np.zeros((0,) + X.shape[1:])
        else:
            U = check_images(X_unlabeled, "X_unlabeled")
            if U.shape[1:] != X.shape[1:]:
                raise ValueError(f"X_unlabeled images {U.shape[1:]} differ from X images {X.shape[1:]}")
        u_dom = check_domain_ids(unlabeled_domains, len(U), 0)
        labeled = [SampleRecord(X[i], one_hot(y[i], n_classes), 0, i) for i in range(len(X))]
        unlabeled = [SampleRecord(U[i], None, int(u_dom[i]), len(X) + i) for i in range(len(U))]
        state, _, traces = run(cfg, labeled, unlabeled, [])
        self.config_ = cfg
        self.params_ = state.student
        self.teacher_ = state.teacher
        self.n_classes_ = n_classes
        self.traces_ = traces
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "params_")
        return predict_proba(self.params_, check_images(X))

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=-1)

    def score(self, X, y):
        """Mean foreground Dice over images and classes."""
        pred = self.predict(X)
        y, _ = check_label_maps(y, pred.shape, self.n_classes_)
        scores = [dice(p == c, g == c) for p, g in zip(pred, y) for c in range(1, self.n_classes_)]
        return float(np.mean(scores))

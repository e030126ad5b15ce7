"""scikit-learn style facade over train -> prune -> retrain."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from prunelab import optim
from prunelab.data import Dataset, num_batches
from prunelab.errors import ConfigurationError
from prunelab.metrics import count_cost
from prunelab.nn import ParamStore, build_architecture, predict_logits
from prunelab.pipeline import DataBundle, PipelineConfig, can_shrink, fit_schedule, prune_once
from prunelab.schedules import build_original, build_schedule, get_profile
from prunelab.pruning import shrink_structured


class PrunedNetworkClassifier(ClassifierMixin, BaseEstimator):
    """Train a network, optionally prune it, then retrain under a chosen schedule.

    ``X`` is either (n_samples, n_features) or (n_samples, C, H, W). Inputs
    are standardized per feature (per channel for images) with statistics
    taken from the training data. ``method=None`` skips pruning.

    Fitted attributes: ``classes_``, ``n_features_in_``, ``arch_``,
    ``store_``, ``mask_``, ``cost_``, ``history_``.
    """

    def __init__(
        self,
        arch="mlp-small",
        epochs=40,
        profile="cifar",
        method=None,
        ratio=0.5,
        policy=None,
        retrain_schedule="clr",
        retrain_epochs=20,
        warmup_frac=0.1,
        lr_max=None,
        lr_min=1e-5,
        batch_size=64,
        momentum=0.9,
        weight_decay=1e-4,
        shrink=True,
        dtype="float32",
        random_state=0,
    ):
        self.arch = arch
        self.epochs = epochs
        self.profile = profile
        self.method = method
        self.ratio = ratio
        self.policy = policy
        self.retrain_schedule = retrain_schedule
        self.retrain_epochs = retrain_epochs
        self.warmup_frac = warmup_frac
        self.lr_max = lr_max
        self.lr_min = lr_min
        self.batch_size = batch_size
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.shrink = shrink
        self.dtype = dtype
        self.random_state = random_state

    def _config(self) -> PipelineConfig:
        return PipelineConfig(
            arch=self.arch, profile=self.profile, original_epochs=self.epochs,
            method=self.method or "l1_filter", ratio=self.ratio, policy=self.policy,
            retrain_schedule=self.retrain_schedule, retrain_epochs=self.retrain_epochs,
            warmup_frac=self.warmup_frac, lr_max=self.lr_max, lr_min=self.lr_min,
            seed=int(self.random_state or 0), batch_size=self.batch_size, momentum=self.momentum,
            weight_decay=self.weight_decay, shrink=self.shrink, dtype=self.dtype,
        )

    def _standardize(self, X):
        return ((X - self.mean_) / self.scale_).astype(self.dtype)

    def fit(self, X, y):
        X, y = check_X_y(X, y, allow_nd=True, dtype=np.float64)
        check_classification_targets(y)
        if X.ndim not in (2, 4):
            raise ConfigurationError(f"X must be 2-d or 4-d, got {X.ndim}-d")
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        self.classes_, yi = np.unique(y, return_inverse=True)
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        axes = (0, 2, 3) if X.ndim == 4 else (0,)
        self.mean_ = X.mean(axis=axes, keepdims=True)[0]
        self.scale_ = X.std(axis=axes, keepdims=True)[0]
        self.scale_[self.scale_ == 0] = 1.0
        cfg = self._config()
        train = Dataset(self._standardize(X), yi, "fit", len(self.classes_))
        data = DataBundle(train, None, train)
        arch = build_architecture(self.arch, len(self.classes_), train.sample_shape)
        store = ParamStore.initialize(arch, cfg.seed, cfg.np_dtype)
        original = build_original(get_profile(self.profile, self.epochs), num_batches(len(train), self.batch_size))
        rows, _, _ = fit_schedule(store, arch, original, train, cfg.optim, cfg.seed)
        self.mask_ = None
        if self.method is not None:
            self.mask_ = prune_once(store, arch, cfg.prune_spec, cfg, data)
            optim.reset_state(store)
            if self.retrain_epochs > 0:
                sch = build_schedule(self.retrain_schedule, original, self.retrain_epochs, self.warmup_frac, self.lr_max, self.lr_min)
                r, _, _ = fit_schedule(store, arch, sch, train, cfg.optim, cfg.seed, phase="retrain", epoch_offset=len(rows))
                rows += r
            if self.shrink and can_shrink(arch, self.mask_):
                store, arch = shrink_structured(store, arch, self.mask_)
        self.store_, self.arch_ = store, arch
        self.cost_ = count_cost(arch, store)
        self.history_ = rows
        return self

    def decision_function(self, X):
        check_is_fitted(self, "store_")
        X = check_array(X, allow_nd=True, dtype=np.float64)
        if int(np.prod(X.shape[1:])) != self.n_features_in_:
            raise ValueError(f"X has {int(np.prod(X.shape[1:]))} features, expected {self.n_features_in_}")
        return predict_logits(self.store_, self.arch_, self._standardize(X)).astype(np.float64)

    def predict_proba(self, X):
        z = self.decision_function(X)
        z = np.exp(z - z.max(axis=1, keepdims=True))
        return z / z.sum(axis=1, keepdims=True)

    def predict(self, X):
        check_is_fitted(self, "store_")
        return self.classes_[self.decision_function(X).argmax(axis=1)]

"""scikit-learn style wrapper around the embedding pipeline."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import Dataset
from .nn.losses import softmax
from .nn.model import build_host
from .nn.training import RegularizerHook, TrainConfig, train
from .watermark.core import as_bits, detection_report, layer_mean, ones_payload
from .watermark.keys import generate_key


def _as_images(X, input_shape=None):
    X = check_array(X, allow_nd=True, dtype=np.float32)
    if X.ndim == 2 and input_shape is not None:
        X = X.reshape((-1, *input_shape))
    if X.ndim == 3:
        X = X[:, None, :, :]
    if X.ndim != 4:
        raise ValueError(f"expected images shaped (N, C, H, W) or (N, H, W), got {X.shape}")
    return X


class WatermarkedCNNClassifier(ClassifierMixin, BaseEstimator):
    """CNN classifier trained with a watermark regularizer on one conv layer.

    ``n_bits=0`` trains without embedding.  After ``fit`` the secret key,
    payload and training record are available as ``key_``, ``payload_`` and
    ``record_``; :meth:`detect` measures the watermark in the fitted model.
    """

    def __init__(
        self,
        widths=(16, 64, 64, 64),
        residual=False,
        epochs=20,
        batch_size=64,
        learning_rate=0.02,
        lr_drop_epochs=(10, 15),
        lr_drop_factor=0.2,
        momentum=0.9,
        weight_decay=5e-4,
        key_family="random",
        n_bits=64,
        reg_lambda=0.01,
        embed_layer="conv3",
        key_seed=1,
        payload=None,
        random_state=0,
    ):
        self.widths = widths
        self.residual = residual
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.lr_drop_epochs = lr_drop_epochs
        self.lr_drop_factor = lr_drop_factor
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.key_family = key_family
        self.n_bits = n_bits
        self.reg_lambda = reg_lambda
        self.embed_layer = embed_layer
        self.key_seed = key_seed
        self.payload = payload
        self.random_state = random_state

    def _train_config(self):
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr_initial=self.learning_rate,
            lr_drop_factor=self.lr_drop_factor,
            lr_drop_epochs=[e for e in self.lr_drop_epochs if e < self.epochs],
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            seed=self.random_state,
            reg_lambda=self.reg_lambda,
        )

    def fit(self, X, y):
        X = _as_images(X)
        X, y = check_X_y(X, y, allow_nd=True, dtype=np.float32)
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        self.input_shape_ = tuple(X.shape[1:])
        model = build_host(
            input_shape=self.input_shape_,
            num_classes=len(self.classes_),
            widths=tuple(self.widths),
            residual=self.residual,
            seed=self.random_state,
        )
        dataset = Dataset(X, encoded, "train", len(self.classes_))
        hook = None
        self.key_ = self.payload_ = None
        if self.n_bits or self.payload is not None:
            payload = ones_payload(self.n_bits) if self.payload is None else as_bits(self.payload)
            M = model.conv_layer(self.embed_layer).fan_in
            self.key_ = generate_key(self.key_family, payload.size, M, self.key_seed)
            self.payload_ = payload
            hook = RegularizerHook(self.key_, payload, self.embed_layer, self.reg_lambda)
        self.model_, self.record_ = train(model, dataset, self._train_config(), hook)
        if hook is not None:
            self.model_.embed_layer_id = self.embed_layer
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        return self.model_.predict_logits(_as_images(X, self.input_shape_))

    def predict_proba(self, X):
        return softmax(self.decision_function(X).astype(np.float64))

    def predict(self, X):
        return self.classes_[self.decision_function(X).argmax(axis=1)]

    def detect(self, key=None, payload=None, layer=None):
        """Detection statistics of the fitted model (defaults: own key and payload)."""
        check_is_fitted(self, "model_")
        key = key if key is not None else self.key_
        if key is None:
            raise ValueError("no key: the model was fitted without a watermark")
        payload = payload if payload is not None else (
            self.payload_ if self.payload_ is not None and self.payload_.size == key.T
            else ones_payload(key.T)
        )
        w = layer_mean(self.model_, layer or self.embed_layer)
        return detection_report(key, w, payload)

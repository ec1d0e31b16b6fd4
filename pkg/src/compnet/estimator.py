"""Scikit-learn style front end around the network and training loop."""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, column_or_1d

from .config import load_config
from .optim import TrainConfig, train
from .tensor import softmax


def _check_images(X):
    X = check_array(X, allow_nd=True, dtype=np.float64)
    if X.ndim != 4:
        raise ValueError(
            f"expected images of shape (n, channels, height, width), "
            f"got ndim={X.ndim}"
        )
    return X


class CompNetClassifier(BaseEstimator, ClassifierMixin):
    """Image classifier whose convolution filters are Gaussian mixtures.

    Parameters mirror the CLI: `config` is a preset name or config file path,
    the rest control the training run. Channel means are estimated on the
    training set and subtracted everywhere when `normalize` is on.
    """

    def __init__(self, config="shapes-small", iterations=1000, batch_size=100,
                 seed=0, eval_interval=100, normalize=True):
        self.config = config
        self.iterations = iterations
        self.batch_size = batch_size
        self.seed = seed
        self.eval_interval = eval_interval
        self.normalize = normalize

    def fit(self, X, y):
        X = _check_images(X)
        y = column_or_1d(y)
        if y.shape[0] != X.shape[0]:
            raise ValueError(f"X has {X.shape[0]} samples but y has {y.shape[0]}")
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if self.classes_.size < 2:
            raise ValueError("need at least 2 classes")

        cfg = load_config(self.config)
        net = cfg.build(X.shape[1:], seed=self.seed)
        out_units = net.stack[-1].weights.shape[0]
        if out_units != self.classes_.size:
            raise ValueError(
                f"config {self.config!r} ends in {out_units} output units but "
                f"y has {self.classes_.size} classes"
            )

        if self.normalize:
            self.channel_means_ = X.mean(axis=(0, 2, 3))
        else:
            self.channel_means_ = np.zeros(X.shape[1])
        Xc = X - self.channel_means_[None, :, None, None]

        tcfg = TrainConfig(
            batch_size=min(self.batch_size, X.shape[0]),
            iterations=self.iterations,
            seed=self.seed,
            eval_interval=self.eval_interval,
        )
        self.history_ = train(net, Xc, encoded, tcfg)
        self.net_ = net
        self.config_ = cfg
        return self

    def _scores(self, X, chunk=500):
        check_is_fitted(self, "net_")
        X = _check_images(X)
        if X.shape[1:] != self.net_.in_shape:
            raise ValueError(
                f"images have shape {X.shape[1:]}, model expects {self.net_.in_shape}"
            )
        Xc = X - self.channel_means_[None, :, None, None]
        return np.concatenate(
            [self.net_.forward(Xc[lo : lo + chunk]) for lo in range(0, len(Xc), chunk)]
        )

    def predict_proba(self, X):
        return softmax(self._scores(X))

    def predict(self, X):
        scores = self._scores(X)  # fitted check happens before classes_ access
        return self.classes_[np.argmax(scores, axis=1)]

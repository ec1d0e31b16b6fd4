"""AdaDelta-with-momentum optimizer and the mini-batch training loop."""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .network import Network
from .tensor import ShapeError, softmax_xent


@dataclass
class AdaDeltaState:
    """Per-parameter running accumulators, keyed like the parameter dict."""

    rho: float = 0.95
    eps: float = 1e-6
    momentum: float = 0.8
    acc_grad: dict = field(default_factory=dict)
    acc_update: dict = field(default_factory=dict)
    prev_update: dict = field(default_factory=dict)

    def _ensure(self, key, param):
        if key not in self.acc_grad:
            self.acc_grad[key] = np.zeros_like(param)
            self.acc_update[key] = np.zeros_like(param)
            self.prev_update[key] = np.zeros_like(param)


def adadelta_step(params, grads, state: AdaDeltaState):
    """One in-place update of every parameter array.

    acc_grad <- rho*acc_grad + (1-rho)*g^2
    delta    <- -sqrt(acc_update+eps)/sqrt(acc_grad+eps) * g
    acc_update <- rho*acc_update + (1-rho)*delta^2
    step     <- momentum*prev_update + delta
    """
    for key, p in params.items():
        g = grads[key]
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} != param shape {p.shape} for {key}")
        state._ensure(key, p)
        ag, au, pu = state.acc_grad[key], state.acc_update[key], state.prev_update[key]
        ag *= state.rho
        ag += (1.0 - state.rho) * g * g
        delta = -np.sqrt(au + state.eps) / np.sqrt(ag + state.eps) * g
        au *= state.rho
        au += (1.0 - state.rho) * delta * delta
        step = state.momentum * pu + delta
        p += step
        pu[...] = step


@dataclass
class TrainConfig:
    batch_size: int = 100
    iterations: int = 5000
    seed: int = 0
    eval_interval: int = 100
    freeze_params: bool = False  # diagnostic: run the loop without updating

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")


@dataclass
class HistoryRow:
    iteration: int
    train_loss: float
    test_loss: Optional[float] = None
    test_accuracy: Optional[float] = None


def evaluate(net: Network, images, labels, chunk=500):
    """Mean loss and accuracy over a full split, in bounded-memory chunks."""
    n = images.shape[0]
    loss_sum = 0.0
    correct = 0
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        scores = net.forward(images[lo:hi])
        loss, _ = softmax_xent(scores, labels[lo:hi])
        loss_sum += loss * (hi - lo)
        correct += int((np.argmax(scores, axis=1) == labels[lo:hi]).sum())
    return loss_sum / n, correct / n


def train(net: Network, train_images, train_labels, cfg: TrainConfig,
          test_images=None, test_labels=None):
    """Mini-batch training with per-epoch reshuffling.

    Returns the history; the network is trained in place. Every step ends
    with constraint projection on the compositional banks, and the bank
    invariants are re-checked at each evaluation point. When an eval split is
    given, loss and accuracy on it are recorded at those points too.
    """
    n = train_images.shape[0]
    rng = np.random.default_rng(cfg.seed)
    state = AdaDeltaState()
    history = []
    order = rng.permutation(n)
    cursor = 0
    for it in range(1, cfg.iterations + 1):
        if cursor + cfg.batch_size > n:
            order = rng.permutation(n)
            cursor = 0
        idx = order[cursor : cursor + cfg.batch_size]
        cursor += cfg.batch_size

        loss, _ = net.loss_and_backward(train_images[idx], train_labels[idx])
        if not cfg.freeze_params:
            for li, layer in net.param_layers():
                params = {(li, k): v for k, v in layer.params().items()}
                grads = {(li, k): v for k, v in layer.grads().items()}
                adadelta_step(params, grads, state)
            net.project_constraints()

        row = HistoryRow(iteration=it, train_loss=float(loss))
        if it % cfg.eval_interval == 0 or it == cfg.iterations:
            net.validate_banks()
            if test_images is not None:
                row.test_loss, row.test_accuracy = evaluate(
                    net, test_images, test_labels
                )
        history.append(row)
    return history


def write_history_csv(history, path):
    with open(path, "w") as fh:
        fh.write("iteration,train_loss,test_loss,test_accuracy\n")
        for r in history:
            t = "" if r.test_loss is None else f"{r.test_loss:.17g}"
            a = "" if r.test_accuracy is None else f"{r.test_accuracy:.17g}"
            fh.write(f"{r.iteration},{r.train_loss:.17g},{t},{a}\n")

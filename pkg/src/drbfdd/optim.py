"""Mini-batch training of RBFDD / D-RBFDD models."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from drbfdd.deep import DrbfddModel, model_backward, pretrain_model
from drbfdd.errors import ShapeError, TrainingDiverged

log = logging.getLogger(__name__)

MODEL_KINDS = ("rbfdd", "drbfdd-2d", "drbfdd-1d", "iforest")


@dataclass
class TrainConfig:
    model: str = "rbfdd"
    optimizer: str = "adam"
    lr: float = 1e-3
    momentum: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 64
    epochs: int = 50
    H: int = 8
    beta: float = 1e-3
    lam: float = 1e-3
    seed: int = 0
    # iforest only
    n_estimators: int = 100
    subsample: int = 256

    def __post_init__(self):
        if self.model not in MODEL_KINDS:
            raise ValueError(f"model must be one of {MODEL_KINDS}, got {self.model!r}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")
        # lr == 0 is allowed: it makes training the identity, which tests rely on
        if not self.lr >= 0:
            raise ValueError(f"lr must be >= 0, got {self.lr}")
        if self.batch_size < 1 or self.epochs < 1 or self.H < 1:
            raise ValueError("batch_size, epochs and H must all be >= 1")
        if not (0 <= self.beta <= 1 and 0 <= self.lam <= 1):
            raise ValueError(f"beta and lambda must lie in [0, 1], got {self.beta}, {self.lam}")
        if self.n_estimators < 1 or self.subsample < 2:
            raise ValueError("n_estimators must be >= 1 and subsample >= 2")

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def to_dict(self) -> dict:
        return asdict(self)

    def replace(self, **changes) -> TrainConfig:
        return TrainConfig(**{**self.to_dict(), **changes})


@dataclass
class TrainReport:
    losses: list[float]
    model: DrbfddModel
    seconds: float
    config: TrainConfig
    initial_model: DrbfddModel | None = field(default=None, repr=False)


def _check_pairs(params, grads):
    if params.keys() != grads.keys():
        raise ShapeError(f"parameter/gradient names differ: {sorted(set(params) ^ set(grads))}")
    for k in params:
        if np.shape(params[k]) != np.shape(grads[k]):
            raise ShapeError(f"{k}: grad shape {np.shape(grads[k])} != param shape {np.shape(params[k])}")


def sgd_step(params, grads, lr, momentum=0.0, state=None):
    """Heavy-ball SGD: ``v = momentum * v + g``; ``p = p - lr * v``."""
    _check_pairs(params, grads)
    velocity = {} if state is None else state
    new_params, new_state = {}, {}
    for k, p in params.items():
        v = grads[k] if k not in velocity else momentum * velocity[k] + grads[k]
        new_state[k] = v
        new_params[k] = p - lr * v
    return new_params, new_state


def adam_step(params, grads, state=None, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update; ``state`` holds ``t`` and both moment dicts."""
    _check_pairs(params, grads)
    if state is None:
        state = {"t": 0, "m": {k: np.zeros_like(p) for k, p in params.items()},
                 "v": {k: np.zeros_like(p) for k, p in params.items()}}
    t = state["t"] + 1
    m_new, v_new, out = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        m = beta1 * state["m"][k] + (1 - beta1) * g
        v = beta2 * state["v"][k] + (1 - beta2) * g * g
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        out[k] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        m_new[k], v_new[k] = m, v
    return out, {"t": t, "m": m_new, "v": v_new}


def train(model: DrbfddModel, data, config: TrainConfig) -> TrainReport:
    """Pre-train the head with k-means, then minimise the one-class cost.

    ``data`` holds normal instances only. Each epoch visits a seeded
    permutation in mini-batches of ``config.batch_size``; a short final batch
    is kept and its cost uses its own size. The recorded loss is the epoch's
    summed batch cost divided by the number of instances.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.shape[0] == 0:
        raise ValueError("training set is empty")
    start = time.perf_counter()
    rng = np.random.default_rng(config.seed)

    model = pretrain_model(model, data, config.H, config.seed)
    initial = model.copy()
    params = model.parameters()
    state = None
    losses = []
    n = data.shape[0]
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for b, lo in enumerate(range(0, n, config.batch_size), start=1):
            batch = data[order[lo : lo + config.batch_size]]
            terms, grads = model_backward(model, batch, config.beta, config.lam)
            if not np.isfinite(terms.total):
                raise TrainingDiverged(
                    f"loss became {terms.total} at epoch {epoch}, batch {b}"
                )
            total += terms.total
            if config.optimizer == "adam":
                params, state = adam_step(
                    params, grads, state, config.lr, config.beta1, config.beta2, config.adam_eps
                )
            else:
                params, state = sgd_step(params, grads, config.lr, config.momentum, state)
            if not all(np.isfinite(p).all() for p in params.values()):
                raise TrainingDiverged(f"non-finite parameters after epoch {epoch}, batch {b}")
            model.set_parameters(params)
        losses.append(total / n)
        log.debug("epoch %d loss %.6g", epoch, losses[-1])
    return TrainReport(losses, model, time.perf_counter() - start, config, initial)

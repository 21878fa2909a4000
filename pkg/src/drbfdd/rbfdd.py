"""The RBFDD head: Gaussian kernels feeding a scaled-tanh output unit.

Forward pass for an input row ``x``::

    P_h = exp(-||x - mu_h||^2 / (2 s_h^2 + eps))
    z   = sum_h w_h P_h
    y   = 1.7159 tanh(2 z / 3)

and the one-class cost over a batch of ``N`` rows::

    E = sum_i 1/2 [ (1 - y_i)^2 + beta sum_h s_h^2 + lam sum_h w_h^2 ]

The regularizers sit inside the per-sample sum, so their effective strength
grows linearly with the batch size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from drbfdd.errors import ShapeError
from drbfdd.numkit import TANH_SCALE, scaled_tanh, scaled_tanh_grad

EPS = 1e-12

# rows per chunk when forming x - mu explicitly (N x H x D floats)
_CHUNK_ELEMS = 4_000_000


@dataclass
class RbfddParams:
    centers: np.ndarray  # (H, D)
    spreads: np.ndarray  # (H,)
    weights: np.ndarray  # (H,)

    def __post_init__(self):
        self.centers = np.ascontiguousarray(self.centers, dtype=np.float64)
        self.spreads = np.ascontiguousarray(self.spreads, dtype=np.float64).reshape(-1)
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64).reshape(-1)
        if self.centers.ndim != 2:
            raise ShapeError(f"centers must be (H, D), got {self.centers.shape}")
        H, D = self.centers.shape
        if H < 1 or D < 1:
            raise ShapeError(f"need H >= 1 and D >= 1, got H={H}, D={D}")
        if self.spreads.shape != (H,) or self.weights.shape != (H,):
            raise ShapeError(
                f"spreads {self.spreads.shape} and weights {self.weights.shape} must be ({H},)"
            )

    @property
    def H(self) -> int:
        return self.centers.shape[0]

    @property
    def D(self) -> int:
        return self.centers.shape[1]

    def copy(self) -> RbfddParams:
        return RbfddParams(self.centers.copy(), self.spreads.copy(), self.weights.copy())

    def as_dict(self) -> dict[str, np.ndarray]:
        return {"centers": self.centers, "spreads": self.spreads, "weights": self.weights}


@dataclass
class HeadForwardContext:
    sq_dist: np.ndarray  # (N, H) squared distances to each center
    activations: np.ndarray  # (N, H) P_h(x_i)
    z: np.ndarray  # (N,)
    y: np.ndarray  # (N,)
    params_id: int = 0

    @property
    def N(self) -> int:
        return self.y.shape[0]


@dataclass
class LossTerms:
    fit: float
    spread_reg: float
    weight_reg: float
    total: float
    beta: float
    lam: float


@dataclass
class HeadGrads:
    weights: np.ndarray
    spreads: np.ndarray
    centers: np.ndarray
    inputs: np.ndarray

    def as_dict(self) -> dict[str, np.ndarray]:
        return {"centers": self.centers, "spreads": self.spreads, "weights": self.weights}


def _check_batch(batch, params):
    batch = np.ascontiguousarray(batch, dtype=np.float64)
    if batch.ndim == 1:
        batch = batch[None, :]
    if batch.ndim != 2 or batch.shape[1] != params.D:
        raise ShapeError(f"batch shape {batch.shape} does not match head input dim {params.D}")
    return batch


def squared_distances(batch, centers) -> np.ndarray:
    """Exact ``||x_i - mu_h||^2`` via explicit differences (no cancellation)."""
    N, D = batch.shape
    H = centers.shape[0]
    out = np.empty((N, H))
    step = max(1, _CHUNK_ELEMS // max(1, H * D))
    for start in range(0, N, step):
        diff = batch[start : start + step, None, :] - centers[None, :, :]
        out[start : start + step] = np.einsum("nhd,nhd->nh", diff, diff)
    return out


def _denominators(params):
    return 2.0 * params.spreads**2 + EPS


def kernel_activations(x, params: RbfddParams) -> np.ndarray:
    """Gaussian activations of every kernel for one input vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.D,):
        raise ShapeError(f"input shape {x.shape} != ({params.D},)")
    return head_forward(x[None, :], params).activations[0]


def head_forward(batch, params: RbfddParams) -> HeadForwardContext:
    batch = _check_batch(batch, params)
    d2 = squared_distances(batch, params.centers)
    P = np.exp(-d2 / _denominators(params))
    z = P @ params.weights
    return HeadForwardContext(d2, P, z, scaled_tanh(z), params_id=_fingerprint(batch, params))


def _fingerprint(batch, params) -> int:
    # cheap staleness guard: shapes plus a few summary values
    return hash(
        (
            batch.shape,
            params.centers.shape,
            float(batch.sum()),
            float(params.centers.sum()),
            float(params.spreads.sum()),
            float(params.weights.sum()),
        )
    )


def loss(ctx: HeadForwardContext, params: RbfddParams, beta: float, lam: float, N: int | None = None) -> LossTerms:
    if beta < 0 or lam < 0:
        raise ValueError(f"regularization coefficients must be non-negative, got beta={beta}, lambda={lam}")
    if N is None:
        N = ctx.N
    if N != ctx.N:
        raise ShapeError(f"batch size {N} != context sample count {ctx.N}")
    fit = 0.5 * float(np.sum((1.0 - ctx.y) ** 2))
    spread_reg = N * 0.5 * beta * float(np.sum(params.spreads**2))
    weight_reg = N * 0.5 * lam * float(np.sum(params.weights**2))
    return LossTerms(fit, spread_reg, weight_reg, fit + spread_reg + weight_reg, beta, lam)


def head_gradients(ctx: HeadForwardContext, batch, params: RbfddParams, beta: float, lam: float) -> HeadGrads:
    """Partial derivatives of the batch cost w.r.t. every head parameter and the input rows."""
    batch = _check_batch(batch, params)
    if ctx.N != batch.shape[0] or ctx.params_id != _fingerprint(batch, params):
        raise ValueError("stale forward context: it was not produced from this batch and these params")
    N = batch.shape[0]
    den = _denominators(params)
    P = ctx.activations

    delta = -(1.0 - ctx.y) * scaled_tanh_grad(ctx.z)  # dE/dz_i
    G = delta[:, None] * params.weights[None, :]  # dE/dP_ih
    K = G * P

    g_w = P.T @ delta + N * lam * params.weights
    # dP/dden = P d2 / den^2, dden/ds = 4 s
    g_s = (K * ctx.sq_dist).sum(axis=0) / den**2 * 4.0 * params.spreads + N * beta * params.spreads
    M = K / den[None, :]
    g_mu = 2.0 * (M.T @ batch - M.sum(axis=0)[:, None] * params.centers)
    g_x = -2.0 * (M.sum(axis=1)[:, None] * batch - M @ params.centers)
    return HeadGrads(g_w, g_s, g_mu, g_x)


def anomaly_score(x, params: RbfddParams) -> np.ndarray | float:
    """``-y``: higher means more anomalous. Accepts one vector or a batch."""
    x = np.asarray(x, dtype=np.float64)
    y = head_forward(x, params).y
    return float(-y[0]) if x.ndim == 1 else -y


__all__ = [
    "EPS",
    "TANH_SCALE",
    "RbfddParams",
    "HeadForwardContext",
    "LossTerms",
    "HeadGrads",
    "squared_distances",
    "kernel_activations",
    "head_forward",
    "loss",
    "head_gradients",
    "anomaly_score",
]

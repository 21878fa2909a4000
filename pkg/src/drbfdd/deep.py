"""Feature extractor + RBFDD head, trained end to end, and its binary format.

The extractor is a LeNet-5 style stack::

    [zero-pad] conv(same) -> tanh -> pool2 -> conv(valid) -> tanh -> pool2
    -> flatten -> dense(latent) -> tanh

with the LeCun scaled tanh everywhere, so the latent vector handed to the
head (and to k-means during pre-training) is bounded in (-1.7159, 1.7159).
A model without an extractor is the shallow RBFDD network on raw inputs.
"""

from __future__ import annotations

import copy
import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from drbfdd import numkit as nk
from drbfdd.errors import ModelFormatError, ShapeError
from drbfdd.pretrain import init_rbfdd
from drbfdd.rbfdd import (
    HeadForwardContext,
    LossTerms,
    RbfddParams,
    head_forward,
    head_gradients,
    loss,
)

MAGIC = b"DRBF"
FORMAT_VERSION = 1

MODALITIES = ("vector", "image2d", "signal1d")


class FeatureExtractor:
    def __init__(self, layers: list[nk.Layer], input_shape: tuple[int, ...]):
        self.layers = list(layers)
        self.input_shape = tuple(int(s) for s in input_shape)
        shape = self.input_shape
        for layer in self.layers:
            shape = layer.output_shape(shape)
        if len(shape) != 1:
            raise ShapeError(f"extractor must end in a flat latent vector, got shape {shape}")
        self.latent_dim = shape[0]

    def forward(self, x: np.ndarray) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        grads = {}
        for i in reversed(range(len(self.layers))):
            g = self.layers[i].backward(grad)
            for name, value in g.grad_params.items():
                grads[f"layer{i}.{name}"] = value
            grad = g.grad_input
        return grad, grads

    def parameters(self) -> dict[str, np.ndarray]:
        return {
            f"layer{i}.{name}": value
            for i, layer in enumerate(self.layers)
            for name, value in layer.params.items()
        }

    def clear(self):
        for layer in self.layers:
            layer.clear()


@dataclass
class DrbfddModel:
    head: RbfddParams
    extractor: FeatureExtractor | None = None
    input_shape: tuple[int, ...] = ()
    modality: str = "vector"

    def __post_init__(self):
        if self.extractor is not None:
            self.input_shape = self.extractor.input_shape
            if self.head.D != self.extractor.latent_dim:
                raise ShapeError(
                    f"head input dim {self.head.D} != extractor latent dim {self.extractor.latent_dim}"
                )
        elif not self.input_shape:
            self.input_shape = (self.head.D,)
        self.input_shape = tuple(int(s) for s in self.input_shape)
        if self.modality not in MODALITIES:
            raise ValueError(f"unknown modality {self.modality!r}")

    @property
    def kind(self) -> str:
        if self.extractor is None:
            return "rbfdd"
        return "drbfdd-2d" if len(self.input_shape) == 3 else "drbfdd-1d"

    def prepare(self, batch) -> np.ndarray:
        """Reshape raw instances (N, ...) to the network input layout."""
        batch = np.asarray(batch, dtype=np.float64)
        expected = int(np.prod(self.input_shape))
        if batch.ndim < 1 or (batch.size and batch[0].size != expected):
            raise ShapeError(
                f"instances of shape {batch.shape[1:]} do not fit model input {self.input_shape}"
            )
        return np.ascontiguousarray(batch.reshape((batch.shape[0],) + self.input_shape))

    def latent(self, batch) -> np.ndarray:
        x = self.prepare(batch)
        if self.extractor is None:
            return x
        return self.extractor.forward(x)

    def parameters(self) -> dict[str, np.ndarray]:
        params = {} if self.extractor is None else self.extractor.parameters()
        params.update({f"head.{k}": v for k, v in self.head.as_dict().items()})
        return params

    def set_parameters(self, params: dict[str, np.ndarray]):
        own = self.parameters()
        if set(own) != set(params):
            raise ShapeError(f"parameter names differ: {sorted(set(own) ^ set(params))}")
        for name, value in params.items():
            if own[name].shape != np.shape(value):
                raise ShapeError(f"{name}: shape {np.shape(value)} != {own[name].shape}")
        if self.extractor is not None:
            for i, layer in enumerate(self.extractor.layers):
                for pname in layer.params:
                    layer.params[pname] = np.array(params[f"layer{i}.{pname}"], dtype=np.float64)
        self.head = RbfddParams(
            np.array(params["head.centers"]),
            np.array(params["head.spreads"]),
            np.array(params["head.weights"]),
        )

    def score(self, batch, chunk: int = 512) -> np.ndarray:
        """Anomaly scores (``-y``) for raw instances; higher is more anomalous."""
        batch = np.asarray(batch, dtype=np.float64)
        out = np.empty(batch.shape[0])
        for start in range(0, batch.shape[0], chunk):
            _, ctx = model_forward(self, batch[start : start + chunk])
            out[start : start + chunk] = -ctx.y
        if self.extractor is not None:
            self.extractor.clear()
        return out

    def copy(self) -> DrbfddModel:
        return copy.deepcopy(self)


# ---------------------------------------------------------------------------
# construction


def _glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _padded_length(size: int, kernel: int) -> int:
    # smallest size >= input for which pool2 -> valid conv -> pool2 divides exactly
    p = size
    while True:
        inner = p // 2 - kernel + 1
        if p % 2 == 0 and inner > 0 and inner % 2 == 0:
            return p
        p += 1


def _build_extractor(seed, input_shape, filters, kernel, latent):
    if kernel % 2 != 1:
        raise ValueError(f"kernel size must be odd, got {kernel}")
    rng = np.random.default_rng(seed)
    channels, *spatial = input_shape
    nd = len(spatial)
    f1, f2 = filters
    padded = [_padded_length(s, kernel) for s in spatial]
    layers: list[nk.Layer] = []
    if padded != spatial:
        layers.append(nk.ZeroPad([p - s for p, s in zip(padded, spatial)]))

    k = (kernel,) * nd
    kvol = kernel**nd
    layers += [
        nk.Conv(_glorot(rng, (f1, channels) + k, channels * kvol, f1 * kvol), np.zeros(f1), 1, kernel // 2),
        nk.ScaledTanh(),
        nk.MaxPool(2, nd),
        nk.Conv(_glorot(rng, (f2, f1) + k, f1 * kvol, f2 * kvol), np.zeros(f2), 1, 0),
        nk.ScaledTanh(),
        nk.MaxPool(2, nd),
        nk.Flatten(),
    ]
    flat = f2 * int(np.prod([(p // 2 - kernel + 1) // 2 for p in padded]))
    layers += [
        nk.Dense(_glorot(rng, (latent, flat), flat, latent), np.zeros(latent)),
        nk.ScaledTanh(),
    ]
    return FeatureExtractor(layers, tuple(input_shape))


def build_extractor_2d(seed: int, input_hw=(28, 28), channels=1, filters=(6, 16), kernel=5, latent=84) -> FeatureExtractor:
    """LeNet-5 style 2D extractor; 1x28x28 maps to an 84-d latent vector."""
    return _build_extractor(seed, (channels,) + tuple(input_hw), filters, kernel, latent)


def build_extractor_1d(seed: int, length=417, channels=1, filters=(6, 16), kernel=5, latent=84) -> FeatureExtractor:
    """1D analogue for signals; the input is zero-padded on the right so pooling is exact."""
    return _build_extractor(seed, (channels, length), filters, kernel, latent)


def build_model(kind: str, input_shape, H: int = 1, seed: int = 0, modality: str | None = None, **extractor_kw) -> DrbfddModel:
    """Untrained model with a placeholder head (replace it with :func:`pretrain_model`)."""
    input_shape = tuple(int(s) for s in input_shape)
    if kind == "rbfdd":
        D = int(np.prod(input_shape))
        if modality is None:
            modality = "vector" if len(input_shape) == 1 else "image2d"
        head = RbfddParams(np.zeros((H, D)), np.ones(H), np.full(H, 1.0 / H))
        return DrbfddModel(head, None, (D,), modality)
    if kind == "drbfdd-2d":
        hw = input_shape[-2:]
        channels = input_shape[0] if len(input_shape) == 3 else 1
        ext = build_extractor_2d(seed, hw, channels, **extractor_kw)
        modality = "image2d"
    elif kind == "drbfdd-1d":
        length = input_shape[-1]
        channels = input_shape[0] if len(input_shape) == 2 else 1
        ext = build_extractor_1d(seed, length, channels, **extractor_kw)
        modality = "signal1d"
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    head = RbfddParams(np.zeros((H, ext.latent_dim)), np.ones(H), np.full(H, 1.0 / H))
    return DrbfddModel(head, ext, ext.input_shape, modality)


# ---------------------------------------------------------------------------
# forward / backward


def model_forward(model: DrbfddModel, batch) -> tuple[np.ndarray, HeadForwardContext]:
    latent = model.latent(batch)
    return latent, head_forward(latent, model.head)


def model_backward(model: DrbfddModel, batch, beta: float, lam: float) -> tuple[LossTerms, dict[str, np.ndarray]]:
    """Loss and gradients of every parameter for one mini-batch."""
    latent, ctx = model_forward(model, batch)
    terms = loss(ctx, model.head, beta, lam)
    hg = head_gradients(ctx, latent, model.head, beta, lam)
    grads = {f"head.{k}": v for k, v in hg.as_dict().items()}
    if model.extractor is not None:
        _, ext_grads = model.extractor.backward(hg.inputs)
        grads.update(ext_grads)
        model.extractor.clear()
    return terms, grads


def pretrain_model(model: DrbfddModel, sample, H: int, seed: int, chunk: int = 512) -> DrbfddModel:
    """Replace the head with k-means initialised kernels fitted to the sample's latents."""
    sample = np.asarray(sample, dtype=np.float64)
    if sample.shape[0] == 0:
        raise ValueError("pre-training sample is empty")
    if sample.shape[0] < H:
        raise ValueError(f"pre-training sample has {sample.shape[0]} instances, fewer than H={H}")
    out = model.copy()
    latents = np.concatenate(
        [out.latent(sample[i : i + chunk]) for i in range(0, sample.shape[0], chunk)]
    )
    if out.extractor is not None:
        out.extractor.clear()
    out.head = init_rbfdd(latents, H, seed)
    return out


# ---------------------------------------------------------------------------
# serialization

_KIND_CODES = {"conv2d": 1, "conv1d": 2, "maxpool": 3, "dense": 4, "scaled_tanh": 5, "flatten": 6, "zeropad": 7}
_CODE_KINDS = {v: k for k, v in _KIND_CODES.items()}


def _write_array(buf, arr):
    arr = np.ascontiguousarray(arr, dtype="<f8")
    buf.write(struct.pack("<I", arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    buf.write(arr.tobytes())


def model_to_bytes(model: DrbfddModel) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", FORMAT_VERSION, MODALITIES.index(model.modality)))
    buf.write(struct.pack("<I", len(model.input_shape)))
    buf.write(struct.pack(f"<{len(model.input_shape)}I", *model.input_shape))
    layers = [] if model.extractor is None else model.extractor.layers
    buf.write(struct.pack("<I", len(layers)))
    for layer in layers:
        cfg = layer.config
        buf.write(struct.pack("<II", _KIND_CODES[layer.kind], len(cfg)))
        buf.write(struct.pack(f"<{len(cfg)}i", *cfg))
        buf.write(struct.pack("<I", len(layer.params)))
        for name, value in layer.params.items():
            raw = name.encode()
            buf.write(struct.pack("<I", len(raw)))
            buf.write(raw)
            _write_array(buf, value)
    for arr in (model.head.centers, model.head.spreads, model.head.weights):
        _write_array(buf, arr)
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise ModelFormatError(f"corrupt model file: truncated at byte {self.pos} (needed {n} more)")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self):
        (ndim,) = self.unpack("<I")
        if ndim > 8:
            raise ModelFormatError(f"corrupt model file: tensor rank {ndim} at byte {self.pos}")
        shape = self.unpack(f"<{ndim}I")
        count = int(np.prod(shape)) if ndim else 1
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64).reshape(shape)


def _make_layer(kind, cfg, params):
    if kind in ("conv2d", "conv1d"):
        return nk.Conv(params["weight"], params["bias"], *cfg)
    if kind == "maxpool":
        return nk.MaxPool(*cfg)
    if kind == "dense":
        return nk.Dense(params["weight"], params["bias"])
    if kind == "scaled_tanh":
        return nk.ScaledTanh()
    if kind == "flatten":
        return nk.Flatten()
    return nk.ZeroPad(cfg)


def model_from_bytes(data: bytes) -> DrbfddModel:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise ModelFormatError("corrupt model file: bad magic (expected 'DRBF')")
    version, modality = r.unpack("<II")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"corrupt model file: unsupported format version {version}")
    if modality >= len(MODALITIES):
        raise ModelFormatError(f"corrupt model file: unknown modality code {modality}")
    (ndim,) = r.unpack("<I")
    input_shape = r.unpack(f"<{ndim}I")
    (n_layers,) = r.unpack("<I")
    layers = []
    try:
        for _ in range(n_layers):
            code, n_cfg = r.unpack("<II")
            if code not in _CODE_KINDS:
                raise ModelFormatError(f"corrupt model file: unknown layer code {code}")
            cfg = r.unpack(f"<{n_cfg}i")
            (n_params,) = r.unpack("<I")
            params = {}
            for _ in range(n_params):
                (nlen,) = r.unpack("<I")
                name = r.take(nlen).decode()
                params[name] = r.array()
            layers.append(_make_layer(_CODE_KINDS[code], cfg, params))
        head = RbfddParams(r.array(), r.array(), r.array())
        if r.pos != len(data):
            raise ModelFormatError(f"corrupt model file: {len(data) - r.pos} trailing bytes")
        extractor = FeatureExtractor(layers, input_shape) if layers else None
        return DrbfddModel(head, extractor, tuple(input_shape), MODALITIES[modality])
    except (ShapeError, KeyError, UnicodeDecodeError, TypeError) as exc:
        raise ModelFormatError(f"corrupt model file: {exc}") from exc


def save_model(model: DrbfddModel, path) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path) -> DrbfddModel:
    return model_from_bytes(Path(path).read_bytes())

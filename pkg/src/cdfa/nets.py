"""Minimal differentiable stack with explicit, hand-derived backward passes.

Three parameter stores:

* ``alpha`` - feature extractor: stride-2 conv blocks with tanh, global
  average pooling, linear projection to the feature dimension;
* ``beta``  - classifier head: single-logit affine map plus sigmoid;
* ``gamma`` - 3-layer policy MLP with a (maskable) softmax over the three
  forgery operators.

Everything is float64 numpy; all gradients are analytic and are checked
against central finite differences in the test suite.  No autodiff engine
is involved, so the gradient code below is the product being tested.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .augment import AugContext, FaceFrame, PseudoFake, operator_streams, realize_operator, OPS
from .errors import CheckpointError, DimensionMismatchError

Array = np.ndarray

_CONV_STRIDE = 2

# Logit magnitude at which the clamped probability hits 1e-7 / 1 - 1e-7.
_LOGIT_CLAMP = math.log((1.0 - 1e-7) / 1e-7)


class ParamStore:
    """Named float64 tensors with shapes frozen at construction."""

    def __init__(self, tensors: dict[str, Array]):
        self._tensors: dict[str, Array] = {}
        for key, value in tensors.items():
            arr = np.asarray(value, dtype=np.float64)
            if not np.isfinite(arr).all():
                raise ValueError(f"parameter {key!r} contains non-finite entries")
            self._tensors[key] = arr

    def __getitem__(self, key: str) -> Array:
        return self._tensors[key]

    def __setitem__(self, key: str, value) -> None:
        arr = np.asarray(value, dtype=np.float64)
        if key not in self._tensors:
            raise KeyError(f"unknown parameter {key!r}; shapes are frozen at construction")
        if arr.shape != self._tensors[key].shape:
            raise DimensionMismatchError(
                f"parameter {key!r} has shape {self._tensors[key].shape}, got {arr.shape}"
            )
        if not np.isfinite(arr).all():
            raise ValueError(f"parameter {key!r} assigned non-finite entries")
        self._tensors[key] = arr

    def __contains__(self, key: str) -> bool:
        return key in self._tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def keys(self):
        return self._tensors.keys()

    def items(self):
        return self._tensors.items()

    def copy(self) -> "ParamStore":
        return ParamStore({k: v.copy() for k, v in self._tensors.items()})

    def zeros_like(self) -> dict[str, Array]:
        return {k: np.zeros_like(v) for k, v in self._tensors.items()}


@dataclass(frozen=True)
class NetConfig:
    """Architecture sizes for the toy detector and the policy MLP."""

    in_channels: int = 3
    conv_channels: tuple[int, ...] = (8, 16, 32, 32)
    feature_dim: int = 64
    policy_hidden: tuple[int, int] = (64, 32)
    kernel_size: int = 3


@dataclass
class Prediction:
    """Single-logit detector output; probability = sigmoid(logit)."""

    logit: Array | float
    probability: Array | float


def _glorot(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> Array:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_extractor(cfg: NetConfig, rng: np.random.Generator) -> ParamStore:
    k = cfg.kernel_size
    tensors: dict[str, Array] = {}
    cin = cfg.in_channels
    for i, cout in enumerate(cfg.conv_channels):
        tensors[f"conv{i}/W"] = _glorot(rng, (k, k, cin, cout), k * k * cin, k * k * cout)
        tensors[f"conv{i}/b"] = np.zeros(cout)
        cin = cout
    tensors["proj/W"] = _glorot(rng, (cin, cfg.feature_dim), cin, cfg.feature_dim)
    tensors["proj/b"] = np.zeros(cfg.feature_dim)
    return ParamStore(tensors)


def init_classifier(cfg: NetConfig, rng: np.random.Generator) -> ParamStore:
    d = cfg.feature_dim
    return ParamStore({"W": _glorot(rng, (d,), d, 1), "b": np.zeros(())})


def init_policy(cfg: NetConfig, rng: np.random.Generator) -> ParamStore:
    sizes = (cfg.feature_dim, *cfg.policy_hidden, 3)
    tensors: dict[str, Array] = {}
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        tensors[f"fc{i}/W"] = _glorot(rng, (a, b), a, b)
        tensors[f"fc{i}/b"] = np.zeros(b)
    return ParamStore(tensors)


# ---------------------------------------------------------------------------
# Layer primitives (forward + backward)
# ---------------------------------------------------------------------------

def _im2col(x: Array, k: int, stride: int, pad: int) -> tuple[Array, int, int]:
    n, h, w, c = x.shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    cols = np.empty((n, ho, wo, k, k, c))
    for di in range(k):
        for dj in range(k):
            cols[:, :, :, di, dj, :] = xp[:, di : di + stride * ho : stride, dj : dj + stride * wo : stride, :]
    return cols.reshape(n, ho * wo, k * k * c), ho, wo


def _conv_forward(x: Array, w: Array, b: Array) -> tuple[Array, tuple]:
    k = w.shape[0]
    pad = k // 2
    cols, ho, wo = _im2col(x, k, _CONV_STRIDE, pad)
    wm = w.reshape(-1, w.shape[3])
    y = cols @ wm + b
    return y.reshape(x.shape[0], ho, wo, w.shape[3]), (cols, x.shape, k, pad, ho, wo)


def _conv_backward(dy: Array, w: Array, cache: tuple) -> tuple[Array, Array, Array]:
    cols, x_shape, k, pad, ho, wo = cache
    n, h, wd, c = x_shape
    f = w.shape[3]
    dy2 = dy.reshape(n, ho * wo, f)
    wm = w.reshape(-1, f)
    dw = np.tensordot(cols, dy2, axes=([0, 1], [0, 1])).reshape(w.shape)
    db = dy2.sum(axis=(0, 1))
    dcols = (dy2 @ wm.T).reshape(n, ho, wo, k, k, c)
    dxp = np.zeros((n, h + 2 * pad, wd + 2 * pad, c))
    for di in range(k):
        for dj in range(k):
            dxp[:, di : di + _CONV_STRIDE * ho : _CONV_STRIDE, dj : dj + _CONV_STRIDE * wo : _CONV_STRIDE, :] += dcols[:, :, :, di, dj, :]
    dx = dxp[:, pad : pad + h, pad : pad + wd, :]
    return dx, dw, db


def _sigmoid(x):
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


def masked_softmax(logits: Array, op_mask: Array | None = None) -> Array:
    """Stable softmax; masked entries get exactly zero probability."""
    u = np.asarray(logits, dtype=np.float64)
    if op_mask is not None:
        mask = np.asarray(op_mask, dtype=bool)
        if not mask.any():
            raise ValueError("op mask disables every operator")
        u = np.where(mask, u, -np.inf)
    m = u.max(axis=-1, keepdims=True)
    e = np.exp(u - m)
    return e / e.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# Extractor / classifier / policy forwards
# ---------------------------------------------------------------------------

def _num_blocks(alpha: ParamStore) -> int:
    n = 0
    while f"conv{n}/W" in alpha:
        n += 1
    return n


def _extractor_forward(images: Array, alpha: ParamStore) -> tuple[Array, dict]:
    x = np.asarray(images, dtype=np.float64)
    if x.ndim != 4 or x.shape[3] != alpha["conv0/W"].shape[2]:
        raise DimensionMismatchError(f"expected (N, H, W, {alpha['conv0/W'].shape[2]}) images, got {x.shape}")
    caches = []
    acts = []
    for i in range(_num_blocks(alpha)):
        y, cache = _conv_forward(x, alpha[f"conv{i}/W"], alpha[f"conv{i}/b"])
        x = np.tanh(y)
        caches.append(cache)
        acts.append(x)
    spatial = x.shape[1] * x.shape[2]
    pooled = x.mean(axis=(1, 2))
    feats = pooled @ alpha["proj/W"] + alpha["proj/b"]
    return feats, {"caches": caches, "acts": acts, "pooled": pooled, "spatial": spatial, "pool_shape": x.shape}


def _extractor_backward(dfeats: Array, fwd: dict, alpha: ParamStore) -> dict[str, Array]:
    grads: dict[str, Array] = {}
    grads["proj/W"] = fwd["pooled"].T @ dfeats
    grads["proj/b"] = dfeats.sum(axis=0)
    dpooled = dfeats @ alpha["proj/W"].T
    n, ph, pw, pc = fwd["pool_shape"]
    dx = np.broadcast_to(dpooled[:, None, None, :] / fwd["spatial"], (n, ph, pw, pc)).copy()
    for i in reversed(range(_num_blocks(alpha))):
        a = fwd["acts"][i]
        dy = dx * (1.0 - a * a)
        dx, dw, db = _conv_backward(dy, alpha[f"conv{i}/W"], fwd["caches"][i])
        grads[f"conv{i}/W"] = dw
        grads[f"conv{i}/b"] = db
    return grads


def features(images: Array, alpha: ParamStore) -> Array:
    """Deterministic extractor forward; accepts one image or a batch."""
    x = np.asarray(images, dtype=np.float64)
    single = x.ndim == 3
    if single:
        x = x[None]
    feats, _ = _extractor_forward(x, alpha)
    return feats[0] if single else feats


def classify(z: Array, beta: ParamStore) -> Prediction:
    """Single-logit affine map plus sigmoid; accepts one vector or a batch."""
    zz = np.asarray(z, dtype=np.float64)
    if zz.shape[-1] != beta["W"].shape[0]:
        raise DimensionMismatchError(f"feature dim {zz.shape[-1]} vs head dim {beta['W'].shape[0]}")
    logit = zz @ beta["W"] + beta["b"]
    return Prediction(logit=logit, probability=_sigmoid(logit))


def _policy_forward(z: Array, gamma: ParamStore, op_mask: Array | None = None) -> tuple[Array, dict]:
    x = np.asarray(z, dtype=np.float64)
    if x.shape[-1] != gamma["fc0/W"].shape[0]:
        raise DimensionMismatchError(f"feature dim {x.shape[-1]} vs policy input {gamma['fc0/W'].shape[0]}")
    inputs = []
    n_layers = 0
    while f"fc{n_layers}/W" in gamma:
        n_layers += 1
    for i in range(n_layers):
        inputs.append(x)
        x = x @ gamma[f"fc{i}/W"] + gamma[f"fc{i}/b"]
        if i < n_layers - 1:
            x = np.tanh(x)
    p = masked_softmax(x, op_mask)
    return p, {"inputs": inputs, "logits": x, "p": p, "n_layers": n_layers}


def _policy_backward(dp: Array, fwd: dict, gamma: ParamStore) -> dict[str, Array]:
    p = fwd["p"]
    du = p * (dp - (p * dp).sum(axis=-1, keepdims=True))
    grads: dict[str, Array] = {}
    dx = du
    for i in reversed(range(fwd["n_layers"])):
        x_in = fwd["inputs"][i]
        if x_in.ndim == 1:
            grads[f"fc{i}/W"] = np.outer(x_in, dx)
            grads[f"fc{i}/b"] = dx
        else:
            grads[f"fc{i}/W"] = x_in.T @ dx
            grads[f"fc{i}/b"] = dx.sum(axis=0)
        dx = dx @ gamma[f"fc{i}/W"].T
        if i > 0:
            # x_in is the tanh activation that fed layer i.
            dx = dx * (1.0 - x_in * x_in)
    return grads


def policy_head(z: Array, gamma: ParamStore, op_mask: Array | None = None) -> Array:
    """3-layer MLP with softmax; returns a point on the 3-simplex."""
    p, _ = _policy_forward(z, gamma, op_mask)
    return p


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------

def bce_loss(pred: Prediction | Array, label) -> float:
    """Mean binary cross-entropy in the numerically stable logit form.

    Probabilities are effectively clamped to [1e-7, 1 - 1e-7] by clipping the
    logit, so the loss stays finite for saturated predictions.
    """
    logit = pred.logit if isinstance(pred, Prediction) else pred
    l = np.clip(np.asarray(logit, dtype=np.float64), -_LOGIT_CLAMP, _LOGIT_CLAMP)
    y = np.asarray(label, dtype=np.float64)
    loss = np.maximum(l, 0.0) - l * y + np.log1p(np.exp(-np.abs(l)))
    return float(np.mean(loss))


def _dloss_dlogit(logit: Array, y: Array) -> Array:
    return _sigmoid(logit) - y


# ---------------------------------------------------------------------------
# Detector phase: full backward through classifier and extractor
# ---------------------------------------------------------------------------

def backward_detector(
    images: Array,
    labels: Array,
    alpha: ParamStore,
    beta: ParamStore,
) -> tuple[float, dict[str, Array], dict[str, Array]]:
    """Mean-BCE loss and exact gradients for the detector parameters.

    Returns (loss, grads_alpha, grads_beta); gamma is untouched by design.
    """
    y = np.asarray(labels, dtype=np.float64)
    feats, fwd = _extractor_forward(images, alpha)
    pred = classify(feats, beta)
    loss = bce_loss(pred, y)
    n = y.shape[0]
    dlogit = _dloss_dlogit(pred.logit, y) / n
    grads_beta = {"W": feats.T @ dlogit, "b": np.asarray(dlogit.sum())}
    dfeats = np.outer(dlogit, beta["W"])
    grads_alpha = _extractor_backward(dfeats, fwd, alpha)
    return loss, grads_alpha, grads_beta


# ---------------------------------------------------------------------------
# Policy phase: soft operator mixture (forward + backward w.r.t. gamma)
# ---------------------------------------------------------------------------

@dataclass
class SoftForwardCache:
    """Intermediates of one soft-mixture forward, frozen for the backward."""

    source_image: Array
    variant_images: Array        # (3, H, W, 3), one realization per operator
    source_feat: Array           # (d,)
    policy_fwd: dict
    p: Array                     # (3,)
    variant_feats: Array         # (3, d)
    mixed_feat: Array            # (d,)
    logit: float
    probability: float


def soft_forward_from_variants(
    source_image: Array,
    variant_images: Array,
    alpha: ParamStore,
    beta: ParamStore,
    gamma: ParamStore,
    op_mask: Array | None = None,
) -> tuple[Prediction, SoftForwardCache]:
    """Differentiable relaxation with the operator outputs already realized.

    The prediction is ``classify(sum_j p_j * features(variant_j))`` with
    ``p = policy_head(features(source))``.  Gradients flow to gamma only;
    the variant images are fixed inputs.
    """
    z = features(source_image, alpha)
    p, policy_fwd = _policy_forward(z, gamma, op_mask)
    # One forward per variant (not one batched call): BLAS results can differ
    # in the last ulp across batch sizes, and a one-hot mixture must collapse
    # onto the single-image hard forward bit-exactly.
    vfeats = np.stack([features(v, alpha) for v in np.asarray(variant_images, dtype=np.float64)])
    mixed = p @ vfeats
    pred = classify(mixed, beta)
    cache = SoftForwardCache(
        source_image=np.asarray(source_image, dtype=np.float64),
        variant_images=np.asarray(variant_images, dtype=np.float64),
        source_feat=z,
        policy_fwd=policy_fwd,
        p=p,
        variant_feats=vfeats,
        mixed_feat=mixed,
        logit=float(pred.logit),
        probability=float(pred.probability),
    )
    return pred, cache


def realize_variants(
    source: FaceFrame,
    context: AugContext,
    rng: np.random.Generator,
) -> tuple[Array, list[PseudoFake]]:
    """Run all three operators once each with per-operator child streams.

    Shares its stream derivation with ``apply_forgery_augmentation``, so a
    one-hot mixture reproduces the hard-sampled output bit-exactly.
    """
    streams = operator_streams(rng)
    pfakes = [realize_operator(op, source, context, streams[op.index]) for op in OPS]
    return np.stack([pf.image for pf in pfakes]), pfakes


def soft_mixture_forward(
    x: FaceFrame,
    context: AugContext,
    alpha: ParamStore,
    beta: ParamStore,
    gamma: ParamStore,
    rng: np.random.Generator,
    op_mask: Array | None = None,
) -> tuple[Prediction, SoftForwardCache]:
    """Soft-mixture forward on a real frame, realizing each operator once."""
    variants, _ = realize_variants(x, context, rng)
    return soft_forward_from_variants(x.image, variants, alpha, beta, gamma, op_mask)


@dataclass
class SearchBatch:
    """Policy-phase batch: real frames (label real) plus their soft p-fakes."""

    real_images: Array                       # (M, H, W, 3)
    pfake_caches: list[SoftForwardCache]     # labeled fake


def backward_policy(
    search_batch: SearchBatch,
    alpha: ParamStore,
    beta: ParamStore,
    gamma: ParamStore,
) -> tuple[float, dict[str, Array]]:
    """Mean-BCE loss over the search batch and exact gradients for gamma.

    The detector parameters are frozen: the real half contributes loss value
    only, and the soft half back-propagates through the mixture weights into
    the policy MLP.
    """
    caches = search_batch.pfake_caches
    if len(caches) == 0:
        raise ValueError("search batch has no soft p-fake items")
    reals = np.asarray(search_batch.real_images, dtype=np.float64)
    n_real = reals.shape[0] if reals.size else 0
    total = n_real + len(caches)

    losses = []
    if n_real:
        pred_real = classify(features(reals, alpha), beta)
        lr_ = np.clip(np.atleast_1d(pred_real.logit), -_LOGIT_CLAMP, _LOGIT_CLAMP)
        losses.extend(np.maximum(lr_, 0.0) + np.log1p(np.exp(-np.abs(lr_))))

    grads = {k: np.zeros_like(v) for k, v in gamma.items()}
    w = beta["W"]
    for cache in caches:
        l = np.clip(cache.logit, -_LOGIT_CLAMP, _LOGIT_CLAMP)
        losses.append(max(l, 0.0) - l + math.log1p(math.exp(-abs(l))))
        dlogit = (_sigmoid(cache.logit) - 1.0) / total      # label fake = 1
        dp = dlogit * (cache.variant_feats @ w)
        for key, g in _policy_backward(dp, cache.policy_fwd, gamma).items():
            grads[key] += g
    loss = float(np.sum(losses) / total)
    return loss, grads


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """First/second moment accumulators for one ParamStore."""

    m: dict[str, Array]
    v: dict[str, Array]
    step: int = 0

    @classmethod
    def for_params(cls, params: ParamStore) -> "AdamState":
        return cls(m=params.zeros_like(), v=params.zeros_like())


def adam_step(
    params: ParamStore,
    grads: dict[str, Array],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[ParamStore, AdamState]:
    """One bias-corrected Adam update, in place; returns (params, state)."""
    state.step += 1
    t = state.step
    for key in params.keys():
        g = np.asarray(grads[key], dtype=np.float64)
        if g.shape != params[key].shape:
            raise DimensionMismatchError(f"gradient for {key!r}: {g.shape} vs {params[key].shape}")
        state.m[key] = beta1 * state.m[key] + (1.0 - beta1) * g
        state.v[key] = beta2 * state.v[key] + (1.0 - beta2) * g * g
        mhat = state.m[key] / (1.0 - beta1**t)
        vhat = state.v[key] / (1.0 - beta2**t)
        params[key] = params[key] - lr * mhat / (np.sqrt(vhat) + eps)
    return params, state


def cosine_lr(epoch: int, total_epochs: int, lr0: float) -> float:
    """Cosine decay from lr0 at epoch 0 to exactly 0 at epoch T."""
    if total_epochs < 1:
        raise ValueError("total_epochs must be >= 1")
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * epoch / total_epochs))


# ---------------------------------------------------------------------------
# Checkpoint format: JSON header line + raw little-endian float64 payload
# ---------------------------------------------------------------------------

_CHECKPOINT_FORMAT = "cdfa-checkpoint"
_CHECKPOINT_VERSION = 1


def save_checkpoint(path, stores: dict[str, ParamStore], meta: dict | None = None) -> None:
    """Write parameter stores with a bit-exact, byte-deterministic layout."""
    records = []
    blobs = []
    for store_name, store in stores.items():
        for key, arr in store.items():
            records.append({"key": f"{store_name}/{key}", "shape": list(arr.shape)})
            blobs.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    header = {
        "format": _CHECKPOINT_FORMAT,
        "version": _CHECKPOINT_VERSION,
        "meta": meta or {},
        "tensors": records,
    }
    payload = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(payload + b"\n")
        for blob in blobs:
            f.write(blob)
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[dict[str, ParamStore], dict]:
    """Read a checkpoint back; inverse of ``save_checkpoint`` bit for bit."""
    with open(path, "rb") as f:
        header_line = f.readline()
        body = f.read()
    try:
        header = json.loads(header_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint header in {path}") from exc
    if header.get("format") != _CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a checkpoint file")
    if header.get("version") != _CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('version')}")
    grouped: dict[str, dict[str, Array]] = {}
    offset = 0
    for rec in header["tensors"]:
        shape = tuple(rec["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if offset + nbytes > len(body):
            raise CheckpointError(f"truncated checkpoint payload in {path}")
        arr = np.frombuffer(body[offset : offset + nbytes], dtype="<f8").reshape(shape).copy()
        offset += nbytes
        store_name, key = rec["key"].split("/", 1)
        grouped.setdefault(store_name, {})[key] = arr
    if offset != len(body):
        raise CheckpointError(f"trailing bytes in checkpoint {path}")
    return {name: ParamStore(tensors) for name, tensors in grouped.items()}, header.get("meta", {})

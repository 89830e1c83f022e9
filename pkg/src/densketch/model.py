"""Feed-forward conditional estimator mapping input sketches to output sketches.

The network is a plain MLP (linear -> batch norm -> leaky ReLU blocks, with
identity skips around hidden blocks of matching width) whose output logits
are interpreted as an output sketch. Training minimizes KL divergence
between the L1-normalized target sketch and the width-wise softmax of the
logits, averaged across depth levels -- so the output dimension is the
sketch size, never the item count, and no negative sampling is involved.

Everything is numpy with analytic gradients and a hand-rolled Adam loop:
runs are bit-reproducible given a seed, and the gradient path is verified
against finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .serialize import read_blob, write_blob
from .validation import as_float_matrix

ADAM_EPS = 1e-8


@dataclass
class ModelConfig:
    """Architecture knobs for the conditional estimator."""

    hidden_width: int = 3000
    hidden_layers: int = 3
    residual: bool = True
    batch_norm: bool = True
    leaky_slope: float = 0.01


@dataclass
class TrainConfig:
    """Optimizer schedule: Adam with a per-epoch multiplicative LR decay."""

    epochs: int = 5
    batch_size: int = 256
    learning_rate: float = 0.004
    gamma: float = 0.5
    beta1: float = 0.9
    beta2: float = 0.999
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not (0 < self.gamma <= 1):
            raise ValueError("gamma must lie in (0, 1]")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class DenseBlock:
    weight: np.ndarray
    bias: np.ndarray
    gamma: np.ndarray | None
    beta: np.ndarray | None
    run_mean: np.ndarray | None
    run_var: np.ndarray | None
    residual: bool


@dataclass
class ModelParams:
    """All weights plus the input/output sketch layout they were built for."""

    blocks: list
    out_weight: np.ndarray
    out_bias: np.ndarray
    input_dim: int
    output_depth: int
    output_width: int
    leaky_slope: float = 0.01
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1
    input_layout: list = field(default_factory=list)


def init_model(input_dim: int, output_depth: int, output_width: int,
               config: ModelConfig, seed: int, input_layout=None) -> ModelParams:
    """He-initialized parameters; deterministic given the seed."""
    rng = np.random.default_rng(seed)
    blocks = []
    fan_in = input_dim
    for i in range(config.hidden_layers):
        fan_out = config.hidden_width
        weight = rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)
        bias = np.zeros(fan_out)
        if config.batch_norm:
            gamma, beta = np.ones(fan_out), np.zeros(fan_out)
            run_mean, run_var = np.zeros(fan_out), np.ones(fan_out)
        else:
            gamma = beta = run_mean = run_var = None
        # The first block projects into hidden width and never skips.
        residual = config.residual and i > 0 and fan_in == fan_out
        blocks.append(DenseBlock(weight, bias, gamma, beta, run_mean, run_var, residual))
        fan_in = fan_out
    out_dim = output_depth * output_width
    out_weight = rng.standard_normal((fan_in, out_dim)) * np.sqrt(2.0 / fan_in)
    out_bias = np.zeros(out_dim)
    return ModelParams(blocks, out_weight, out_bias, input_dim,
                       output_depth, output_width,
                       leaky_slope=config.leaky_slope,
                       input_layout=list(input_layout or []))


def _forward_full(params: ModelParams, X: np.ndarray, mode: str,
                  update_running: bool = False):
    """Forward pass returning logits plus per-block caches for backprop."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    h = X
    caches = []
    for blk in params.blocks:
        inp = h
        z = inp @ blk.weight + blk.bias
        cache = {"inp": inp, "z": z}
        if blk.gamma is not None:
            if mode == "train":
                mu = z.mean(axis=0)
                var = z.var(axis=0)
                if update_running:
                    m = params.bn_momentum
                    blk.run_mean += m * (mu - blk.run_mean)
                    blk.run_var += m * (var - blk.run_var)
            else:
                mu, var = blk.run_mean, blk.run_var
            istd = 1.0 / np.sqrt(var + params.bn_eps)
            xhat = (z - mu) * istd
            pre = blk.gamma * xhat + blk.beta
            cache.update(xhat=xhat, istd=istd)
        else:
            pre = z
        act = np.where(pre > 0, pre, params.leaky_slope * pre)
        cache.update(pre=pre)
        h = act + inp if blk.residual else act
        caches.append(cache)
    logits = h @ params.out_weight + params.out_bias
    caches.append({"inp": h})
    return logits, caches


def forward(params: ModelParams, X, mode: str = "eval") -> np.ndarray:
    """Logits of shape ``(n, output_depth * output_width)``.

    Eval mode is deterministic and uses running normalization statistics;
    train mode normalizes with batch statistics.
    """
    X = as_float_matrix(X)
    if X.shape[1] != params.input_dim:
        raise ValueError(f"expected input dim {params.input_dim}, got {X.shape[1]}")
    logits, _ = _forward_full(params, X, mode)
    return logits


def log_softmax_width(logits: np.ndarray, depth: int, width: int) -> np.ndarray:
    """Width-wise log-softmax per depth slice, max-subtracted for stability."""
    shaped = logits.reshape(*logits.shape[:-1], depth, width)
    shifted = shaped - shaped.max(axis=-1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    return (shifted - log_z).reshape(logits.shape)


def softmax_width(logits: np.ndarray, depth: int, width: int) -> np.ndarray:
    """Width-wise softmax per depth slice; every slice sums to 1."""
    return np.exp(log_softmax_width(logits, depth, width))


def _loss_and_grad(logits: np.ndarray, targets: np.ndarray, depth: int, width: int,
                   want_grad: bool):
    """Depth-averaged width-wise KL; optionally d(loss)/d(logits).

    Per row and per depth slice with nonzero target mass:
    ``p`` is the L1-normalized target slice, ``q = softmax(logit slice)``,
    and the slice loss is ``sum_c p_c (log p_c - log q_c)`` with 0*log 0 = 0.
    Slices with zero target mass are excluded from the per-row mean; rows
    are averaged with equal weight.
    """
    n_rows = logits.shape[0]
    shaped_t = targets.reshape(n_rows, depth, width)
    if shaped_t.size and shaped_t.min() < 0:
        raise ValueError("target sketch values must be non-negative")
    mass = shaped_t.sum(axis=2)
    include = mass > 0
    n_include = include.sum(axis=1)

    p = np.zeros_like(shaped_t)
    np.divide(shaped_t, mass[:, :, None], out=p, where=include[:, :, None])
    log_q = log_softmax_width(logits, depth, width).reshape(n_rows, depth, width)

    plogp = np.zeros_like(p)
    np.multiply(p, np.log(p, out=np.zeros_like(p), where=p > 0), out=plogp, where=p > 0)
    slice_loss = (plogp - p * log_q).sum(axis=2)

    row_scale = np.zeros(n_rows)
    np.divide(1.0, n_include, out=row_scale, where=n_include > 0)
    loss = float((slice_loss.sum(axis=1) * row_scale).mean())

    if not want_grad:
        return loss, None
    q = np.exp(log_q)
    grad = (q - p) * include[:, :, None] * row_scale[:, None, None] / n_rows
    return loss, grad.reshape(n_rows, depth * width)


def kl_sketch_loss(logits, targets, depth: int, width: int) -> float:
    """Mean width-wise KL divergence between target sketches and logits.

    Accepts a single example (1-D) or a batch (2-D). Invariant to positive
    scaling of the targets, and zero exactly when every softmax slice
    matches its normalized target slice.
    """
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if logits.shape != targets.shape or logits.shape[1] != depth * width:
        raise ValueError("logits/targets must share shape (n, depth*width)")
    loss, _ = _loss_and_grad(logits, targets, depth, width, want_grad=False)
    return loss


def _param_pairs(params: ModelParams):
    """Trainable (name, array) pairs; running statistics are not trained."""
    for i, blk in enumerate(params.blocks):
        yield f"block{i}.weight", blk.weight
        yield f"block{i}.bias", blk.bias
        if blk.gamma is not None:
            yield f"block{i}.gamma", blk.gamma
            yield f"block{i}.beta", blk.beta
    yield "out.weight", params.out_weight
    yield "out.bias", params.out_bias


def _backward(params: ModelParams, caches, grad_logits: np.ndarray) -> dict:
    """Analytic gradients for every trainable array, keyed like _param_pairs."""
    grads = {}
    h = caches[-1]["inp"]
    grads["out.weight"] = h.T @ grad_logits
    grads["out.bias"] = grad_logits.sum(axis=0)
    d_h = grad_logits @ params.out_weight.T

    for i in range(len(params.blocks) - 1, -1, -1):
        blk = params.blocks[i]
        cache = caches[i]
        d_act = d_h
        d_pre = d_act * np.where(cache["pre"] > 0, 1.0, params.leaky_slope)
        if blk.gamma is not None:
            xhat, istd = cache["xhat"], cache["istd"]
            grads[f"block{i}.gamma"] = (d_pre * xhat).sum(axis=0)
            grads[f"block{i}.beta"] = d_pre.sum(axis=0)
            d_xhat = d_pre * blk.gamma
            n = d_xhat.shape[0]
            d_z = (istd / n) * (
                n * d_xhat
                - d_xhat.sum(axis=0)
                - xhat * (d_xhat * xhat).sum(axis=0)
            )
        else:
            d_z = d_pre
        inp = cache["inp"]
        grads[f"block{i}.weight"] = inp.T @ d_z
        grads[f"block{i}.bias"] = d_z.sum(axis=0)
        d_inp = d_z @ blk.weight.T
        if blk.residual:
            d_inp = d_inp + d_h
        d_h = d_inp
    return grads


class AdamState:
    """First/second moment accumulators plus the shared step counter."""

    def __init__(self, params: ModelParams):
        self.m = {name: np.zeros_like(arr) for name, arr in _param_pairs(params)}
        self.v = {name: np.zeros_like(arr) for name, arr in _param_pairs(params)}
        self.t = 0


def backward_and_step(params: ModelParams, inputs: np.ndarray, targets: np.ndarray,
                      learning_rate: float, state: AdamState,
                      beta1: float = 0.9, beta2: float = 0.999) -> float:
    """One training step: forward, analytic backward, Adam update in place.

    Raises if the batch loss is non-finite (the step is aborted before any
    parameter is touched).
    """
    logits, caches = _forward_full(params, inputs, "train", update_running=True)
    loss, grad_logits = _loss_and_grad(
        logits, targets, params.output_depth, params.output_width, want_grad=True
    )
    if not np.isfinite(loss):
        raise FloatingPointError(
            f"non-finite loss {loss!r} on batch of {inputs.shape[0]}; step aborted"
        )
    grads = _backward(params, caches, grad_logits)
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for name, arr in _param_pairs(params):
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m += (1.0 - beta1) * (g - m)
        v += (1.0 - beta2) * (g * g - v)
        arr -= learning_rate * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
    return loss


def train_model(inputs, targets, params: ModelParams,
                config: TrainConfig) -> tuple[ModelParams, list[dict]]:
    """Seeded epoch loop over (input sketch, target sketch) pairs.

    Shuffles per epoch, multiplies the learning rate by ``gamma`` after each
    epoch, and returns the trained parameters (use eval mode for inference)
    plus one history row per epoch: ``{"epoch", "loss", "lr"}`` where loss
    is the mean per-example training loss of that epoch.
    """
    inputs = as_float_matrix(inputs, "inputs")
    targets = as_float_matrix(targets, "targets")
    if inputs.shape[0] == 0:
        raise ValueError("empty training set")
    if inputs.shape[0] != targets.shape[0]:
        raise ValueError("inputs/targets row mismatch")

    rng = np.random.default_rng(config.seed)
    state = AdamState(params)
    lr = config.learning_rate
    history = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(inputs.shape[0])
        total, seen = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            loss = backward_and_step(params, inputs[batch], targets[batch],
                                     lr, state, config.beta1, config.beta2)
            total += loss * len(batch)
            seen += len(batch)
        history.append({"epoch": epoch, "loss": total / seen, "lr": lr})
        lr *= config.gamma
    return params, history


def save_checkpoint(params: ModelParams, path, extra_meta: dict | None = None) -> None:
    """Write a versioned checkpoint; reloads bit-exactly."""
    meta = {
        "kind": "checkpoint",
        "input_dim": params.input_dim,
        "output_depth": params.output_depth,
        "output_width": params.output_width,
        "leaky_slope": params.leaky_slope,
        "bn_eps": params.bn_eps,
        "bn_momentum": params.bn_momentum,
        "input_layout": params.input_layout,
        "blocks": [
            {"batch_norm": blk.gamma is not None, "residual": blk.residual}
            for blk in params.blocks
        ],
        "extra": extra_meta or {},
    }
    arrays = {}
    for i, blk in enumerate(params.blocks):
        arrays[f"block{i}.weight"] = blk.weight
        arrays[f"block{i}.bias"] = blk.bias
        if blk.gamma is not None:
            arrays[f"block{i}.gamma"] = blk.gamma
            arrays[f"block{i}.beta"] = blk.beta
            arrays[f"block{i}.run_mean"] = blk.run_mean
            arrays[f"block{i}.run_var"] = blk.run_var
    arrays["out.weight"] = params.out_weight
    arrays["out.bias"] = params.out_bias
    write_blob(path, meta, arrays)


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    """Load a checkpoint; returns (params, extra_meta)."""
    meta, arrays = read_blob(path)
    if meta.get("kind") != "checkpoint":
        raise ValueError(f"{path}: not a checkpoint artifact")
    blocks = []
    for i, spec in enumerate(meta["blocks"]):
        if spec["batch_norm"]:
            blocks.append(DenseBlock(
                arrays[f"block{i}.weight"], arrays[f"block{i}.bias"],
                arrays[f"block{i}.gamma"], arrays[f"block{i}.beta"],
                arrays[f"block{i}.run_mean"], arrays[f"block{i}.run_var"],
                spec["residual"],
            ))
        else:
            blocks.append(DenseBlock(
                arrays[f"block{i}.weight"], arrays[f"block{i}.bias"],
                None, None, None, None, spec["residual"],
            ))
    params = ModelParams(
        blocks, arrays["out.weight"], arrays["out.bias"],
        int(meta["input_dim"]), int(meta["output_depth"]), int(meta["output_width"]),
        leaky_slope=meta["leaky_slope"], bn_eps=meta["bn_eps"],
        bn_momentum=meta["bn_momentum"],
        input_layout=[tuple(seg) for seg in meta["input_layout"]],
    )
    return params, meta.get("extra", {})


class ConditionalSketchModel(BaseEstimator):
    """sklearn-style wrapper: fit on (input sketch, target sketch) pairs.

    ``predict`` returns width-wise softmax probabilities per depth slice,
    i.e. the output sketch to decode item scores from.
    """

    def __init__(self, output_depth: int = 10, output_width: int = 128,
                 hidden_width: int = 3000, hidden_layers: int = 3,
                 residual: bool = True, batch_norm: bool = True,
                 leaky_slope: float = 0.01, epochs: int = 5,
                 batch_size: int = 256, learning_rate: float = 0.004,
                 gamma: float = 0.5, seed: int = 0):
        self.output_depth = output_depth
        self.output_width = output_width
        self.hidden_width = hidden_width
        self.hidden_layers = hidden_layers
        self.residual = residual
        self.batch_norm = batch_norm
        self.leaky_slope = leaky_slope
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.gamma = gamma
        self.seed = seed

    def fit(self, X, Y):
        X = as_float_matrix(X)
        Y = as_float_matrix(Y, "Y")
        model_cfg = ModelConfig(self.hidden_width, self.hidden_layers,
                                self.residual, self.batch_norm, self.leaky_slope)
        train_cfg = TrainConfig(self.epochs, self.batch_size, self.learning_rate,
                                self.gamma, seed=self.seed)
        params = init_model(X.shape[1], self.output_depth, self.output_width,
                            model_cfg, self.seed)
        self.params_, self.history_ = train_model(X, Y, params, train_cfg)
        return self

    def predict_logits(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        return forward(self.params_, X, "eval")

    def predict(self, X) -> np.ndarray:
        logits = self.predict_logits(X)
        return softmax_width(logits, self.output_depth, self.output_width)

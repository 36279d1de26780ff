"""Forward computation of the fusion-graph forecasting network.

The network maps a history window (H, N, d) to a forecast (P, N, d):

  input head    per-step affine lift d -> C with a rectifier
  fusion layers each slides K-step windows over time, feeds every window
                through a stack of gated graph-multiplication blocks with
                residuals, max-pools the block outputs and keeps the middle
                time step; window outputs are concatenated and summed with a
                parallel gated dilated temporal convolution
  output head   per-node two-layer map from the remaining time steps to all
                P horizons at once

Every operation accepts an optional leading batch axis. Inputs may be numpy
arrays or engine Tensors; gradients flow when any argument is a Tensor that
requires them.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass

import numpy as np

from . import engine
from .engine import Tensor, as_tensor
from .errors import ConfigError, IngestionError

CHECKPOINT_MAGIC = b"STFC"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; shapes of all parameters follow from
    these fields (node count comes from the adjacency at call time)."""

    window: int = 4            # K: steps fused per graph window
    glu_depth: int = 3         # gated graph blocks per window module
    channels: int = 64
    layers: int = 3
    history: int = 12
    horizon: int = 12
    features: int = 1
    conv_kernel: int = 2
    share_window_weights: bool = False
    out_hidden: int = 256
    huber_delta: float = 1.0
    normalize_adj: str = "none"
    use_temporal_conv: bool = True

    def __post_init__(self):
        if self.window < 2:
            raise ConfigError("window must be >= 2")
        if min(self.glu_depth, self.channels, self.layers, self.history,
               self.horizon, self.features, self.out_hidden) < 1:
            raise ConfigError("all size fields must be positive")
        if self.huber_delta <= 0:
            raise ConfigError("huber_delta must be positive")
        if self.normalize_adj not in ("none", "row"):
            raise ConfigError("normalize_adj must be 'none' or 'row'")
        bound = self.max_layers
        if self.layers > bound:
            raise ConfigError(
                f"layers={self.layers} exceeds the stacking bound "
                f"floor(history/(window-1)) - 1 = {bound} for history="
                f"{self.history}, window={self.window}"
            )
        if (self.conv_kernel - 1) * self.dilation != self.window - 1:
            raise ConfigError(
                "temporal conv must shrink time by window-1 steps; with "
                f"dilation={self.dilation} the kernel must be 2"
            )

    @property
    def dilation(self) -> int:
        return self.window - 1

    @property
    def max_layers(self) -> int:
        return self.history // (self.window - 1) - 1

    @property
    def final_steps(self) -> int:
        return self.history - self.layers * (self.window - 1)

    def layer_steps(self, layer: int) -> int:
        """Temporal length entering the given layer."""
        return self.history - layer * (self.window - 1)

    def layer_windows(self, layer: int) -> int:
        return self.layer_steps(layer) - self.window + 1


def param_shapes(config: ModelConfig) -> dict:
    """Name -> shape for every parameter tensor, in a fixed order."""
    c = config.channels
    shapes = {
        "input.weight": (config.features, c),
        "input.bias": (c,),
    }
    for layer in range(config.layers):
        slots = 1 if config.share_window_weights else config.layer_windows(layer)
        for w in range(slots):
            for g in range(config.glu_depth):
                prefix = f"layer{layer}.window{w}.glu{g}."
                shapes[prefix + "value_weight"] = (c, c)
                shapes[prefix + "value_bias"] = (c,)
                shapes[prefix + "gate_weight"] = (c, c)
                shapes[prefix + "gate_bias"] = (c,)
        if config.use_temporal_conv:
            prefix = f"layer{layer}.tconv."
            shapes[prefix + "value_kernel"] = (config.conv_kernel, c, c)
            shapes[prefix + "value_bias"] = (c,)
            shapes[prefix + "gate_kernel"] = (config.conv_kernel, c, c)
            shapes[prefix + "gate_bias"] = (c,)
    shapes["head.hidden.weight"] = (config.final_steps * c, config.out_hidden)
    shapes["head.hidden.bias"] = (config.out_hidden,)
    shapes["head.out.weight"] = (config.out_hidden, config.horizon * config.features)
    shapes["head.out.bias"] = (config.horizon * config.features,)
    return shapes


def _wrap(x):
    """(tensor, had_tensor_inputs) for transparent array in / array out."""
    return as_tensor(x), isinstance(x, Tensor)


def _unwrap(out: Tensor, any_tensor: bool):
    return out if any_tensor else out.data


def input_head(x, weight, bias):
    """Per-step, per-node affine lift of the raw features with a rectifier."""
    x, tx = _wrap(x)
    weight, tw = _wrap(weight)
    bias, tb = _wrap(bias)
    out = engine.relu(engine.add(engine.matmul(x, weight), bias))
    return _unwrap(out, tx or tw or tb)


def glu_block(h, adj, value_weight, value_bias, gate_weight, gate_bias):
    """Gated graph multiplication: (A h Wv + bv) * sigmoid(A h Wg + bg).

    `h` carries the window flattened to rows of (step, node) pairs, so the
    single matrix product against the fused adjacency mixes space and time.
    """
    any_tensor = any(isinstance(v, Tensor) for v in
                     (h, adj, value_weight, value_bias, gate_weight, gate_bias))
    mixed = engine.matmul(as_tensor(adj), as_tensor(h))
    value = engine.add(engine.matmul(mixed, as_tensor(value_weight)),
                       as_tensor(value_bias))
    gate = engine.sigmoid(engine.add(engine.matmul(mixed, as_tensor(gate_weight)),
                                     as_tensor(gate_bias)))
    return _unwrap(engine.mul(value, gate), any_tensor)


def window_module(window, adj, blocks):
    """One window module: gated graph blocks with residuals, elementwise max
    over the block outputs, then the middle time step of the window.

    `window` has shape (..., K, N, C); `blocks` is a sequence of
    (value_weight, value_bias, gate_weight, gate_bias) tuples; the output has
    shape (..., 1, N, C).
    """
    if not blocks:
        raise ValueError("window_module needs at least one gated graph block")
    window, tw = _wrap(window)
    k, n, c = window.shape[-3:]
    flat = engine.reshape(window, window.shape[:-3] + (k * n, c))
    state = flat
    pooled = None
    any_tensor = tw
    for params in blocks:
        any_tensor = any_tensor or any(isinstance(p, Tensor) for p in params)
        state = engine.add(glu_block(state, adj, *params), state)
        pooled = state if pooled is None else engine.maximum(pooled, state)
    mid = k // 2
    crop = engine.take(pooled, (Ellipsis, slice(mid * n, (mid + 1) * n), slice(None)))
    out = engine.reshape(crop, crop.shape[:-2] + (1, n, c))
    return _unwrap(out, any_tensor)


def gated_conv(x, value_kernel, gate_kernel, value_bias, gate_bias, dilation):
    """Two-branch dilated temporal convolution, tanh(value) * sigmoid(gate).

    Kernels have shape (taps, C, C); the valid convolution shortens time by
    (taps - 1) * dilation steps.
    """
    x, tx = _wrap(x)
    vk, tvk = _wrap(value_kernel)
    gk, tgk = _wrap(gate_kernel)
    vb, _ = _wrap(value_bias)
    gb, _ = _wrap(gate_bias)
    steps = x.shape[-3]
    taps = vk.shape[0]
    out_steps = steps - (taps - 1) * dilation
    if out_steps < 1:
        raise ValueError(
            f"temporal length {steps} too short for kernel {taps} "
            f"with dilation {dilation}"
        )
    value = None
    gate = None
    for tap in range(taps):
        lo = tap * dilation
        sl = (Ellipsis, slice(lo, lo + out_steps), slice(None), slice(None))
        xi = engine.take(x, sl)
        v = engine.matmul(xi, engine.take(vk, tap))
        g = engine.matmul(xi, engine.take(gk, tap))
        value = v if value is None else engine.add(value, v)
        gate = g if gate is None else engine.add(gate, g)
    out = engine.mul(engine.tanh(engine.add(value, vb)),
                     engine.sigmoid(engine.add(gate, gb)))
    return _unwrap(out, tx or tvk or tgk)


def _window_blocks(params, config, layer, position):
    slot = 0 if config.share_window_weights else position
    out = []
    for g in range(config.glu_depth):
        prefix = f"layer{layer}.window{slot}.glu{g}."
        out.append((params[prefix + "value_weight"], params[prefix + "value_bias"],
                    params[prefix + "gate_weight"], params[prefix + "gate_bias"]))
    return out


def layer_forward(h, adj, params, config: ModelConfig, layer: int):
    """One fusion layer: all K-step windows through their modules (in
    parallel conceptually), concatenated along time, plus the gated temporal
    convolution of the full input. Shrinks time by window - 1 steps."""
    any_tensor = isinstance(h, Tensor) or any(
        isinstance(v, Tensor) for v in params.values())
    h, _ = _wrap(h)
    steps = h.shape[-3]
    k = config.window
    if steps < k:
        raise ValueError(f"temporal length {steps} shorter than window {k}")
    outputs = []
    for t in range(steps - k + 1):
        win = engine.take(h, (Ellipsis, slice(t, t + k), slice(None), slice(None)))
        blocks = _window_blocks(params, config, layer, t)
        outputs.append(as_tensor(window_module(win, adj, blocks)))
    stacked = engine.concat(outputs, axis=-3)
    if config.use_temporal_conv:
        prefix = f"layer{layer}.tconv."
        conv = gated_conv(h, params[prefix + "value_kernel"],
                          params[prefix + "gate_kernel"],
                          params[prefix + "value_bias"],
                          params[prefix + "gate_bias"], config.dilation)
        stacked = engine.add(stacked, as_tensor(conv))
    return _unwrap(stacked, any_tensor)


def output_head(h, params, config: ModelConfig):
    """Flatten each node's remaining (steps, channels) block and map it through
    two affine layers to all horizons jointly."""
    any_tensor = isinstance(h, Tensor) or any(
        isinstance(v, Tensor) for v in params.values())
    h, _ = _wrap(h)
    steps, n, c = h.shape[-3:]
    lead = h.shape[:-3]
    axes = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
    per_node = engine.transpose(h, axes)                     # (..., N, T, C)
    per_node = engine.reshape(per_node, lead + (n, steps * c))
    hidden = engine.relu(engine.add(
        engine.matmul(per_node, as_tensor(params["head.hidden.weight"])),
        as_tensor(params["head.hidden.bias"])))
    out = engine.add(engine.matmul(hidden, as_tensor(params["head.out.weight"])),
                     as_tensor(params["head.out.bias"]))
    out = engine.reshape(out, lead + (n, config.horizon, config.features))
    axes_back = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
    return _unwrap(engine.transpose(out, axes_back), any_tensor)  # (..., P, N, d)


def model_forward(x, adj, params, config: ModelConfig):
    """Full forward pass from (..., H, N, d) to (..., P, N, d) on the
    normalized scale. Returns an ndarray when every input is an ndarray."""
    any_tensor = isinstance(x, Tensor) or any(
        isinstance(v, Tensor) for v in params.values())
    x, _ = _wrap(x)
    if x.shape[-3] != config.history or x.shape[-1] != config.features:
        raise ValueError(
            f"input shape {x.shape} does not match history={config.history}, "
            f"features={config.features}"
        )
    adj = as_tensor(adj)
    h = as_tensor(input_head(x, params["input.weight"], params["input.bias"]))
    for layer in range(config.layers):
        h = as_tensor(layer_forward(h, adj, params, config, layer))
    out = as_tensor(output_head(h, params, config))
    return _unwrap(out, any_tensor)


def huber_loss(pred, target, delta: float = 1.0):
    """Mean Huber objective; quadratic within |error| <= delta, linear tails."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    if isinstance(pred, Tensor):
        return engine.huber(pred, target, delta)
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    e = np.abs(pred - target)
    return float(np.where(e <= delta, 0.5 * e * e, delta * e - 0.5 * delta * delta).mean())


# -- checkpoints --------------------------------------------------------------

def save_checkpoint(path, config: ModelConfig, params: dict) -> None:
    """Binary checkpoint: magic, version, config JSON, then a count-prefixed
    list of (name, rank, dims, little-endian float32 payload)."""
    blob = json.dumps(dataclasses.asdict(config), sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(params)))
        for name, value in params.items():
            arr = np.ascontiguousarray(
                value.data if isinstance(value, Tensor) else value, dtype="<f4")
            encoded = name.encode()
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path):
    """Inverse of save_checkpoint; returns (ModelConfig, params dict)."""
    def read(fh, n, what):
        data = fh.read(n)
        if len(data) != n:
            raise IngestionError(f"{path}: truncated checkpoint while reading {what}")
        return data

    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise IngestionError(str(exc)) from exc
    with fh:
        if read(fh, 4, "magic") != CHECKPOINT_MAGIC:
            raise IngestionError(f"{path}: offset 0: not a checkpoint file")
        version, = struct.unpack("<I", read(fh, 4, "version"))
        if version != CHECKPOINT_VERSION:
            raise IngestionError(f"{path}: unsupported checkpoint version {version}")
        blob_len, = struct.unpack("<I", read(fh, 4, "config length"))
        config = ModelConfig(**json.loads(read(fh, blob_len, "config")))
        count, = struct.unpack("<I", read(fh, 4, "tensor count"))
        params = {}
        for _ in range(count):
            name_len, = struct.unpack("<I", read(fh, 4, "name length"))
            name = read(fh, name_len, "name").decode()
            rank, = struct.unpack("<I", read(fh, 4, "rank"))
            dims = struct.unpack(f"<{rank}I", read(fh, 4 * rank, "dims"))
            size = int(np.prod(dims)) if rank else 1
            payload = read(fh, 4 * size, f"payload of {name}")
            params[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    return config, params

"""Parameter initialization, exact gradients, Adam, the training loop, and
the finite-difference gradient checker.

Training math runs in float32; the gradient checker rebuilds everything in
float64 so the central-difference comparison stays tight. All randomness is
funneled through numpy Generators seeded from explicit integers, so a seed
fully determines initialization, shuffling, and therefore the entire run.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import model as model_ops
from .data import DatasetBundle, Normalizer
from .engine import Tensor
from .errors import DivergenceError
from .graphs import FusionLayout, fusion_graph
from .model import ModelConfig, model_forward, param_shapes, save_checkpoint


@dataclass
class TrainConfig:
    batch_size: int = 32
    epochs: int = 200
    seed: int = 0
    learning_rate: float = 0.001
    patience: int | None = None        # early stop on stalled val MAE; None = off
    grad_clip: float | None = None     # global-norm clip, divergence debugging
    checkpoint_dir: str | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_mae: float
    val_mape: float
    val_rmse: float
    seconds: float


@dataclass
class TrainHistory:
    entries: list = field(default_factory=list)

    def append(self, stats: EpochStats):
        self.entries.append(stats)

    def __len__(self):
        return len(self.entries)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("epoch,train_loss,val_mae,val_mape,val_rmse,seconds\n")
            for e in self.entries:
                fh.write(f"{e.epoch},{e.train_loss:.8g},{e.val_mae:.8g},"
                         f"{e.val_mape:.8g},{e.val_rmse:.8g},{e.seconds:.3f}\n")


def init_params(config: ModelConfig, seed: int, dtype=np.float32) -> dict:
    """Glorot-uniform weights, zero biases; one generator drawn in the fixed
    name order of param_shapes, so a seed pins every tensor."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(config).items():
        if name.endswith("bias"):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            fan_in = int(np.prod(shape[:-1]))
            fan_out = shape[-1]
            s = np.sqrt(6.0 / (fan_in + fan_out))
            params[name] = rng.uniform(-s, s, size=shape).astype(dtype)
    return params


@dataclass
class AdamState:
    """Bias-corrected Adam moments, one pair per parameter."""

    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: dict, learning_rate: float = 0.001) -> "AdamState":
        state = cls(learning_rate=learning_rate)
        state.m = {k: np.zeros_like(p) for k, p in params.items()}
        state.v = {k: np.zeros_like(p) for k, p in params.items()}
        return state


def adam_step(state: AdamState, params: dict, grads: dict) -> dict:
    """Standard bias-corrected Adam update, applied in place; returns the
    params dict. Python-float hyperparameters keep float32 math in float32."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads[name]
        m = state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1.0 - b2) * (g * g)
        p -= state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params


def batch_loss(params: dict, inputs, targets, adj, config: ModelConfig,
               normalizer: Normalizer):
    """Scalar mean-Huber loss of de-normalized predictions against raw
    targets; `params` entries may be Tensors to record gradients."""
    x = normalizer.apply(inputs)
    pred = model_forward(x, adj, params, config)
    pred = normalizer.invert(pred)
    return model_ops.huber_loss(pred, targets, config.huber_delta)


def gradients(params: dict, batch, adj, config: ModelConfig,
              normalizer: Normalizer | None = None):
    """Exact reverse-mode gradients of the mean batch loss.

    `batch` is (inputs, targets) on the raw scale. Returns (loss value,
    name -> gradient array); parameters the graph never touched get zeros.
    """
    inputs, targets = batch
    if inputs.shape[0] == 0:
        raise ValueError("batch must be nonempty")
    normalizer = normalizer or Normalizer.identity(config.features)
    leaves = {k: Tensor(v, requires_grad=True) for k, v in params.items()}
    loss = batch_loss(leaves, inputs, targets, adj, config, normalizer)
    value = float(loss.data)
    if not np.isfinite(value):
        raise DivergenceError(f"non-finite loss {value}: " + _blame(params))
    loss.backward()
    return value, {k: (t.grad if t.grad is not None else np.zeros_like(t.data))
                   for k, t in leaves.items()}


def _blame(params: dict) -> str:
    for name, p in params.items():
        arr = p.data if isinstance(p, Tensor) else p
        if not np.all(np.isfinite(arr)):
            return f"parameter {name!r} holds non-finite values"
    return "all parameters finite; inputs or arithmetic overflow"


def _clip_global_norm(grads: dict, max_norm: float) -> None:
    total = np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2))
                        for g in grads.values()))
    if total > max_norm and total > 0:
        factor = max_norm / total
        for g in grads.values():
            g *= factor


def predict(params: dict, inputs, adj, config: ModelConfig,
            normalizer: Normalizer, batch_size: int = 256) -> np.ndarray:
    """De-normalized model predictions for raw inputs, evaluated in chunks."""
    chunks = []
    for lo in range(0, inputs.shape[0], batch_size):
        x = normalizer.apply(inputs[lo:lo + batch_size])
        out = model_forward(x, adj, params, config)
        chunks.append(normalizer.invert(out))
    return np.concatenate(chunks, axis=0)


def train(model_config: ModelConfig, train_config: TrainConfig,
          dataset: DatasetBundle, adj: np.ndarray):
    """Seeded epoch loop with per-epoch validation on de-normalized MAE.

    Returns (parameters of the best-validation epoch, TrainHistory). Writes
    best.stfc / last.stfc under checkpoint_dir when it is set. A non-finite
    loss raises DivergenceError carrying the history so far.
    """
    from .evaluation import mae, mape, rmse  # local import, no module cycle

    params = init_params(model_config, train_config.seed)
    adj = np.asarray(adj, dtype=np.float32)
    state = AdamState.for_params(params, train_config.learning_rate)
    rng = np.random.default_rng(train_config.seed)
    history = TrainHistory()
    best = {k: v.copy() for k, v in params.items()}
    best_mae = np.inf
    stale = 0
    n_train = len(dataset.train)
    for epoch in range(1, train_config.epochs + 1):
        tic = time.perf_counter()
        order = rng.permutation(n_train)
        losses = []
        for lo in range(0, n_train, train_config.batch_size):
            idx = order[lo:lo + train_config.batch_size]
            batch = (dataset.train.inputs[idx], dataset.train.targets[idx])
            try:
                loss, grads = gradients(params, batch, adj, model_config,
                                        dataset.normalizer)
            except DivergenceError as exc:
                exc.history = history
                raise
            if train_config.grad_clip is not None:
                _clip_global_norm(grads, train_config.grad_clip)
            adam_step(state, params, grads)
            losses.append(loss)
        val_pred = predict(params, dataset.val.inputs, adj, model_config,
                           dataset.normalizer)
        val_mae = mae(val_pred, dataset.val.targets)
        val_mape = mape(val_pred, dataset.val.targets)
        val_rmse = rmse(val_pred, dataset.val.targets)
        history.append(EpochStats(epoch, float(np.mean(losses)), val_mae,
                                  val_mape, val_rmse,
                                  time.perf_counter() - tic))
        if val_mae < best_mae:
            best_mae = val_mae
            best = {k: v.copy() for k, v in params.items()}
            stale = 0
        else:
            stale += 1
        if train_config.patience is not None and stale > train_config.patience:
            break
    if train_config.checkpoint_dir is not None:
        out = Path(train_config.checkpoint_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(out / "best.stfc", model_config, best)
        save_checkpoint(out / "last.stfc", model_config, params)
    return best, history


# -- gradient checking --------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str
    seed_used: int
    resamples: int

    def __str__(self):
        return (f"max relative error {self.max_rel_error:.3e} "
                f"(worst parameter {self.worst_param!r}, seed {self.seed_used}, "
                f"{self.resamples} kink resamples)")


TINY_CHECK_CONFIG = ModelConfig(window=4, glu_depth=2, channels=8, layers=2,
                                history=12, horizon=12, out_hidden=32)
TINY_CHECK_NODES = 6


def finite_difference_grads(loss_fn, params: dict, step: float = 1e-5) -> dict:
    """Central-difference gradient of loss_fn() for every entry of every
    parameter array, perturbing the arrays in place."""
    out = {}
    for name, p in params.items():
        grad = np.zeros_like(p)
        flat_p = p.ravel()
        flat_g = grad.ravel()
        for i in range(flat_p.size):
            orig = flat_p[i]
            flat_p[i] = orig + step
            hi = loss_fn()
            flat_p[i] = orig - step
            lo = loss_fn()
            flat_p[i] = orig
            flat_g[i] = (hi - lo) / (2.0 * step)
        out[name] = grad
    return out


def compare_gradients(analytic: dict, numeric: dict):
    """Per-tensor relative deviation: max|a - f| over the tensor divided by
    the larger of the two max-norms. Returns (max over tensors, worst name)."""
    worst, worst_name = 0.0, "none"
    for name in analytic:
        a, f = analytic[name], numeric[name]
        denom = max(np.max(np.abs(a)), np.max(np.abs(f)), 1e-12)
        rel = float(np.max(np.abs(a - f)) / denom)
        if rel > worst:
            worst, worst_name = rel, name
    return worst, worst_name


def _kink_margins(params, inputs, targets, adj, config, normalizer):
    """Smallest distance of any rectifier input or Huber error from its kink;
    finite differences are unreliable near them.

    Max-pool ties are not screened: the observed exact ties come from
    saturated gates whose block output underflows against the residual, and
    there the difference between the tied branches has an equally tiny
    derivative, so they cannot disturb a 1e-5 central difference.
    """
    from . import engine as eng

    margins = [np.inf]
    real_relu = eng.relu

    def spy_relu(a):
        margins.append(float(np.min(np.abs(a.data))))
        return real_relu(a)

    eng.relu = spy_relu
    try:
        x = normalizer.apply(inputs)
        pred = normalizer.invert(model_forward(x, adj, params, config))
        margins.append(float(np.min(np.abs(np.abs(pred - targets)
                                           - config.huber_delta))))
    finally:
        eng.relu = real_relu
    return min(margins)


def gradient_check(config: ModelConfig | None = None, seed: int = 0,
                   n_nodes: int = TINY_CHECK_NODES, step: float = 1e-5,
                   kink_margin: float = 1e-3) -> GradCheckReport:
    """Compare reverse-mode gradients against central differences at 64-bit.

    Builds a small random problem (fusion graph over random binary parts,
    Gaussian input/target), re-drawing it while any rectifier or Huber input
    sits within `kink_margin` of a kink, then checks every parameter entry.
    """
    config = config or TINY_CHECK_CONFIG
    normalizer = Normalizer.identity(config.features)
    attempt_seed, resamples = seed, 0
    while True:
        rng = np.random.default_rng(attempt_seed)
        sg = (rng.random((n_nodes, n_nodes)) < 0.3).astype(float)
        sg = np.maximum(sg, sg.T)
        np.fill_diagonal(sg, 0)
        tg = (rng.random((n_nodes, n_nodes)) < 0.3).astype(float)
        tg = np.maximum(tg, tg.T)
        np.fill_diagonal(tg, 0)
        adj = fusion_graph(sg, tg, FusionLayout(config.window))
        params = init_params(config, attempt_seed, dtype=np.float64)
        inputs = rng.normal(size=(1, config.history, n_nodes, config.features))
        targets = rng.normal(size=(1, config.horizon, n_nodes, config.features))
        margin = _kink_margins(params, inputs, targets, adj, config, normalizer)
        if margin > kink_margin or resamples >= 50:
            break
        attempt_seed += 1
        resamples += 1
    _, analytic = gradients(params, (inputs, targets), adj, config, normalizer)
    numeric = finite_difference_grads(
        lambda: batch_loss(params, inputs, targets, adj, config, normalizer),
        params, step=step)
    worst, name = compare_gradients(analytic, numeric)
    return GradCheckReport(worst, name, attempt_seed, resamples)

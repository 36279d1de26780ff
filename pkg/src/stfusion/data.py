"""Signal ingestion, z-score normalization, sliding-window samples,
chronological splits, and a planted-cluster synthetic generator.

Binary signal layout ("STFD"): 4-byte magic, then little-endian u32
version / steps / nodes / features, then float32 values row-major
[t][node][feature]. The CSV twin is a header row followed by one row of
nodes*features values per time step.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import IngestionError

MAGIC = b"STFD"
FORMAT_VERSION = 1
DAY_STEPS = 288  # 5-minute sampling


@dataclass
class SignalTensor:
    """Raw signal of shape (steps, nodes, features); missing readings are
    stored as zeros, optionally flagged in a boolean mask of equal shape."""

    values: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim == 2:
            self.values = self.values[:, :, None]
        if self.values.ndim != 3:
            raise ValueError("signal must have shape (steps, nodes, features)")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("signal values must be finite")
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.shape != self.values.shape:
                raise ValueError("mask shape must match values")

    @property
    def steps(self):
        return self.values.shape[0]

    @property
    def nodes(self):
        return self.values.shape[1]

    @property
    def features(self):
        return self.values.shape[2]


@dataclass(frozen=True)
class SplitSpec:
    """Chronological train/val/test fractions; must sum to 1."""

    train: float = 0.6
    val: float = 0.2
    test: float = 0.2

    def __post_init__(self):
        if min(self.train, self.val, self.test) < 0:
            raise ValueError("split fractions must be nonnegative")
        if abs(self.train + self.val + self.test - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")

    def ranges(self, total_steps: int):
        """Three half-open (start, stop) step ranges covering the timeline."""
        t_end = int(round(self.train * total_steps))
        v_end = t_end + int(round(self.val * total_steps))
        return (0, t_end), (t_end, v_end), (v_end, total_steps)


@dataclass
class Normalizer:
    """Per-feature z-score statistics fitted on the training range."""

    mean: np.ndarray
    std: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        return ((x - self.mean) / self.std).astype(x.dtype)

    def invert(self, x):
        return x * self.std.astype(getattr(x, "dtype", np.float64), copy=False) \
            + self.mean.astype(getattr(x, "dtype", np.float64), copy=False)

    @classmethod
    def identity(cls, features=1):
        return cls(np.zeros(features), np.ones(features))


def fit_normalizer(signal: SignalTensor, train_range) -> Normalizer:
    """Statistics over the training steps only; zero-variance features fall
    back to std = 1 so constant channels map to zero."""
    start, stop = train_range
    if stop <= start:
        raise ValueError("training range is empty")
    chunk = signal.values[start:stop].astype(np.float64)
    mean = chunk.mean(axis=(0, 1))
    std = chunk.std(axis=(0, 1))
    std[std == 0] = 1.0
    return Normalizer(mean, std)


@dataclass
class SampleSet:
    """Windowed forecasting pairs: inputs (count, H, N, d) and the
    immediately following targets (count, P, N, d), both on the raw scale."""

    inputs: np.ndarray
    targets: np.ndarray

    def __len__(self):
        return self.inputs.shape[0]

    def subset(self, idx) -> "SampleSet":
        return SampleSet(self.inputs[idx], self.targets[idx])


def window_count(range_len: int, history: int, horizon: int) -> int:
    return max(0, range_len - history - horizon + 1)


def _windows(values: np.ndarray, start: int, stop: int, history: int,
             horizon: int) -> SampleSet:
    count = window_count(stop - start, history, horizon)
    if count <= 0:
        raise ValueError(
            f"range of {stop - start} steps is too short for "
            f"history {history} + horizon {horizon}"
        )
    n, d = values.shape[1], values.shape[2]
    inputs = np.empty((count, history, n, d), dtype=values.dtype)
    targets = np.empty((count, horizon, n, d), dtype=values.dtype)
    for k in range(count):
        t = start + k
        inputs[k] = values[t:t + history]
        targets[k] = values[t + history:t + history + horizon]
    return SampleSet(inputs, targets)


def make_samples(signal: SignalTensor, history: int, horizon: int,
                 split: SplitSpec):
    """Stride-1 windows inside each chronological split range; windows never
    cross a range boundary."""
    ranges = split.ranges(signal.steps)
    return tuple(_windows(signal.values, a, b, history, horizon)
                 for a, b in ranges)


@dataclass
class DatasetBundle:
    """Everything training needs: the raw signal, train-fitted normalizer,
    per-split windowed samples, and the split ranges used."""

    signal: SignalTensor
    normalizer: Normalizer
    train: SampleSet
    val: SampleSet
    test: SampleSet
    split: SplitSpec = field(default_factory=SplitSpec)


def prepare_dataset(signal: SignalTensor, history: int = 12, horizon: int = 12,
                    split: SplitSpec | None = None,
                    stats_range: str = "train") -> DatasetBundle:
    """Normalizer statistics come from the training range by default;
    ``stats_range="all"`` fits them on the whole timeline instead."""
    split = split or SplitSpec()
    if stats_range == "train":
        fit_span = split.ranges(signal.steps)[0]
    elif stats_range == "all":
        fit_span = (0, signal.steps)
    else:
        raise ValueError("stats_range must be 'train' or 'all'")
    normalizer = fit_normalizer(signal, fit_span)
    train, val, test = make_samples(signal, history, horizon, split)
    return DatasetBundle(signal, normalizer, train, val, test, split)


# -- file formats -------------------------------------------------------------

def save_signal(signal: SignalTensor, path, fmt: str | None = None) -> None:
    fmt = fmt or _infer_format(path)
    values = signal.values
    if fmt == "binary":
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<IIII", FORMAT_VERSION, *values.shape))
            fh.write(values.astype("<f4").tobytes())
    elif fmt == "csv":
        t, n, d = values.shape
        header = ",".join(f"n{i}_f{k}" for i in range(n) for k in range(d))
        flat = values.reshape(t, n * d)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(header + "\n")
            for row in flat:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
    else:
        raise ValueError(f"unknown signal format {fmt!r}")


def load_signal(path, fmt: str | None = None, features: int = 1) -> SignalTensor:
    """Read a signal tensor; `features` is only needed for CSV input, where
    the column count is nodes * features."""
    fmt = fmt or _infer_format(path)
    try:
        if fmt == "binary":
            return _load_binary(path)
        if fmt == "csv":
            return _load_csv(path, features)
    except OSError as exc:
        raise IngestionError(str(exc)) from exc
    raise ValueError(f"unknown signal format {fmt!r}")


def _infer_format(path) -> str:
    return "csv" if str(path).endswith(".csv") else "binary"


def _load_binary(path) -> SignalTensor:
    with open(path, "rb") as fh:
        head = fh.read(20)
        if len(head) < 20 or head[:4] != MAGIC:
            raise IngestionError(f"{path}: offset 0: bad magic, not a signal file")
        version, t, n, d = struct.unpack("<IIII", head[4:])
        if version != FORMAT_VERSION:
            raise IngestionError(f"{path}: offset 4: unsupported version {version}")
        payload = fh.read()
    expected = t * n * d * 4
    if len(payload) != expected:
        raise IngestionError(
            f"{path}: offset 20: payload holds {len(payload)} bytes, "
            f"shape ({t}, {n}, {d}) needs {expected}"
        )
    values = np.frombuffer(payload, dtype="<f4").reshape(t, n, d)
    return SignalTensor(values.copy())


def _load_csv(path, features: int) -> SignalTensor:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        if not header:
            raise IngestionError(f"{path}: line 1: empty file")
        width = None
        for ln, raw in enumerate(fh, start=2):
            line = raw.strip()
            if not line:
                continue
            parts = line.split(",")
            if width is None:
                width = len(parts)
                if width % features:
                    raise IngestionError(
                        f"{path}: line {ln}: {width} columns not divisible "
                        f"by {features} features"
                    )
            elif len(parts) != width:
                raise IngestionError(
                    f"{path}: line {ln}: expected {width} columns, got {len(parts)}"
                )
            try:
                rows.append([float(p) for p in parts])
            except ValueError as exc:
                raise IngestionError(f"{path}: line {ln}: {exc}") from exc
    if not rows:
        raise IngestionError(f"{path}: line 2: no data rows")
    arr = np.asarray(rows, dtype=np.float32)
    return SignalTensor(arr.reshape(arr.shape[0], -1, features))


def save_labels(labels, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("node,cluster\n")
        for node, cluster in enumerate(labels):
            fh.write(f"{node},{int(cluster)}\n")


def load_labels(path) -> np.ndarray:
    out = {}
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise IngestionError(str(exc)) from exc
    with fh:
        for ln, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or (ln == 1 and not line.split(",")[0].isdigit()):
                continue
            try:
                node, cluster = (int(p) for p in line.split(","))
            except ValueError as exc:
                raise IngestionError(f"{path}: line {ln}: {exc}") from exc
            out[node] = cluster
    return np.array([out[i] for i in range(len(out))], dtype=np.int64)


# -- synthetic data -----------------------------------------------------------

def synth_traffic(n_nodes: int, n_clusters: int, total_steps: int,
                  noise_sigma: float, seed: int):
    """Planted-cluster daily signal.

    Every cluster gets a waveform of two sinusoids (fundamental plus second
    harmonic of the 288-step day) with cluster-specific phases and
    amplitudes, offset to stay positive; nodes emit their cluster waveform
    plus i.i.d. Gaussian noise. Nodes are assigned to clusters in contiguous
    blocks and the planted spatial graph is a ring inside each cluster.

    Returns (SignalTensor, cluster labels, planted spatial adjacency).
    """
    if not 1 <= n_clusters <= n_nodes:
        raise ValueError("need n_nodes >= n_clusters >= 1")
    rng = np.random.default_rng(seed)
    phase1 = 2 * np.pi * np.arange(n_clusters) / n_clusters \
        + rng.uniform(-0.1, 0.1, n_clusters)
    amp1 = rng.uniform(0.8, 1.2, n_clusters)
    phase2 = rng.uniform(0, 2 * np.pi, n_clusters)
    amp2 = rng.uniform(0.3, 0.7, n_clusters)
    t = np.arange(total_steps)
    base = 2 * np.pi * t / DAY_STEPS
    waveforms = (
        amp1[:, None] * np.sin(base[None, :] + phase1[:, None])
        + amp2[:, None] * np.sin(2 * base[None, :] + phase2[:, None])
        + 3.0
    )
    labels = np.repeat(np.arange(n_clusters),
                       np.diff(np.linspace(0, n_nodes, n_clusters + 1).astype(int)))
    values = waveforms[labels].T[:, :, None]
    if noise_sigma > 0:
        values = values + rng.normal(0.0, noise_sigma, size=values.shape)
    adjacency = np.zeros((n_nodes, n_nodes))
    for c in range(n_clusters):
        members = np.flatnonzero(labels == c)
        if len(members) < 2:
            continue
        for a, b in zip(members, np.roll(members, -1)):
            if a != b:
                adjacency[a, b] = adjacency[b, a] = 1
    return SignalTensor(values.astype(np.float32)), labels, adjacency

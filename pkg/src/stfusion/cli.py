"""Command-line entry point.

Commands: synth, build-temporal-graph, build-fusion-graph, train, evaluate,
gradcheck, ablate. Every command ends with one machine-readable JSON summary
line on stdout and exits 0 on success; configuration problems exit 2, data
ingestion problems 3, runtime faults 4.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, load_run_config, write_effective_config
from .data import (
    SignalTensor,
    SplitSpec,
    load_signal,
    prepare_dataset,
    save_labels,
    save_signal,
    synth_traffic,
)
from .errors import ConfigError, DivergenceError, IngestionError
from .evaluation import evaluate
from .graphs import (
    SPATIAL,
    TEMPORAL,
    ZERO,
    FusionLayout,
    SparsityTarget,
    fusion_graph,
    load_spatial_graph,
    row_normalize,
    save_dense,
    save_edge_list,
    sparsity,
    temporal_graph,
)
from .model import load_checkpoint
from .similarity import BandSpec, pairwise_distances
from .training import gradient_check, train


def _summary(command: str, **fields) -> None:
    print(json.dumps({"command": command, **fields}, sort_keys=True))


def _load_config(path) -> RunConfig:
    return load_run_config(path)


def _signal_from_config(cfg: RunConfig) -> SignalTensor:
    if not cfg.data.signal:
        raise ConfigError("data.signal path is required for this command")
    return load_signal(cfg.data.signal, fmt=cfg.data.format,
                       features=cfg.data.features)


def _split_spec(cfg: RunConfig) -> SplitSpec:
    try:
        return SplitSpec(*cfg.data.split)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _band_spec(cfg: RunConfig) -> BandSpec:
    if cfg.graph.unbounded_band:
        return BandSpec(unbounded=True)
    return BandSpec(cfg.graph.band_width)


def _temporal_from_signal(signal: SignalTensor, cfg: RunConfig) -> np.ndarray:
    """Similarity graph over per-node series; by default only the training
    steps feed the distance computation so the graph cannot leak val/test."""
    if cfg.graph.fit_range == "train":
        stop = _split_spec(cfg).ranges(signal.steps)[0][1]
    else:
        stop = signal.steps
    series = np.transpose(signal.values[:stop], (1, 0, 2))
    dist = pairwise_distances(series, band=_band_spec(cfg))
    return temporal_graph(dist, SparsityTarget(cfg.graph.alpha))


def build_graphs(cfg: RunConfig, signal: SignalTensor):
    """(spatial, temporal, fused) adjacencies per the graph section."""
    n = signal.nodes
    if cfg.graph.spatial:
        spatial = load_spatial_graph(cfg.graph.spatial, n)
    else:
        spatial = np.zeros((n, n))
    if cfg.graph.temporal:
        temporal = load_spatial_graph(cfg.graph.temporal, n)
    else:
        temporal = _temporal_from_signal(signal, cfg)
    fused = fusion_graph(spatial, temporal, cfg.fusion_layout())
    if cfg.graph.normalize_adj == "row":
        fused = row_normalize(fused)
    return spatial, temporal, fused


def _prepare_run(cfg: RunConfig):
    signal = _signal_from_config(cfg)
    try:
        bundle = prepare_dataset(signal, cfg.data.history, cfg.data.horizon,
                                 _split_spec(cfg),
                                 stats_range=cfg.data.normalize_stats)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    _, _, fused = build_graphs(cfg, signal)
    return bundle, fused


def _loss_curve_svg(history, path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    epochs = [e.epoch for e in history.entries]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, [e.train_loss for e in history.entries], label="train loss")
    ax.plot(epochs, [e.val_mae for e in history.entries], label="val MAE")
    ax.set_xlabel("epoch")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def _horizon_bars_svg(report, path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    horizons = np.arange(1, report.horizons + 1)
    fig, axes = plt.subplots(1, 3, figsize=(10, 3.2))
    for ax, values, label in zip(
            axes, (report.horizon_mae, report.horizon_mape, report.horizon_rmse),
            ("MAE", "MAPE %", "RMSE")):
        ax.bar(horizons, values)
        ax.set_xlabel("horizon")
        ax.set_title(label)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


# -- commands -----------------------------------------------------------------

def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    signal, labels, spatial = synth_traffic(args.nodes, args.clusters,
                                            args.steps, args.sigma, args.seed)
    ext = "csv" if args.format == "csv" else "stfd"
    signal_path = out / f"signal.{ext}"
    save_signal(signal, signal_path, fmt=args.format)
    save_labels(labels, out / "labels.csv")
    save_edge_list(spatial, out / "spatial.csv")
    _summary("synth", nodes=args.nodes, clusters=args.clusters,
             steps=args.steps, sigma=args.sigma, seed=args.seed,
             signal=str(signal_path), labels=str(out / "labels.csv"),
             spatial=str(out / "spatial.csv"))
    return 0


def cmd_build_temporal_graph(args) -> int:
    tic = time.perf_counter()
    signal = load_signal(args.data, fmt=args.format, features=args.features)
    series = np.transpose(signal.values, (1, 0, 2))
    band = BandSpec(unbounded=True) if args.band < 0 else BandSpec(args.band)
    dist = pairwise_distances(series, band=band)
    target = SparsityTarget(args.alpha)
    graph = temporal_graph(dist, target)
    edges = save_edge_list(graph, args.out)
    _summary("build-temporal-graph", nodes=signal.nodes, edges=edges,
             sparsity=sparsity(graph), k_per_node=target.k_per_node(signal.nodes),
             band=args.band, alpha=args.alpha, out=str(args.out),
             seconds=round(time.perf_counter() - tic, 3))
    return 0


def _infer_nodes(*paths) -> int:
    top = -1
    for path in paths:
        with open(path, "r", encoding="utf-8") as fh:
            for ln, raw in enumerate(fh, start=1):
                line = raw.strip()
                if not line:
                    continue
                head = line.split(",")[0].strip()
                if ln == 1 and not head.lstrip("-").isdigit():
                    continue
                parts = line.split(",")
                try:
                    top = max(top, int(parts[0]), int(parts[1]))
                except (ValueError, IndexError) as exc:
                    raise IngestionError(f"{path}: line {ln}: {exc}") from exc
    if top < 0:
        raise IngestionError("cannot infer node count from empty edge lists")
    return top + 1


def cmd_build_fusion_graph(args) -> int:
    n = args.nodes or _infer_nodes(args.spatial, args.temporal)
    spatial = load_spatial_graph(args.spatial, n)
    temporal = load_spatial_graph(args.temporal, n)
    fused = fusion_graph(spatial, temporal, FusionLayout(args.window))
    edges = save_edge_list(fused, args.out)
    if args.dense:
        save_dense(fused, args.dense)
    _summary("build-fusion-graph", nodes=n, window=args.window,
             size=fused.shape[0], edges=edges, sparsity=sparsity(fused),
             out=str(args.out))
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    out = Path(cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    bundle, fused = _prepare_run(cfg)
    model_cfg = cfg.model_config()
    train_cfg = cfg.train_config(checkpoint_dir=str(out))
    write_effective_config(cfg, out / "effective_config.json")
    try:
        params, history = train(model_cfg, train_cfg, bundle, fused)
    except DivergenceError as exc:
        if exc.history is not None:
            exc.history.to_csv(out / "history.csv")
        raise
    history.to_csv(out / "history.csv")
    if cfg.output.plots and len(history):
        _loss_curve_svg(history, out / "loss_curve.svg")
    best_mae = min((e.val_mae for e in history.entries), default=float("nan"))
    _summary("train", epochs=len(history), best_val_mae=best_mae,
             checkpoint=str(out / "best.stfc"), history=str(out / "history.csv"),
             output=str(out))
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_config(args.config)
    model_cfg, params = load_checkpoint(args.checkpoint)
    expected = cfg.model_config()
    if model_cfg != expected:
        raise ConfigError(
            "checkpoint architecture does not match the configuration "
            f"(checkpoint {model_cfg}, config {expected})"
        )
    out = Path(cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    bundle, fused = _prepare_run(cfg)
    report = evaluate(params, bundle.test, fused.astype(np.float32),
                      bundle.normalizer, model_cfg,
                      epsilon_mask=cfg.eval.epsilon_mask)
    report.to_csv(out / "report.csv")
    (out / "report.txt").write_text(report.render_text() + "\n", encoding="utf-8")
    if cfg.output.plots:
        _horizon_bars_svg(report, out / "horizon_metrics.svg")
    print(report.render_text())
    _summary("evaluate", mae=report.overall_mae, mape=report.overall_mape,
             rmse=report.overall_rmse, samples=report.sample_count,
             report=str(out / "report.csv"))
    return 0


def cmd_gradcheck(args) -> int:
    config = None
    if args.config:
        cfg = _load_config(args.config)
        base = cfg.model_config()
        config = dataclasses.replace(
            base, channels=min(base.channels, 8), out_hidden=32,
            layers=min(base.layers, 2))
    report = gradient_check(config, seed=args.seed)
    print(f"gradient check: {report}")
    _summary("gradcheck", max_rel_error=report.max_rel_error,
             worst_param=report.worst_param, seed=report.seed_used,
             resamples=report.resamples)
    return 0 if report.max_rel_error <= args.tolerance else 4


VARIANT_GRAPHS = ("fused", "temponly", "connectonly")


def parse_variant(name: str):
    """Variant grammar: tokens joined by '_': graph mode (fused | temponly |
    connectonly), temporal-graph sparsity (sp<percent>), conv (conv | noconv).
    Missing tokens keep the base configuration."""
    choices = {}
    for token in name.split("_"):
        if token in VARIANT_GRAPHS:
            choices["graph"] = token
        elif token.startswith("sp"):
            try:
                choices["alpha"] = float(token[2:]) / 100.0
            except ValueError:
                raise ConfigError(f"variant {name!r}: bad sparsity token {token!r}")
        elif token == "conv":
            choices["conv"] = True
        elif token == "noconv":
            choices["conv"] = False
        else:
            raise ConfigError(f"variant {name!r}: unknown token {token!r}")
    return choices


def apply_variant(cfg: RunConfig, choices: dict) -> RunConfig:
    import copy

    out = copy.deepcopy(cfg)
    if "alpha" in choices:
        out.graph.alpha = choices["alpha"]
    if "conv" in choices:
        out.model.use_temporal_conv = choices["conv"]
    graph = choices.get("graph", "fused")
    base_layout = out.fusion_layout()
    if graph == "temponly":
        layout = base_layout.replace_roles({SPATIAL: TEMPORAL})
    elif graph == "connectonly":
        layout = base_layout.replace_roles({SPATIAL: ZERO, TEMPORAL: ZERO})
    else:
        layout = base_layout
    out.graph.layout = [list(row) for row in layout.grid]
    return out


def cmd_ablate(args) -> int:
    base = _load_config(args.config)
    names = [v.strip() for v in args.variants.split(",") if v.strip()]
    if not names:
        raise ConfigError("no variants given")
    out = Path(base.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    failures = 0
    for name in names:
        variant_cfg = apply_variant(base, parse_variant(name))
        try:
            bundle, fused = _prepare_run(variant_cfg)
            model_cfg = variant_cfg.model_config()
            ckpt_dir = out / f"variant_{name}"
            params, history = train(model_cfg,
                                    variant_cfg.train_config(str(ckpt_dir)),
                                    bundle, fused)
            report = evaluate(params, bundle.test, fused.astype(np.float32),
                              bundle.normalizer, model_cfg,
                              epsilon_mask=variant_cfg.eval.epsilon_mask)
            rows.append((name, f"{report.overall_mae:.6f}",
                         f"{report.overall_mape:.6f}",
                         f"{report.overall_rmse:.6f}"))
            print(f"variant {name}: MAE {report.overall_mae:.4f} "
                  f"MAPE {report.overall_mape:.4f} RMSE {report.overall_rmse:.4f}")
        except Exception as exc:  # keep going; record the failure
            failures += 1
            rows.append((name, "", "", ""))
            print(f"variant {name} failed: {exc}", file=sys.stderr)
    csv_path = out / "ablation.csv"
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("variant,mae,mape,rmse\n")
        for row in rows:
            fh.write(",".join(row) + "\n")
    _summary("ablate", variants=len(names), failures=failures,
             table=str(csv_path))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stfusion",
        description="Traffic forecasting on fused spatial/temporal graphs",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a planted-cluster dataset")
    p.add_argument("--nodes", type=int, required=True)
    p.add_argument("--clusters", type=int, required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("binary", "csv"), default="binary")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("build-temporal-graph",
                       help="similarity graph from a signal file")
    p.add_argument("--data", required=True)
    p.add_argument("--format", choices=("binary", "csv"), default=None)
    p.add_argument("--features", type=int, default=1)
    p.add_argument("--band", type=int, default=12,
                   help="search band radius; negative = unbounded")
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_temporal_graph)

    p = sub.add_parser("build-fusion-graph",
                       help="assemble the windowed fusion adjacency")
    p.add_argument("--spatial", required=True)
    p.add_argument("--temporal", required=True)
    p.add_argument("--window", "-K", type=int, default=4)
    p.add_argument("--nodes", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--dense", default=None,
                   help="also dump the dense matrix to this path")
    p.set_defaults(func=cmd_build_fusion_graph)

    p = sub.add_parser("train", help="train from a JSON run configuration")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on the test split")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck",
                       help="compare analytic gradients with finite differences")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="train and score configuration variants")
    p.add_argument("--config", required=True)
    p.add_argument("--variants", required=True,
                   help="comma-separated names, e.g. "
                        "fused_sp1_conv,connectonly_sp1_conv")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except IngestionError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:
        print(f"runtime fault: {exc}", file=sys.stderr)
        return 4


def console_main() -> None:
    sys.exit(main())

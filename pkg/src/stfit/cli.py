"""Command-line harness: convert, train, evaluate, ablate, sweep, plot.

Experiments live under $STFIT_HOME (or --out, default ./experiments), one
directory per run id; the id is a content hash of the resolved config and
code version, so every reported number is re-runnable from the stored
config + seeds.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import hashlib
import json
import os
import sys
import time
import traceback
from dataclasses import fields
from pathlib import Path

import numpy as np
import yaml

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from . import __version__
from .data import (
    SpatialTemporalGraph,
    load_dataset,
    save_dataset,
    split_nodes_bfs,
    synth_generate,
)
from .evaluation import (
    DEFAULT_EVAL_SEED,
    NODE_SCOPES,
    evaluate_checkpoint,
    export_topology,
    run_ablation,
    write_report_files,
)
from .training import (
    EpochRecord,
    TrainConfig,
    VARIANTS,
    ensure_adjacency,
    load_checkpoint,
    save_checkpoint,
    train,
)


class ConfigError(ValueError):
    """Invalid configuration or command-line usage (exit code 1)."""


DEFAULT_RATIO_GRID = [0.05, 0.10, 0.25, 0.50, 0.75, 1.00]
DEFAULT_LAMBDA_GRID = [0.1, 0.2, 0.3, 0.4, 0.5]
DEFAULT_EPSILON_GRID = [0.0, 0.25, 0.5, 0.75, 0.9, 1.0]
SWEEP_AXES = ("ratio", "lambda", "epsilon")

_DATASET_DEFAULTS = {
    "kind": "synthetic",
    "path": None,
    "n_nodes": 30,
    "n_steps": 600,
    "seed": 0,
    "graph_kind": "geometric",
    "signal_kind": "sinusoid",
    "noise_sigma": 0.05,
}
_EVALUATE_DEFAULTS = {
    "horizons": [3, 6, 12],
    "node_scope": "test_nodes",
    "eval_seed": DEFAULT_EVAL_SEED,
}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)}


# --------------------------------------------------------------------- config

def default_config() -> dict:
    return {
        "dataset": dict(_DATASET_DEFAULTS),
        "train": {f.name: f.default for f in fields(TrainConfig)},
        "evaluate": dict(_EVALUATE_DEFAULTS),
    }


def validate_config(raw: dict) -> dict:
    """Merge a raw mapping over defaults; unknown keys are hard errors."""
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    resolved = default_config()
    sections = {
        "dataset": set(_DATASET_DEFAULTS),
        "train": _TRAIN_KEYS,
        "evaluate": set(_EVALUATE_DEFAULTS),
    }
    for section, content in raw.items():
        if section not in sections:
            raise ConfigError(f"unknown config key {section!r}")
        if content is None:
            continue
        if not isinstance(content, dict):
            raise ConfigError(f"config section {section!r} must be a mapping")
        for key, value in content.items():
            if key not in sections[section]:
                raise ConfigError(f"unknown config key '{section}.{key}'")
            resolved[section][key] = value
    try:
        TrainConfig(**resolved["train"]).validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if resolved["dataset"]["kind"] not in ("synthetic", "directory"):
        raise ConfigError("dataset.kind must be 'synthetic' or 'directory'")
    if resolved["dataset"]["kind"] == "directory" and not resolved["dataset"]["path"]:
        raise ConfigError("dataset.kind 'directory' requires dataset.path")
    if resolved["evaluate"]["node_scope"] not in NODE_SCOPES:
        raise ConfigError(f"evaluate.node_scope must be one of {NODE_SCOPES}")
    return resolved


def load_config_file(path: str | Path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return validate_config(raw)


def dump_config(config: dict) -> str:
    return yaml.safe_dump(config, sort_keys=True, default_flow_style=False)


def resolve_config(args: argparse.Namespace) -> dict:
    config = load_config_file(args.config) if args.config else validate_config({})
    if getattr(args, "dataset", None):
        config["dataset"]["kind"] = "directory"
        config["dataset"]["path"] = str(args.dataset)
    if getattr(args, "seed", None) is not None:
        config["train"]["seed"] = args.seed
    if getattr(args, "deterministic", None) is not None:
        config["train"]["deterministic"] = args.deterministic
    if getattr(args, "device", None):
        config["train"]["device"] = args.device
    return validate_config(config)


def experiment_id(config: dict, extra: str = "") -> str:
    blob = json.dumps(
        {"config": config, "code_version": __version__, "extra": extra},
        sort_keys=True,
        default=str,
    )
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def store_root(args: argparse.Namespace) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    env = os.environ.get("STFIT_HOME")
    if env:
        return Path(env)
    return Path("experiments")


def build_graph(ds_cfg: dict) -> SpatialTemporalGraph:
    if ds_cfg["kind"] == "synthetic":
        return synth_generate(
            ds_cfg["n_nodes"],
            ds_cfg["n_steps"],
            ds_cfg["seed"],
            graph_kind=ds_cfg["graph_kind"],
            signal_kind=ds_cfg["signal_kind"],
            noise_sigma=ds_cfg["noise_sigma"],
        )
    return load_dataset(ds_cfg["path"])


def record_line(record: EpochRecord, deterministic: bool) -> str:
    payload = record.to_dict()
    if deterministic:
        # wall time is the one nondeterministic field; it stays in the run log
        payload.pop("wall_seconds")
    return json.dumps(payload, sort_keys=True) + "\n"


# ------------------------------------------------------------------- commands

def cmd_convert(args: argparse.Namespace) -> int:
    source = Path(args.source)
    if not source.is_dir():
        raise ConfigError(f"source directory not found: {source}")
    npz_files = sorted(source.glob("*.npz"))
    if not npz_files:
        raise ConfigError(f"no .npz array archive in {source}")
    archive = np.load(npz_files[0])
    if "data" not in archive:
        raise ConfigError(f"{npz_files[0]} has no 'data' array")
    data = archive["data"]
    if data.ndim == 2:
        data = data[:, :, None]
    elif data.ndim == 3:
        data = data[:, :, :1]  # first channel is the traffic flow volume
    else:
        raise ConfigError(f"'data' array must be 2- or 3-dimensional, got {data.ndim}")
    t_steps, n_nodes, n_chan = data.shape

    adjacency = None
    csv_files = sorted(p for p in source.glob("*.csv"))
    if csv_files:
        adjacency = np.zeros((n_nodes, n_nodes), dtype=np.float32)
        with csv_files[0].open() as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            for row in reader:
                if len(row) < 3:
                    continue
                i, j, cost = int(row[0]), int(row[1]), float(row[2])
                adjacency[i, j] = max(adjacency[i, j], cost)
        adjacency = np.maximum(adjacency, adjacency.T)
    else:
        print("warning: no distance CSV found; dataset written without adjacency")

    graph = SpatialTemporalGraph(
        name=npz_files[0].stem,
        num_nodes=n_nodes,
        features=data.astype(np.float32),
        adjacency=adjacency,
        step_minutes=5,
    )
    save_dataset(graph, args.dest)
    print(f"wrote {args.dest}: N={n_nodes} T={t_steps} C={n_chan}")
    return 0


def _run_training(config: dict, run_dir: Path) -> tuple[dict, list[EpochRecord]]:
    graph = build_graph(config["dataset"])
    tc = TrainConfig(**config["train"])
    adjacency = ensure_adjacency(graph, tc.hidden_dim, tc.theta_init, tc.seed)
    split = split_nodes_bfs(adjacency, tc.node_ratio, tc.seed)

    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.yaml").write_text(dump_config(config))
    metrics_path = run_dir / "metrics.jsonl"
    log_path = run_dir / "train.log"

    def on_abort(payload: dict) -> None:
        payload["experiment_config"] = config
        save_checkpoint(payload, run_dir / "checkpoint.pt")

    with metrics_path.open("w") as metrics_fh, log_path.open("w") as log_fh:

        def on_epoch(record: EpochRecord) -> None:
            metrics_fh.write(record_line(record, tc.deterministic))
            metrics_fh.flush()
            log_fh.write(
                f"epoch {record.epoch}: val_mae={record.val_mae:.6f} "
                f"wall={record.wall_seconds:.3f}s\n"
            )
            log_fh.flush()

        payload, records = train(
            tc, graph, split, adjacency=adjacency, on_epoch=on_epoch, on_abort=on_abort
        )
    payload["experiment_config"] = config
    save_checkpoint(payload, run_dir / "checkpoint.pt")
    return payload, records


def cmd_train(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    run_id = experiment_id(config)
    run_dir = store_root(args) / run_id
    started = datetime.datetime.now(datetime.timezone.utc).isoformat()
    t0 = time.perf_counter()
    payload, records = _run_training(config, run_dir)
    wall = time.perf_counter() - t0

    record = {
        "id": run_id,
        "config": config,
        "code_version": __version__,
        "node_split": payload["node_split"],
        "seeds": {"train": config["train"]["seed"], "dataset": config["dataset"]["seed"]},
        "started": started,
        "wall_seconds_total": wall,
        "epochs": len(records),
        "best_val_mae": payload["best_val_mae"],
        "counters": payload["counters"],
        "metrics": "metrics.jsonl",
        "checkpoint": "checkpoint.pt",
    }
    (run_dir / "record.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    print(
        f"run {run_id}: {len(records)} epochs, best val MAE "
        f"{payload['best_val_mae']:.6f} -> {run_dir}"
    )
    return 0


def _locate_checkpoint(args: argparse.Namespace) -> tuple[dict, Path]:
    if getattr(args, "record", None):
        run_dir = store_root(args) / args.record
        path = run_dir / "checkpoint.pt"
        if not path.is_file():
            raise ConfigError(f"no checkpoint for record {args.record} under {run_dir}")
        return load_checkpoint(path), run_dir
    if getattr(args, "checkpoint", None):
        path = Path(args.checkpoint)
        if not path.is_file():
            raise ConfigError(f"checkpoint not found: {path}")
        return load_checkpoint(path), path.parent
    raise ConfigError("evaluate needs --record or --checkpoint")


def cmd_evaluate(args: argparse.Namespace) -> int:
    payload, run_dir = _locate_checkpoint(args)
    config = payload.get("experiment_config")
    if getattr(args, "dataset", None):
        graph = load_dataset(args.dataset)
    elif config:
        graph = build_graph(config["dataset"])
    else:
        raise ConfigError("checkpoint carries no dataset config; pass --dataset")
    eval_cfg = (config or {}).get("evaluate", dict(_EVALUATE_DEFAULTS))
    node_scope = args.node_scope or eval_cfg["node_scope"]
    if node_scope not in NODE_SCOPES:
        raise ConfigError(f"node_scope must be one of {NODE_SCOPES}")
    tc = TrainConfig(**payload["train_config"])
    adjacency = ensure_adjacency(graph, tc.hidden_dim, tc.theta_init, tc.seed)
    report = evaluate_checkpoint(
        payload,
        graph,
        horizons=tuple(eval_cfg["horizons"]),
        node_scope=node_scope,
        eval_seed=eval_cfg["eval_seed"],
        adjacency=adjacency,
        topology_samples=args.topology_samples,
    )
    out_dir = Path(args.report_dir) if getattr(args, "report_dir", None) else run_dir
    json_path, csv_path = write_report_files([report], out_dir)
    if getattr(args, "export_topology", False):
        if tc.topology_mode != "learned":
            print("warning: variant has no learned topology; skipping export")
        else:
            export_topology(
                payload, graph, out_dir / "topology.csv", eval_seed=eval_cfg["eval_seed"]
            )
    overall = report.overall()
    print(
        f"{report.variant} [{node_scope}] MAE={overall['mae']:.4f} "
        f"RMSE={overall['rmse']:.4f} MAPE={overall['mape_pct']:.3f}% -> {json_path}"
    )
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    variants = args.variants or list(VARIANTS)
    for variant in variants:
        if variant not in VARIANTS:
            raise ConfigError(f"unknown variant {variant!r}; valid: {list(VARIANTS)}")
    graph = build_graph(config["dataset"])
    tc = TrainConfig(**config["train"])
    adjacency = ensure_adjacency(graph, tc.hidden_dim, tc.theta_init, tc.seed)
    split = split_nodes_bfs(adjacency, tc.node_ratio, tc.seed)  # shared by all variants

    run_id = experiment_id(config, extra="ablate:" + ",".join(variants))
    run_dir = store_root(args) / run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.yaml").write_text(dump_config(config))

    eval_cfg = config["evaluate"]
    reports = []
    summaries = []
    for variant in variants:
        report, summary = run_ablation(
            variant,
            tc,
            graph,
            split,
            adjacency=adjacency,
            horizons=tuple(eval_cfg["horizons"]),
            node_scope=eval_cfg["node_scope"],
            eval_seed=eval_cfg["eval_seed"],
        )
        reports.append(report)
        summaries.append(summary)
        overall = report.overall()
        print(
            f"{variant}: MAE={overall['mae']:.4f} RMSE={overall['rmse']:.4f} "
            f"MAPE={overall['mape_pct']:.3f}%"
        )
    write_report_files(reports, run_dir)
    with (run_dir / "summary.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "mae", "rmse", "mape_pct"])
        for report in reports:
            overall = report.overall()
            writer.writerow(
                [
                    report.variant,
                    f"{overall['mae']:.6f}",
                    f"{overall['rmse']:.6f}",
                    f"{overall['mape_pct']:.6f}",
                ]
            )
    (run_dir / "summaries.json").write_text(json.dumps(summaries, indent=2) + "\n")
    print(f"ablation -> {run_dir}")
    return 0


def _sweep_grid(axis: str, values: list[float] | None) -> list[float]:
    if values:
        return [float(v) for v in values]
    if axis == "ratio":
        return list(DEFAULT_RATIO_GRID)
    if axis == "lambda":
        return list(DEFAULT_LAMBDA_GRID)
    return list(DEFAULT_EPSILON_GRID)


def cmd_sweep(args: argparse.Namespace) -> int:
    if args.axis not in SWEEP_AXES:
        raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}")
    values = _sweep_grid(args.axis, args.values)
    if not values:
        raise ConfigError("sweep needs at least one value")
    seeds = args.seeds if args.seeds else [0, 1, 2]
    config = resolve_config(args)
    graph = build_graph(config["dataset"])
    base_tc = TrainConfig(**config["train"])
    adjacency = ensure_adjacency(
        graph, base_tc.hidden_dim, base_tc.theta_init, base_tc.seed
    )
    eval_cfg = config["evaluate"]

    run_id = experiment_id(config, extra=f"sweep:{args.axis}:{values}:{seeds}")
    run_dir = store_root(args) / run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.yaml").write_text(dump_config(config))

    key = {"ratio": "node_ratio", "lambda": "lam", "epsilon": "eps"}[args.axis]
    rows = []
    for value in values:
        train_kwargs = dict(config["train"])
        train_kwargs[key] = value
        # the node split is seeded by the base config; only training seeds vary
        split = split_nodes_bfs(
            adjacency, train_kwargs["node_ratio"], base_tc.seed
        )
        for seed in seeds:
            tc = TrainConfig(**{**train_kwargs, "seed": int(seed)})
            payload, _ = train(tc, graph, split, adjacency=adjacency)
            report = evaluate_checkpoint(
                payload,
                graph,
                horizons=tuple(eval_cfg["horizons"]),
                node_scope=eval_cfg["node_scope"],
                eval_seed=eval_cfg["eval_seed"],
                adjacency=adjacency,
            )
            overall = report.overall()
            rows.append(
                {
                    "axis": args.axis,
                    "value": value,
                    "seed": int(seed),
                    "mae": overall["mae"],
                    "rmse": overall["rmse"],
                    "mape_pct": overall["mape_pct"],
                }
            )
            print(
                f"{args.axis}={value} seed={seed}: MAE={overall['mae']:.4f} "
                f"RMSE={overall['rmse']:.4f}"
            )

    csv_path = run_dir / "sweep.csv"
    with csv_path.open("w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["axis", "value", "seed", "mae", "rmse", "mape_pct"]
        )
        writer.writeheader()
        writer.writerows(rows)
    _plot_sweep(rows, args.axis, run_dir / "plots")
    print(f"sweep -> {run_dir}")
    return 0


# ---------------------------------------------------------------------- plots

_PLOT_KINDS = ("losses", "sweep", "metrics")


def _save_figure(fig, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100, metadata={"Software": "stfit"})
    plt.close(fig)


def sweep_series(rows: list[dict], metric: str) -> tuple[list[float], list[float], list[float]]:
    """Per-value mean and std of one metric; x values are the swept grid."""
    values = sorted({row["value"] for row in rows})
    means, stds = [], []
    for value in values:
        group = [row[metric] for row in rows if row["value"] == value]
        means.append(float(np.mean(group)))
        stds.append(float(np.std(group)))
    return values, means, stds


def _plot_sweep(rows: list[dict], axis: str, plot_dir: Path) -> list[Path]:
    paths = []
    for metric in ("mae", "rmse", "mape_pct"):
        values, means, stds = sweep_series(rows, metric)
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.errorbar(values, means, yerr=stds, marker="o", capsize=3)
        ax.set_xlabel(axis)
        ax.set_ylabel(metric)
        ax.set_title(f"{metric} vs {axis}")
        fig.tight_layout()
        path = plot_dir / f"sweep_{axis}_{metric}.png"
        _save_figure(fig, path)
        paths.append(path)
    return paths


def _plot_losses(run_dir: Path, plot_dir: Path) -> Path:
    metrics_path = run_dir / "metrics.jsonl"
    if not metrics_path.is_file():
        raise ConfigError(f"no metrics.jsonl under {run_dir}")
    records = [json.loads(line) for line in metrics_path.read_text().splitlines() if line]
    fig, ax = plt.subplots(figsize=(6, 4))
    for key in ("loss_sim", "loss_fst", "loss_kl", "loss_ori"):
        series = [r.get(key) for r in records]
        epochs = [r["epoch"] for r, v in zip(records, series) if v is not None]
        values = [v for v in series if v is not None]
        if values:
            ax.plot(epochs, values, label=key)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend()
    fig.tight_layout()
    path = plot_dir / "losses.png"
    _save_figure(fig, path)
    return path


def _plot_metrics(run_dir: Path, plot_dir: Path) -> Path:
    report_path = run_dir / "report.json"
    if not report_path.is_file():
        raise ConfigError(f"no report.json under {run_dir}")
    report = json.loads(report_path.read_text())
    if not report:
        raise ConfigError(f"empty report.json under {run_dir}")
    fig, ax = plt.subplots(figsize=(6, 4))
    width = 0.8 / max(len(report), 1)
    horizons = None
    for idx, (variant, body) in enumerate(sorted(report.items())):
        rows = body["horizons"]
        horizons = sorted(rows, key=lambda h: (h == "overall", h))
        xs = np.arange(len(horizons)) + idx * width
        ax.bar(xs, [rows[h]["mae"] for h in horizons], width=width, label=variant)
    ax.set_xticks(np.arange(len(horizons)) + 0.4)
    ax.set_xticklabels(horizons)
    ax.set_ylabel("MAE")
    ax.legend(fontsize=7)
    fig.tight_layout()
    path = plot_dir / "metrics.png"
    _save_figure(fig, path)
    return path


def cmd_plot(args: argparse.Namespace) -> int:
    if args.kind not in _PLOT_KINDS:
        raise ConfigError(f"plot kind must be one of {_PLOT_KINDS}")
    root = store_root(args)
    for record_id in args.records:
        run_dir = root / record_id
        if not run_dir.is_dir():
            raise ConfigError(f"record not found: {run_dir}")
        plot_dir = run_dir / "plots"
        if args.kind == "losses":
            path = _plot_losses(run_dir, plot_dir)
        elif args.kind == "metrics":
            path = _plot_metrics(run_dir, plot_dir)
        else:
            sweep_path = run_dir / "sweep.csv"
            if not sweep_path.is_file():
                raise ConfigError(f"no sweep.csv under {run_dir}")
            with sweep_path.open() as fh:
                rows = [
                    {
                        "axis": row["axis"],
                        "value": float(row["value"]),
                        "seed": int(row["seed"]),
                        "mae": float(row["mae"]),
                        "rmse": float(row["rmse"]),
                        "mape_pct": float(row["mape_pct"]),
                    }
                    for row in csv.DictReader(fh)
                ]
            if not rows:
                raise ConfigError(f"empty sweep.csv under {run_dir}")
            paths = _plot_sweep(rows, rows[0]["axis"], plot_dir)
            path = paths[0]
        print(f"plotted {args.kind} -> {path.parent}")
    return 0


# ----------------------------------------------------------------------- main

class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse default exits with code 2
        raise ConfigError(message)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="YAML config file")
    parser.add_argument("--seed", type=int, help="override train.seed")
    parser.add_argument("--dataset", help="dataset directory (overrides config)")
    parser.add_argument("--out", help="experiment store root (else $STFIT_HOME)")
    parser.add_argument(
        "--deterministic",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="force single-threaded deterministic mode",
    )
    parser.add_argument("--device", help="torch device (default cpu)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stfit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="convert a public array archive + distance CSV")
    p.add_argument("source", help="directory with the source archive")
    p.add_argument("dest", help="output dataset directory")
    _add_common(p)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("train", help="train one configuration")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a stored run or checkpoint")
    p.add_argument("--record", help="experiment id under the store root")
    p.add_argument("--checkpoint", help="checkpoint file path")
    p.add_argument("--node-scope", choices=NODE_SCOPES, default=None)
    p.add_argument("--report-dir", help="write reports here instead of the run dir")
    p.add_argument(
        "--topology-samples", type=int, default=1,
        help="average predictions over this many hard topology draws",
    )
    p.add_argument(
        "--export-topology", action="store_true", help="write learned edges as CSV"
    )
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="run ablation variants on a shared split")
    p.add_argument("--variants", nargs="*", help=f"subset of {list(VARIANTS)}")
    _add_common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep", help="sweep one hyperparameter axis")
    p.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p.add_argument("--values", nargs="*", type=float)
    p.add_argument("--seeds", nargs="*", type=int)
    _add_common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("plot", help="render plots for stored records")
    p.add_argument("--records", nargs="+", required=True)
    p.add_argument("--kind", required=True, choices=_PLOT_KINDS)
    _add_common(p)
    p.set_defaults(func=cmd_plot)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit:
        raise
    except Exception:
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())

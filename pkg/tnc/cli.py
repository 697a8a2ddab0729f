"""Command-line entry point: ``tnc simulate | train | eval | adf | sweep-w``.

Exit codes: 0 on success, 1 on numerical or training failures, 2 on usage,
input, configuration or compatibility errors.
"""

import functools
import logging
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Any, Optional

import click
import numpy as np
import pandas as pd
import torch
from dotenv import load_dotenv

from .config import EvalMode, RunConfig
from .dataset import TimeSeriesDataset, dataset_from_csv, read_csv_column, read_dataset, write_dataset
from .errors import ContractError, EvaluationError, NumericalError, TncError
from .evaluation import (
    EvalReport,
    cluster_report,
    encode_dataset,
    export_encodings_csv,
    export_trajectory_csv,
    knn_baseline,
    linear_probe,
    supervised_baseline,
    transition_hit_rate,
    window_set,
)
from .model import ModelCheckpoint, load_checkpoint, save_checkpoint
from .settings import TncSettings, configure_logging
from .simgen import assemble_dataset
from .stationarity import adf_test
from .train import EpochRecord, estimate_pu_weight, split_instances, sweep_weights, train

logger = logging.getLogger(__name__)

EXIT_NUMERICAL = 1
EXIT_USAGE = 2
CHECKPOINT_NAME = "checkpoint.tnck"


def handle_errors(command):
    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except NumericalError as e:
            logger.debug("numerical failure", exc_info=True)
            click.echo(f"Error: {e}", err=True)
            sys.exit(EXIT_NUMERICAL)
        except (TncError, OSError) as e:
            logger.debug("input failure", exc_info=True)
            click.echo(f"Error: {e}", err=True)
            sys.exit(EXIT_USAGE)

    return wrapper


def _resolve_config(config_path: Optional[Path], overrides: dict[str, Any]) -> RunConfig:
    settings: TncSettings = click.get_current_context().obj
    if config_path is not None:
        base = RunConfig.load(config_path)
    else:
        base = RunConfig(seed=settings.seed, threads=settings.threads)
    cfg = base.with_overrides(overrides)
    torch.set_num_threads(cfg.threads)
    return cfg


def _load_dataset(path: Path, from_csv: bool, label_column: Optional[str]) -> TimeSeriesDataset:
    if from_csv:
        return dataset_from_csv(path, label_column=label_column)
    return read_dataset(path)


def _state_frequencies(labels: np.ndarray) -> str:
    states, counts = np.unique(labels, return_counts=True)
    return ", ".join(f"{s}: {c / labels.size:.3f}" for s, c in zip(states, counts))


def history_frame(history: list[EpochRecord]) -> pd.DataFrame:
    rows = []
    for record in history:
        row = {
            "epoch": record.epoch,
            "loss": record.train.total,
            "neighbor_term": record.train.neighbor_term,
            "nonneighbor_negative_term": record.train.nonneighbor_negative_term,
            "nonneighbor_positive_term": record.train.nonneighbor_positive_term,
            "accuracy": record.train.discriminator_accuracy,
            "val_loss": None if record.validation is None else record.validation.total,
            "val_accuracy": None if record.validation is None else record.validation.discriminator_accuracy,
            "anchors_used": record.anchors_used,
            "anchors_skipped": record.anchors_skipped,
        }
        rows.append(row)
    return pd.DataFrame(rows)


common_options = [
    click.option("--config", "config_path", type=click.Path(dir_okay=False, path_type=Path), default=None, help="JSON run configuration."),
    click.option("--seed", type=int, default=None, help="Random seed (default 42)."),
    click.option("--threads", type=click.IntRange(min=1), default=None, help="Worker thread cap."),
]

dataset_options = [
    click.option("--from-csv", is_flag=True, help="DATASET is a directory of CSV files, one instance per file."),
    click.option("--label-column", default=None, help="CSV column holding per-step state labels."),
]

training_options = [
    click.option("--delta", type=int, default=None, help="Window size."),
    click.option("--encoding-size", type=int, default=None, help="Encoding dimension M."),
    click.option("--w", "w", type=float, default=None, help="PU weight of non-neighbours."),
    click.option("--epochs", type=int, default=None),
    click.option("--lr", type=float, default=None, help="Adam learning rate."),
    click.option("--batch-size", type=int, default=None),
    click.option("--precision", type=click.Choice(["float32", "float64"]), default=None),
]


def add_options(options):
    def decorator(command):
        for option in reversed(options):
            command = option(command)
        return command

    return decorator


def _training_overrides(seed, threads, delta, encoding_size, w, epochs, lr, batch_size, precision) -> dict[str, Any]:
    return {
        "seed": seed,
        "threads": threads,
        "train.delta": delta,
        "train.encoding_size": encoding_size,
        "train.w": w,
        "train.epochs": epochs,
        "train.learning_rate": lr,
        "train.batch_size": batch_size,
        "train.precision": precision,
    }


@click.group()
@click.option("--log-level", default=None, help="Logging level (default from TNC_LOG_LEVEL or INFO).")
@click.pass_context
def cli(ctx: click.Context, log_level: Optional[str]) -> None:
    """Temporal Neighborhood Coding: simulate data, train encoders, evaluate representations."""
    load_dotenv()
    settings = TncSettings()
    configure_logging(log_level or settings.log_level)
    ctx.obj = settings


@cli.command()
@click.option("--out", "out_path", type=click.Path(dir_okay=False, path_type=Path), required=True, help="Dataset file to write.")
@click.option("--instances", type=int, default=None, help="Number of instances N.")
@click.option("--length", type=int, default=None, help="Steps per instance T.")
@add_options(common_options)
@handle_errors
def simulate(out_path: Path, instances, length, config_path, seed, threads) -> None:
    """Generate the simulated HMM dataset with state labels."""
    cfg = _resolve_config(
        config_path,
        {"seed": seed, "threads": threads, "generator.n_instances": instances, "generator.length": length},
    )
    gen = cfg.generator
    dataset = assemble_dataset(gen.spec, gen.hmm, gen.n_instances, gen.length, cfg.seed, cfg.threads)
    write_dataset(dataset, out_path)
    cfg.write(out_path.parent)
    click.echo(f"Wrote {out_path}: N={dataset.n_instances} D={dataset.n_features} T={dataset.length}")
    click.echo(f"State frequencies: {_state_frequencies(dataset.state_labels)}")


@cli.command(name="train")
@click.argument("dataset_path", type=click.Path(path_type=Path))
@click.option("--out-dir", type=click.Path(file_okay=False, path_type=Path), required=True)
@add_options(dataset_options)
@add_options(training_options)
@add_options(common_options)
@handle_errors
def train_command(dataset_path: Path, out_dir: Path, from_csv, label_column, delta, encoding_size, w, epochs, lr, batch_size, precision, config_path, seed, threads) -> None:
    """Train an encoder and discriminator with the temporal-neighborhood objective."""
    cfg = _resolve_config(config_path, _training_overrides(seed, threads, delta, encoding_size, w, epochs, lr, batch_size, precision))
    dataset = _load_dataset(dataset_path, from_csv, label_column)
    if cfg.train.delta > dataset.length:
        raise ContractError(f"window size {cfg.train.delta} exceeds series length {dataset.length}")

    result = train(dataset, cfg.encoder_config(dataset.n_features), cfg.discriminator_config(), cfg.train_config())
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.checkpoint, out_dir / CHECKPOINT_NAME)
    history_frame(result.history).to_csv(out_dir / "history.csv", index=False)
    cfg.write(out_dir)

    last = result.history[-1]
    click.echo(f"Trained {len(result.history)} epoch(s); best epoch {result.best_epoch}")
    click.echo(f"Final loss {last.train.total:.4f}, discriminator accuracy {last.train.discriminator_accuracy:.3f}")
    click.echo(f"Checkpoint: {out_dir / CHECKPOINT_NAME}")


def _check_compatible(ckpt: ModelCheckpoint, dataset: TimeSeriesDataset) -> None:
    enc = ckpt.encoder_config
    if enc.input_features != dataset.n_features or enc.window_size > dataset.length:
        raise ContractError(
            f"checkpoint expects windows of {enc.input_features}×{enc.window_size}, "
            f"dataset is {dataset.n_instances}×{dataset.n_features}×{dataset.length}"
        )


def _n_clusters(cfg: RunConfig, dataset: TimeSeriesDataset) -> int:
    if cfg.eval.n_clusters is not None:
        return cfg.eval.n_clusters
    if not dataset.has_labels:
        raise EvaluationError("set eval.n_clusters or provide state labels")
    return int(np.unique(dataset.state_labels).size)


def _eval_cluster(ckpt, dataset, cfg, delta, out_dir, report: EvalReport) -> None:
    encoded = encode_dataset(ckpt, dataset, delta, cfg.eval.stride)
    k = _n_clusters(cfg, dataset)
    clusters = cluster_report(encoded.encodings, k, seed=cfg.seed, n_init=cfg.eval.kmeans_restarts)
    report.add("", silhouette=clusters.silhouette, davies_bouldin=clusters.davies_bouldin, k=k, inertia=clusters.inertia)

    raw = cluster_report(window_set(dataset, delta, cfg.eval.stride).flattened(), k, seed=cfg.seed, n_init=cfg.eval.kmeans_restarts)
    report.add("raw", silhouette=raw.silhouette, davies_bouldin=raw.davies_bouldin)

    if encoded.labels is not None:
        rates = [
            transition_hit_rate(encoded.for_instances([i]), clusters.centroids, cfg.eval.transition_tolerance)
            for i in np.unique(encoded.instance_index)
        ]
        if not np.all(np.isnan(rates)):
            report.add("", transition_hit_rate=float(np.nanmean(rates)))
    export_encodings_csv(encoded, out_dir / "encodings.csv")


def _split(dataset: TimeSeriesDataset, cfg: RunConfig) -> tuple[np.ndarray, np.ndarray]:
    train_idx, test_idx = split_instances(dataset.n_instances, cfg.eval.test_fraction, cfg.seed)
    if test_idx.size == 0:
        raise EvaluationError(f"{dataset.n_instances} instance(s) cannot be split into train and test")
    return train_idx, test_idx


def _eval_classify(ckpt, dataset, cfg, delta, out_dir, report: EvalReport) -> None:
    train_idx, test_idx = _split(dataset, cfg)
    encoded = encode_dataset(ckpt, dataset, delta, cfg.eval.stride)
    result = linear_probe(encoded.for_instances(train_idx), encoded.for_instances(test_idx), seed=cfg.seed, l2=cfg.eval.probe_l2)
    report.add("", accuracy=result.accuracy, auprc=result.auprc, n_train_instances=train_idx.size, n_test_instances=test_idx.size)


def _eval_trajectory(ckpt, dataset, cfg, delta, out_dir, report: EvalReport) -> None:
    instance = cfg.eval.trajectory_instance
    if instance >= dataset.n_instances:
        raise ContractError(f"trajectory instance {instance} out of range for {dataset.n_instances} instances")
    stride = cfg.eval.stride or delta
    encoded = encode_dataset(ckpt, dataset, delta, stride)
    path = export_trajectory_csv(encoded, instance, out_dir / f"trajectory_{instance}.csv")
    report.add("", instance=instance, stride=stride)
    if encoded.labels is not None:
        clusters = cluster_report(encoded.encodings, _n_clusters(cfg, dataset), seed=cfg.seed, n_init=cfg.eval.kmeans_restarts)
        rate = transition_hit_rate(encoded.for_instances([instance]), clusters.centroids, cfg.eval.transition_tolerance)
        report.add("", transition_hit_rate=rate)
    report.notes.append(f"Trajectory written to {path}")


def _eval_knn(ckpt, dataset, cfg, delta, out_dir, report: EvalReport) -> None:
    result = knn_baseline(
        dataset,
        delta,
        k=cfg.eval.knn_k,
        sample_cap=cfg.eval.knn_sample_cap,
        seed=cfg.seed,
        test_fraction=cfg.eval.test_fraction,
        threads=cfg.threads,
    )
    report.add("", accuracy=result.accuracy, k=result.k, n_train=result.n_train, n_test=result.n_test, seconds=result.seconds)


def _eval_supervised(ckpt, dataset, cfg, delta, out_dir, report: EvalReport) -> None:
    train_idx, test_idx = _split(dataset, cfg)
    result = supervised_baseline(
        dataset,
        ckpt.encoder_config,
        train_idx,
        test_idx,
        epochs=cfg.eval.supervised_epochs,
        learning_rate=cfg.train.learning_rate,
        seed=cfg.seed,
    )
    report.add("", accuracy=result.accuracy, auprc=result.auprc)


EVALUATORS = {
    EvalMode.CLUSTER: _eval_cluster,
    EvalMode.CLASSIFY: _eval_classify,
    EvalMode.TRAJECTORY: _eval_trajectory,
    EvalMode.KNN_BASELINE: _eval_knn,
    EvalMode.SUPERVISED: _eval_supervised,
}


@cli.command(name="eval")
@click.argument("checkpoint_path", type=click.Path(path_type=Path))
@click.argument("dataset_path", type=click.Path(path_type=Path))
@click.option("--mode", type=click.Choice([m.value for m in EvalMode]), default=None, help="Evaluation to run (default cluster).")
@click.option("--out-dir", type=click.Path(file_okay=False, path_type=Path), required=True)
@click.option("--stride", type=int, default=None, help="Step between encoded windows (default: window size).")
@click.option("--k", "n_clusters", type=int, default=None, help="Number of k-means clusters.")
@click.option("--instance", type=int, default=None, help="Instance exported in trajectory mode.")
@click.option("--knn-k", type=int, default=None)
@click.option("--sample-cap", type=int, default=None, help="Instances used by the KNN baseline.")
@add_options(dataset_options)
@add_options(common_options)
@handle_errors
def eval_command(checkpoint_path, dataset_path, mode, out_dir, stride, n_clusters, instance, knn_k, sample_cap, from_csv, label_column, config_path, seed, threads) -> None:
    """Evaluate a trained encoder on a dataset."""
    cfg = _resolve_config(
        config_path,
        {
            "seed": seed,
            "threads": threads,
            "eval.mode": mode,
            "eval.stride": stride,
            "eval.n_clusters": n_clusters,
            "eval.trajectory_instance": instance,
            "eval.knn_k": knn_k,
            "eval.knn_sample_cap": sample_cap,
        },
    )
    ckpt = load_checkpoint(checkpoint_path)
    dataset = _load_dataset(dataset_path, from_csv, label_column)
    _check_compatible(ckpt, dataset)

    out_dir.mkdir(parents=True, exist_ok=True)
    report = EvalReport(mode=cfg.eval.mode.value)
    report.add("", seed=cfg.seed, delta=ckpt.encoder_config.window_size, encoding_size=ckpt.encoder_config.encoding_size)
    EVALUATORS[cfg.eval.mode](ckpt, dataset, cfg, ckpt.encoder_config.window_size, out_dir, report)
    report.write(out_dir)
    cfg.write(out_dir)
    click.echo(report.render(), nl=False)


@cli.command()
@click.argument("csv_path", type=click.Path(path_type=Path))
@click.option("--column", required=True, help="Numeric column to test.")
@click.option("--max-lag", type=click.IntRange(min=0), default=None, help="Largest lag searched by AIC.")
@handle_errors
def adf(csv_path: Path, column: str, max_lag: Optional[int]) -> None:
    """Augmented Dickey-Fuller test on one CSV column."""
    result = adf_test(read_csv_column(csv_path, column), max_lag=max_lag)
    click.echo(f"statistic={result.test_statistic:.6f}")
    click.echo(f"lag={result.chosen_lag}")
    click.echo(f"p_value={result.p_value:.6g}")
    click.echo(f"n_obs={result.n_obs_used}")
    for level, value in result.critical_values.items():
        click.echo(f"critical_{level}={value:.6f}")


@cli.command(name="sweep-w")
@click.argument("dataset_path", type=click.Path(path_type=Path))
@click.option("--out-dir", type=click.Path(file_okay=False, path_type=Path), required=True)
@click.option("--weights", default="0,0.05,0.1,0.2", show_default=True, help="Comma-separated PU weights.")
@add_options(dataset_options)
@add_options(training_options)
@add_options(common_options)
@handle_errors
def sweep_w(dataset_path, out_dir, weights, from_csv, label_column, delta, encoding_size, w, epochs, lr, batch_size, precision, config_path, seed, threads) -> None:
    """Retrain once per PU weight and tabulate loss and discriminator accuracy."""
    try:
        grid = [float(x) for x in weights.split(",") if x.strip()]
    except ValueError as e:
        raise click.BadParameter(f"--weights: {e}") from e
    cfg = _resolve_config(config_path, _training_overrides(seed, threads, delta, encoding_size, w, epochs, lr, batch_size, precision))
    dataset = _load_dataset(dataset_path, from_csv, label_column)

    if dataset.has_labels:
        click.echo(f"Weight suggested by the state distribution: {estimate_pu_weight(dataset.state_labels):.4f}")
    rows = sweep_weights(dataset, cfg.encoder_config(dataset.n_features), cfg.discriminator_config(), cfg.train_config(), grid)
    table = pd.DataFrame([asdict(r) for r in rows])
    out_dir.mkdir(parents=True, exist_ok=True)
    table.to_csv(out_dir / "sweep.csv", index=False)
    cfg.write(out_dir)
    click.echo(table.to_string(index=False))


def main() -> None:
    cli(prog_name="tnc")


if __name__ == "__main__":
    main()

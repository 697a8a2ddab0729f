#!/usr/bin/env python3
"""
Runs the end-to-end simulation experiments by driving the ``tnc`` CLI in subprocesses:
dataset generation, training, every evaluation mode, the window-size ablation
and the PU-weight ablation over three seeds.
"""

import os
import subprocess
import sys
import time
from pathlib import Path

import click
import numpy as np

from tnc.evaluation import read_metrics


def python_executable() -> str:
    # Prefer the project virtual environment when there is one
    venv_python = os.path.join(os.getcwd(), "venv", "bin", "python")
    return venv_python if os.path.exists(venv_python) else sys.executable


def run_tnc(*args: str, threads: int) -> None:
    cmd = [python_executable(), "-m", "tnc.cli", *args, "--threads", str(threads)]
    print("$ tnc " + " ".join(args))
    started = time.time()
    completed = subprocess.run(cmd, cwd=os.getcwd())
    if completed.returncode != 0:
        print(f"❌ tnc {args[0]} exited with code {completed.returncode}")
        sys.exit(completed.returncode)
    print(f"✅ tnc {args[0]} finished in {time.time() - started:.0f}s")


def train_and_probe(dataset: Path, out_dir: Path, threads: int, epochs: int, delta: int, w: float, seed: int) -> dict[str, str]:
    run_tnc(
        "train", str(dataset), "--out-dir", str(out_dir),
        "--delta", str(delta), "--w", str(w), "--epochs", str(epochs), "--seed", str(seed),
        threads=threads,
    )
    run_tnc("eval", str(out_dir / "checkpoint.tnck"), str(dataset), "--mode", "classify", "--out-dir", str(out_dir / "classify"), "--seed", str(seed), threads=threads)
    return read_metrics(out_dir / "classify" / "metrics.txt")


@click.command()
@click.option("--workdir", type=click.Path(file_okay=False, path_type=Path), default=Path("runs"), show_default=True)
@click.option("--instances", type=int, default=200, show_default=True)
@click.option("--epochs", type=int, default=10, show_default=True)
@click.option("--threads", type=int, default=os.cpu_count() or 1, show_default=True)
@click.option("--skip-ablations", is_flag=True, help="Only run the main δ=50 experiment.")
def main(workdir: Path, instances: int, epochs: int, threads: int, skip_ablations: bool) -> None:
    print("🚀 Temporal neighborhood coding: simulation experiments")
    print("=" * 60)
    workdir.mkdir(parents=True, exist_ok=True)
    dataset = workdir / "simulation.tncd"
    run_tnc("simulate", "--out", str(dataset), "--instances", str(instances), "--seed", "42", threads=threads)

    main_run = workdir / "delta50"
    train_and_probe(dataset, main_run, threads, epochs, delta=50, w=0.05, seed=42)
    checkpoint = str(main_run / "checkpoint.tnck")
    for mode in ("cluster", "trajectory", "knn-baseline", "supervised"):
        run_tnc("eval", checkpoint, str(dataset), "--mode", mode, "--out-dir", str(main_run / mode), threads=threads)

    summary = {f"{mode}.{key}": value for mode in ("classify", "cluster", "trajectory", "knn-baseline", "supervised")
               for key, value in read_metrics(main_run / mode / "metrics.txt").items()
               if key in ("accuracy", "auprc", "silhouette", "davies_bouldin", "raw.silhouette", "raw.davies_bouldin", "transition_hit_rate")}

    if not skip_ablations:
        small = train_and_probe(dataset, workdir / "delta10", threads, epochs, delta=10, w=0.05, seed=42)
        summary["ablation.delta10.accuracy"] = small["accuracy"]

        for w in (0.0, 0.05):
            accuracies = [
                float(train_and_probe(dataset, workdir / f"w{w}_seed{seed}", threads, epochs, delta=50, w=w, seed=seed)["accuracy"])
                for seed in (1, 2, 3)
            ]
            summary[f"ablation.w{w}.mean_accuracy"] = f"{np.mean(accuracies):.4f}"

    print("=" * 60)
    for key, value in summary.items():
        print(f"{key:40s} {value}")
    (workdir / "summary.txt").write_text("".join(f"{k}={v}\n" for k, v in summary.items()), encoding="utf-8")
    print("=" * 60)
    print(f"📄 Summary written to {workdir / 'summary.txt'}")


if __name__ == "__main__":
    main()

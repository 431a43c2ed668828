"""Library form of the CLI commands; each returns what it wrote."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import datastore as ds
from .. import neuralnet as nn
from .. import pod
from ..fedcore import (
    SocketClients,
    TrainingHistory,
    open_listener,
    run_client,
    run_config,
    train_centralized,
    train_federated,
)
from ..kssolver import KSSolver, random_initial_condition
from .config import ExperimentConfig

log = logging.getLogger(__name__)

METHODS = ("pod", "ae_central", "ae_federated")


def _outdir(config: ExperimentConfig) -> Path:
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# generate


def generate_splits(config: ExperimentConfig) -> ds.DatasetSplits:
    """Transient from a random state, then the production and test segments."""
    params = config.ks_params()
    solver = KSSolver(params)
    transient = solver.simulate(random_initial_condition(params), params.transient_start, 0.0)
    production = solver.simulate(transient.snapshots[-1], 0.0, config.t_production)
    test = solver.simulate(production.snapshots[-1], config.t_production, config.t_production + config.t_test)
    return ds.make_splits(production, test, config.train_fraction)


def cmd_generate(config: ExperimentConfig, out: str | None = None) -> Path:
    path = Path(out) if out else _outdir(config) / "dataset.ksds"
    path.parent.mkdir(parents=True, exist_ok=True)
    splits = generate_splits(config)
    ds.save_dataset(path, splits)
    n_prod = len(splits.train) + len(splits.validation)
    print(f"wrote {path}: {n_prod} train+validation samples "
          f"({len(splits.train)} train, {len(splits.validation)} validation), {len(splits.test)} test samples")
    return path


# ---------------------------------------------------------------------------
# pod


def pod_table(splits: ds.DatasetSplits, r_list) -> list[tuple[int, float, float]]:
    basis = pod.compute_pod(splits.train)
    return [
        (R, pod.reconstruction_mse(basis, splits.train, R), pod.reconstruction_mse(basis, splits.test, R))
        for R in r_list
    ]


def cmd_pod(config: ExperimentConfig, dataset, out: str | None = None) -> Path:
    splits = ds.load_dataset(dataset)
    rows = pod_table(splits, config.r_list)
    path = Path(out) if out else _outdir(config) / "pod.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["R", "train_mse", "test_mse"])
        for R, tr, te in rows:
            w.writerow([R, repr(tr), repr(te)])
    return path


# ---------------------------------------------------------------------------
# train


def train_model(config: ExperimentConfig, splits: ds.DatasetSplits, mode: str | None = None, clients=None):
    """Train one autoencoder on the scaled splits; returns ``(params, history)``."""
    mode = mode or config.mode
    spec = config.architecture()
    train = splits.scaler.apply(splits.train)
    val = splits.scaler.apply(splits.validation)
    if mode == "central":
        return train_centralized(config.central_config(), train, val, spec)
    cfg = config.fed_config()
    shards = None if clients is not None else ds.client_shards(splits, cfg.K, config.scheme, cfg.seed)
    return train_federated(cfg, shards, val, spec, train=train, clients=clients)


def checkpoint_name(mode: str, R: int) -> str:
    return f"{mode}_R{R}"


def cmd_train(config: ExperimentConfig, dataset, out_prefix: str | None = None) -> tuple[Path, Path]:
    splits = ds.load_dataset(dataset)
    clients = None
    if config.mode == "federated" and config.transport == "socket":
        listener = open_listener(config.listen)
        print(f"waiting for {config.K} clients on {config.listen}", flush=True)
        try:
            clients = SocketClients(
                listener, config.K, run_config(config.fed_config(), config.architecture(), config.scheme)
            )
        finally:
            listener.close()
    params, history = train_model(config, splits, clients=clients)
    prefix = Path(out_prefix) if out_prefix else _outdir(config) / checkpoint_name(config.mode, config.latent_dim)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    ckpt = prefix.with_name(prefix.name + ".fwts")
    hist = prefix.with_name(prefix.name + "_history.csv")
    nn.save_checkpoint(ckpt, params)
    # wall-clock timing would make reruns differ byte-wise
    history.to_csv(hist, include_timing=not config.deterministic)
    last = history.records[-1]
    print(f"{config.mode}: {len(history)} rounds, final train {last.train_loss:.6g}, val {last.val_loss:.6g}")
    return ckpt, hist


def cmd_client(addr: str, shard: int, dataset) -> int:
    rounds = run_client(addr, shard, dataset)
    print(f"client {shard}: trained {rounds} rounds")
    return rounds


# ---------------------------------------------------------------------------
# evaluate


@dataclass
class EvaluationReport:
    mse: dict[tuple[str, int], float] = field(default_factory=dict)
    error_fields: dict[tuple[str, int], np.ndarray] = field(default_factory=dict)

    def rows(self) -> list[tuple[str, int, float]]:
        order = {m: i for i, m in enumerate(METHODS)}
        keys = sorted(self.mse, key=lambda k: (k[1], order.get(k[0], len(order)), k[0]))
        return [(m, R, self.mse[(m, R)]) for m, R in keys]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["method", "R", "test_mse_physical"])
            for m, R, v in self.rows():
                w.writerow([m, R, repr(v)])


def error_field(truth, prediction) -> np.ndarray:
    return np.abs(np.asarray(truth) - np.asarray(prediction))


def ae_reconstruct_physical(params: nn.ModelParams, scaler: ds.Scaler, X) -> np.ndarray:
    spec = nn.ArchitectureSpec.from_layer_dims(params.shapes)
    return scaler.invert(nn.reconstruct(params, spec, scaler.apply(X)))


def evaluate_checkpoint(params: nn.ModelParams, splits: ds.DatasetSplits, split: str = "test", units: str = "physical") -> float:
    """Reconstruction MSE of a checkpoint on one split.

    ``units="scaled"`` reports the training-loss scale (standardized data).
    """
    X = getattr(splits, split)
    spec = nn.ArchitectureSpec.from_layer_dims(params.shapes)
    if units == "scaled":
        return nn.evaluate_loss(params, spec, splits.scaler.apply(X))
    return float(np.mean((ae_reconstruct_physical(params, splits.scaler, X) - X) ** 2))


def evaluate(splits: ds.DatasetSplits, checkpoints: dict[str, list[nn.ModelParams]], r_list=()) -> EvaluationReport:
    """Test-set MSE for POD and every checkpoint, plus absolute error fields.

    POD rows are added for each R in ``r_list`` and for every checkpoint's
    latent size.
    """
    report = EvaluationReport()
    basis = pod.compute_pod(splits.train)
    Rs = set(r_list)
    for method, plist in checkpoints.items():
        for params in plist:
            R = nn.ArchitectureSpec.from_layer_dims(params.shapes).latent_dim
            Rs.add(R)
            pred = ae_reconstruct_physical(params, splits.scaler, splits.test)
            report.mse[(method, R)] = float(np.mean((pred - splits.test) ** 2))
            report.error_fields[(method, R)] = error_field(splits.test, pred)
    for R in sorted(Rs):
        pred = pod.reconstruct(basis, pod.project(basis, splits.test, R), R)
        report.mse[("pod", R)] = float(np.mean((pred - splits.test) ** 2))
        report.error_fields[("pod", R)] = error_field(splits.test, pred)
    return report


def cmd_evaluate(config: ExperimentConfig, dataset, checkpoints: dict[str, list[str]], r_list=(), outdir=None) -> Path:
    splits = ds.load_dataset(dataset)
    loaded = {m: [nn.load_checkpoint(p) for p in paths] for m, paths in checkpoints.items()}
    report = evaluate(splits, loaded, r_list)
    out = Path(outdir) if outdir else _outdir(config)
    out.mkdir(parents=True, exist_ok=True)
    report.to_csv(out / "report.csv")
    for (m, R), err in report.error_fields.items():
        ds.save_matrix(out / f"{m}_R{R}_error.ksef", err)
    for m, R, v in report.rows():
        print(f"{m:>13s}  R={R:<3d} test MSE {v:.6g}")
    return out / "report.csv"


def load_history(path) -> TrainingHistory:
    return TrainingHistory.from_csv(path)

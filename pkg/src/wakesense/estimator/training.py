"""Mini-batch Adam training, evaluation metrics and the scalar fitness."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from ..dataset import LabeledDataset
from ..nn.layers import NonFiniteError, softmax
from ..nn.gradcheck import GradCheckReport, grad_check
from ..nn.params import ParameterSet, adam_step
from .losses import TaskWeights, combined_loss
from .model import ModelConfig, backward, forward, init_params

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainHyper:
    batch: int = 64
    lr: float = 1e-4
    epochs: int = 200
    seed: int = 0
    eval_every: int = 1  # 0 disables per-epoch test metrics

    def __post_init__(self):
        if self.batch < 1 or self.epochs < 0 or self.lr <= 0 or self.eval_every < 0:
            raise ValueError(f"invalid training hyperparameters: {self}")


class StateEstimate(NamedTuple):
    x_hat: np.ndarray
    speed_probs: np.ndarray
    dir_probs: np.ndarray


@dataclass
class Metrics:
    rmse_x: float
    acc_speed: float
    acc_dir: float
    confusion_speed: np.ndarray  # rows actual, columns predicted
    confusion_dir: np.ndarray
    n: int

    @property
    def fitness(self) -> float:
        return fitness(self)

    def to_dict(self) -> dict:
        return {"rmse_x": self.rmse_x, "acc_speed": self.acc_speed, "acc_dir": self.acc_dir,
                "confusion_speed": self.confusion_speed.tolist(),
                "confusion_dir": self.confusion_dir.tolist(), "n": self.n,
                "fitness": self.fitness}

    @classmethod
    def from_dict(cls, d: dict) -> "Metrics":
        return cls(d["rmse_x"], d["acc_speed"], d["acc_dir"], np.asarray(d["confusion_speed"]),
                   np.asarray(d["confusion_dir"]), d["n"])


@dataclass
class History:
    epochs: list[dict] = field(default_factory=list)

    def train_loss(self) -> np.ndarray:
        return np.array([e["train_loss"] for e in self.epochs])

    def to_list(self) -> list[dict]:
        return list(self.epochs)


class TrainingDiverged(RuntimeError):
    def __init__(self, message, last_good: ParameterSet, history: History):
        super().__init__(message)
        self.last_good = last_good
        self.history = history


def fitness(metrics: Metrics) -> float:
    """L1 norm of (1 - ACC_speed, 1 - ACC_dir, RMSE_x); lower is better."""
    return (1.0 - metrics.acc_speed) + (1.0 - metrics.acc_dir) + metrics.rmse_x


def score(x_hat, speed_pred, dir_pred, x, v_class, d_class, n_speeds=5, n_dirs=2) -> Metrics:
    x_hat, x = np.asarray(x_hat, float), np.asarray(x, float)
    if x.size == 0:
        raise ValueError("cannot score an empty set")
    cs = np.zeros((n_speeds, n_speeds), dtype=np.int64)
    cd = np.zeros((n_dirs, n_dirs), dtype=np.int64)
    np.add.at(cs, (np.asarray(v_class), np.asarray(speed_pred)), 1)
    np.add.at(cd, (np.asarray(d_class), np.asarray(dir_pred)), 1)
    return Metrics(float(np.sqrt(np.mean((x_hat - x) ** 2))),
                   float(np.trace(cs) / x.size), float(np.trace(cd) / x.size), cs, cd, int(x.size))


def estimate(params: ParameterSet, config: ModelConfig, X: np.ndarray,
             chunk: int = 512) -> StateEstimate:
    """Eval-mode estimates for standardised windows ``X`` (B, sl, N)."""
    xs, ps, pd = [], [], []
    for s in range(0, len(X), chunk):
        out, _ = forward(params, X[s:s + chunk], config, "eval")
        xs.append(out.x_hat)
        ps.append(softmax(out.speed_logits))
        pd.append(softmax(out.dir_logits))
    return StateEstimate(np.concatenate(xs), np.concatenate(ps), np.concatenate(pd))


def evaluate(params: ParameterSet, config: ModelConfig, dataset: LabeledDataset,
             idx: np.ndarray | None = None) -> Metrics:
    """Metrics on ``idx`` (the test split by default)."""
    idx = dataset.test_idx if idx is None else np.asarray(idx)
    if len(idx) == 0:
        raise ValueError("evaluation split is empty")
    est = estimate(params, config, dataset.inputs(idx))
    x, v, d = dataset.labels(idx)
    return score(est.x_hat, est.speed_probs.argmax(1), est.dir_probs.argmax(1), x, v, d,
                 config.n_speeds, config.n_dirs)


def train(dataset: LabeledDataset, config: ModelConfig, weights: TaskWeights = TaskWeights(),
          hyper: TrainHyper = TrainHyper(), params: ParameterSet | None = None,
          train_idx: np.ndarray | None = None,
          on_epoch: Callable[[dict], None] | None = None) -> tuple[ParameterSet, History]:
    """Fit the network with Adam on the weighted loss.

    Fully determined by ``hyper.seed`` (initialisation, shuffling and
    dropout draw from independent streams spawned from it).
    """
    idx = dataset.train_idx if train_idx is None else np.asarray(train_idx)
    if len(idx) == 0:
        raise ValueError("training split is empty")
    if dataset.sl != config.sl or dataset.n_sensors != config.n_sensors:
        raise ValueError(f"dataset windows ({dataset.sl}, {dataset.n_sensors}) do not match "
                         f"model config (sl={config.sl}, N={config.n_sensors})")
    init_ss, shuffle_ss, drop_ss = np.random.SeedSequence(hyper.seed).spawn(3)
    if params is None:
        params = init_params(config, np.random.default_rng(init_ss))
    shuffle_rng = np.random.default_rng(shuffle_ss)
    drop_rng = np.random.default_rng(drop_ss)
    X_all = dataset.inputs(idx)
    x_all, v_all, d_all = dataset.labels(idx)
    history = History()
    for epoch in range(hyper.epochs):
        last_good = params.copy()
        order = shuffle_rng.permutation(len(idx))
        sums = np.zeros(4)
        for s in range(0, len(order), hyper.batch):
            b = order[s:s + hyper.batch]
            try:
                out, cache = forward(params, X_all[b], config, "train", drop_rng, check=True)
                total, parts, douts = combined_loss(out, x_all[b], v_all[b], d_all[b], weights)
                if not np.isfinite(total):
                    raise NonFiniteError(f"loss is {total}")
            except NonFiniteError as exc:
                raise TrainingDiverged(f"epoch {epoch}: {exc}", last_good, history) from exc
            params.set_grads(backward(cache, config, *douts))
            adam_step(params, hyper.lr)
            sums += len(b) * np.array([total, *parts])
        sums /= len(order)
        rec = {"epoch": epoch + 1, "train_loss": sums[0], "l1": sums[1], "l2": sums[2],
               "l3": sums[3]}
        if hyper.eval_every and ((epoch + 1) % hyper.eval_every == 0 or epoch + 1 == hyper.epochs) \
                and len(dataset.test_idx):
            m = evaluate(params, config, dataset)
            rec.update(rmse_x=m.rmse_x, acc_speed=m.acc_speed, acc_dir=m.acc_dir,
                       fitness=m.fitness)
        history.epochs.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
        log.debug("epoch %d %s", epoch + 1, rec)
    return params, history



def check_network_gradients(config: ModelConfig, weights: TaskWeights = TaskWeights(0.7, 1.3, 2.0),
                            batch: int = 3, seed: int = 0,
                            tolerance: float = 1e-4) -> GradCheckReport:
    """Central-difference check of the full network and weighted loss.

    Runs in train mode with a frozen dropout mask; batch-norm running
    statistics are restored before every forward pass so each probe sees the
    same function.
    """
    rng = np.random.default_rng(seed)
    params = init_params(config, rng)
    X = rng.normal(size=(batch, config.sl, config.n_sensors))
    x = rng.uniform(-1.0, 1.0, batch)
    v = rng.integers(0, config.n_speeds, batch)
    d = rng.integers(0, config.n_dirs, batch)
    keep = 1.0 - config.dropout
    mask = (rng.random((batch, config.readout_width())) < keep) / keep
    stats = {k: params[k].copy() for k in params if not params.param(k).trainable}

    def loss_and_grads():
        for k, value in stats.items():
            params[k][...] = value
        out, cache = forward(params, X, config, "train", dropout_mask=mask)
        total, _, douts = combined_loss(out, x, v, d, weights)
        return total, backward(cache, config, *douts)

    return grad_check(loss_and_grads, params.values(trainable_only=True), tolerance=tolerance)

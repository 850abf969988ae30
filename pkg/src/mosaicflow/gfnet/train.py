"""Adam minibatch training with a plateau learning-rate schedule.

All epoch-level randomness (shuffling, collocation draws) derives from
``SeedSequence([seed, epoch])`` so a run resumed from a saved state follows the
same trajectory as an uninterrupted one.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import ContractError, NumericalError
from .loss import Batch, LossConfig, loss_and_gradients, make_batch, resample_collocation, uniform_collocation
from .model import MlpModel
from .ops import ModelPass

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 5e-4
    decay: float = 0.8
    patience: int = 200
    threshold: float = 1e-4
    lr_min: float = 1e-7
    batch_size: int = 64
    split: tuple = (9, 1)
    seed: int = 0
    max_epochs: int | None = None

    def __post_init__(self):
        if not 0 < self.lr_min < self.lr0:
            raise ContractError("need 0 < lr_min < lr0")
        if not 0 < self.decay < 1:
            raise ContractError("decay must lie in (0, 1)")
        if self.patience < 1 or self.batch_size < 1:
            raise ContractError("patience and batch_size must be positive")


class PlateauScheduler:
    """Multiply the rate by ``decay`` when the best loss improves by less than
    ``threshold`` (relative) over ``patience`` consecutive epochs."""

    def __init__(self, lr0, decay, patience, threshold, lr_min):
        self.lr = lr0
        self.decay = decay
        self.patience = patience
        self.threshold = threshold
        self.lr_min = lr_min
        self.reference = math.inf
        self.best = math.inf
        self.wait = 0

    @classmethod
    def from_config(cls, cfg: TrainConfig) -> "PlateauScheduler":
        return cls(cfg.lr0, cfg.decay, cfg.patience, cfg.threshold, cfg.lr_min)

    def step(self, loss: float) -> float:
        self.best = min(self.best, loss)
        if self.reference == math.inf or self.best < self.reference * (1.0 - self.threshold):
            self.reference = self.best
            self.wait = 0
        else:
            self.wait += 1
            if self.wait >= self.patience:
                self.lr *= self.decay
                self.reference = self.best
                self.wait = 0
        return self.lr

    @property
    def finished(self) -> bool:
        return self.lr <= self.lr_min * (1.0 + 1e-9)

    def state(self) -> dict:
        return {"lr": self.lr, "reference": self.reference, "best": self.best, "wait": self.wait}

    def load(self, state: dict) -> None:
        self.lr, self.reference, self.best, self.wait = (state[k] for k in ("lr", "reference", "best", "wait"))


def epochs_to_terminate(cfg: TrainConfig) -> int:
    """Epochs a fully plateaued run needs before the rate reaches ``lr_min``."""
    return cfg.patience * math.ceil(math.log(cfg.lr_min / cfg.lr0) / math.log(cfg.decay))


class Adam:
    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads, lr):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        out = []
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            out.append((p - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype))
        return out


@dataclass
class TrainState:
    """Everything needed to continue a run at ``epoch``."""

    epoch: int
    params: list
    adam_m: list
    adam_v: list
    adam_t: int
    scheduler: dict
    best_params: list
    best_val: float
    best_epoch: int
    history: list


@dataclass
class TrainResult:
    model: MlpModel
    history: list  # dicts: epoch, train_loss, val_loss, lr
    train_mae: float
    best_epoch: int
    best_val_loss: float
    train_index: np.ndarray
    val_index: np.ndarray
    state: TrainState | None = field(default=None, repr=False)


def split_indices(n: int, split=(9, 1), seed: int = 0):
    """Seeded train/validation split; a single sample validates on itself."""
    if n < 1:
        raise ContractError("dataset is empty")
    perm = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED])).permutation(n)
    n_val = int(round(n * split[1] / sum(split)))
    if n < 2:
        return perm, perm
    n_val = min(max(n_val, 1), n - 1)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def _dataset_arrays(dataset):
    if hasattr(dataset, "traces"):
        return np.asarray(dataset.traces(), dtype=float), np.asarray(dataset.data_arrays(), dtype=float)
    traces, data = dataset
    return np.atleast_2d(np.asarray(traces, dtype=float)), np.asarray(data, dtype=float)


def data_mae(model: MlpModel, traces, data) -> float:
    """Mean absolute error over the stored interior data points of each trace."""
    batch = make_batch(traces, data, include_boundary=False, edge_length=model.edge_length)
    mp = ModelPass(model, batch.traces, batch.points, pairs=(batch.row_trace, batch.row_point))
    return float(np.mean(np.abs(mp.u.astype(float) - batch.targets)))


def train(
    dataset,
    model: MlpModel,
    loss_config: LossConfig | None = None,
    config: TrainConfig | None = None,
    resume: TrainState | None = None,
    stop_after: int | None = None,
    callback=None,
) -> TrainResult:
    """Train ``model`` (used as the initial weights) on ``dataset``.

    ``dataset`` is a :class:`~mosaicflow.gp.Dataset` or a ``(traces, data)`` pair with
    data shaped (K, P, 3). ``stop_after`` ends the loop after that many epochs in
    this call and returns a resumable state; ``callback(epoch, record)`` sees every epoch.
    """
    loss_config = loss_config or LossConfig()
    config = config or TrainConfig()
    traces, data = _dataset_arrays(dataset)
    tr_idx, va_idx = split_indices(len(traces), config.split, config.seed)
    l = model.edge_length
    val_batch = make_batch(traces[va_idx], data[va_idx], edge_length=l)
    val_colloc_seed = np.random.SeedSequence([config.seed, 0xC011])
    val_batch = val_batch.with_collocation(uniform_collocation(loss_config.n_collocation, val_colloc_seed, l))
    tr_traces, tr_data = traces[tr_idx], data[tr_idx]

    sched = PlateauScheduler.from_config(config)
    params = [p.copy() for p in model.params()]
    opt = Adam(params)
    if resume is not None:
        epoch = resume.epoch
        params = [p.copy() for p in resume.params]
        opt.m = [p.copy() for p in resume.adam_m]
        opt.v = [p.copy() for p in resume.adam_v]
        opt.t = resume.adam_t
        sched.load(resume.scheduler)
        best_params, best_val, best_epoch = [p.copy() for p in resume.best_params], resume.best_val, resume.best_epoch
        history = list(resume.history)
    else:
        epoch = 0
        best_params, best_val, best_epoch = [p.copy() for p in params], math.inf, -1
        history = []

    ran = 0
    while not sched.finished:
        if config.max_epochs is not None and epoch >= config.max_epochs:
            break
        if stop_after is not None and ran >= stop_after:
            break
        current = model.with_params(params)
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, epoch]))
        colloc_seed = int(rng.integers(2**63))
        if loss_config.alpha > 0 and loss_config.n_collocation > 0:
            if loss_config.adaptive_collocation:
                colloc = resample_collocation(current, tr_traces[order_probe(rng, len(tr_idx))], loss_config.n_collocation, colloc_seed)
            else:
                colloc = uniform_collocation(loss_config.n_collocation, colloc_seed, l)
        else:
            colloc = None
        order = rng.permutation(len(tr_idx))
        total, weight = 0.0, 0
        for b, start in enumerate(range(0, len(order), config.batch_size)):
            pick = order[start : start + config.batch_size]
            batch = make_batch(tr_traces[pick], tr_data[pick], edge_length=l, collocation=colloc)
            res = loss_and_gradients(model.with_params(params), batch, loss_config)
            if not np.isfinite(res.total) or not all(np.all(np.isfinite(g)) for g in res.grads):
                raise NumericalError(f"non-finite loss at epoch {epoch}, batch {b}, lr {sched.lr:g}")
            params = opt.step(params, res.grads, sched.lr)
            total += res.total * batch.traces.shape[0]
            weight += batch.traces.shape[0]
        val = loss_and_gradients(model.with_params(params), val_batch, loss_config, need_grad=False).total
        if not np.isfinite(val):
            raise NumericalError(f"non-finite validation loss at epoch {epoch}, lr {sched.lr:g}")
        record = {"epoch": epoch, "train_loss": total / weight, "val_loss": val, "lr": sched.lr}
        history.append(record)
        if callback is not None:
            callback(epoch, record)
        if val < best_val:
            best_val, best_epoch, best_params = val, epoch, [p.copy() for p in params]
        sched.step(val)
        epoch += 1
        ran += 1

    state = TrainState(epoch, params, opt.m, opt.v, opt.t, sched.state(), best_params, best_val, best_epoch, history)
    best = model.with_params(best_params)
    fingerprint = {
        "seed": config.seed,
        "epochs": epoch,
        "best_epoch": best_epoch,
        "best_val_loss": best_val,
        "alpha": loss_config.alpha,
        "beta": loss_config.beta,
        "n_train": int(len(tr_idx)),
    }
    best = _with_fingerprint(best, fingerprint)
    mae = data_mae(best, traces[tr_idx], data[tr_idx])
    best = _with_fingerprint(best, {**fingerprint, "train_mae": mae})
    log.info("trained %d epochs, best val %.3e at epoch %d, train MAE %.3e", epoch, best_val, best_epoch, mae)
    return TrainResult(best, history, mae, best_epoch, best_val, tr_idx, va_idx, state)


def _with_fingerprint(model: MlpModel, fp: dict) -> MlpModel:
    return replace(model, fingerprint=dict(fp))



def order_probe(rng, n: int, k: int = 8) -> np.ndarray:
    """Up to ``k`` training traces that score the collocation candidates this epoch."""
    return np.sort(rng.choice(n, size=min(n, k), replace=False))

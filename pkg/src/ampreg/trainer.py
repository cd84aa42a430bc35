"""Mini-batch SGD with the five training modes: ERM, AMP, RMP, ADV, GNP.

One run is strictly sequential over batches; every random choice comes
from a named (seed, stream) pair, so rerunning a config reproduces the
record exactly. The perturbation modes only touch the gradient used for
the update; evaluation always happens at the unperturbed parameters.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import nncore, perturb
from .datasets import Dataset, SplitDataset
from .linalg import Rng
from .nncore import MlpSpec, PiecewiseToyLoss, toy_loss_and_grad
from .perturb import AttackSpec, BallSpec, InnerAscentSpec

MODES = ("ERM", "AMP", "RMP", "ADV", "GNP")


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"diverged at epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class TrainConfig:
    mode: str
    epochs: int
    batch_size: int
    outer_lr: float
    seed: int
    lr_decay: tuple[tuple[int, float], ...] = ()
    momentum: float = 0.0
    weight_decay: float = 1e-4
    inner: InnerAscentSpec | None = None  # AMP
    ball: BallSpec | None = None  # AMP / RMP
    attack: AttackSpec | None = None  # ADV
    gnp_zeta: float | None = None  # GNP
    gnp_epsilon: float | None = None  # GNP

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.epochs < 1 or self.batch_size < 1 or self.outer_lr <= 0:
            raise ValueError("need epochs >= 1, batch_size >= 1, outer_lr > 0")
        if self.mode == "AMP" and (self.inner is None or self.ball is None):
            raise ValueError("AMP needs inner and ball")
        if self.mode == "RMP" and self.ball is None:
            raise ValueError("RMP needs ball")
        if self.mode == "ADV" and self.attack is None:
            raise ValueError("ADV needs attack")
        if self.mode == "GNP" and (self.gnp_zeta is None or self.gnp_epsilon is None):
            raise ValueError("GNP needs gnp_zeta and gnp_epsilon")
        object.__setattr__(self, "lr_decay",
                           tuple((int(e), float(f)) for e, f in self.lr_decay))


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    train_err: float
    test_loss: float
    test_err: float
    wall_time_s: float


@dataclass
class RunRecord:
    config: TrainConfig
    epochs: list[EpochStats] = field(default_factory=list)
    final_theta: np.ndarray | None = None


def evaluate(spec: MlpSpec, theta: np.ndarray, ds: Dataset) -> tuple[float, float]:
    """(mean xent loss, top-1 error rate) at the given parameters."""
    logits = nncore.forward(spec, theta, ds.inputs)
    loss, _ = nncore.xent_loss(logits, ds.labels)
    err = float(np.mean(np.argmax(logits, axis=1) != ds.labels))
    return loss, err


def hvp_from_grad(grad_fn, theta: np.ndarray, v: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """H @ v by central differences of a gradient callable.

    The probe is taken along the unit direction and rescaled, so h stays a
    parameter-space length regardless of |v|.
    """
    v = np.asarray(v, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        return np.zeros_like(v)
    vhat = v / norm
    g_plus = np.asarray(grad_fn(theta + h * vhat), dtype=np.float64)
    g_minus = np.asarray(grad_fn(theta - h * vhat), dtype=np.float64)
    return (g_plus - g_minus) * (norm / (2.0 * h))


def hessian_vector_product(spec: MlpSpec, theta: np.ndarray, inputs, labels,
                           v: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """H @ v for the batch loss Hessian, via hvp_from_grad."""
    return hvp_from_grad(lambda t: nncore.grad(spec, t, inputs, labels), theta, v, h)


def gnp_penalty(grad_norm: float, zeta: float, eps: float) -> float:
    """Gradient-norm penalty value: zeta*|g|^2 inside the ball, eps*|g| outside."""
    if zeta * grad_norm <= eps:
        return zeta * grad_norm * grad_norm
    return eps * grad_norm


def gnp_grad_from(grad_fn, theta: np.ndarray, gnp_zeta: float, gnp_epsilon: float,
                  h: float = 1e-4) -> np.ndarray:
    """Gradient of loss-plus-gradient-norm-penalty for a gradient callable.

    With g the gradient at theta: inside the ball (|zeta*g| <= eps) the
    penalty gradient is 2*zeta*H*g, outside it is eps*H*g/|g|; H*g uses the
    finite-difference product above. Zero g means zero penalty gradient.
    """
    g = np.asarray(grad_fn(theta), dtype=np.float64)
    g_norm = float(np.linalg.norm(g))
    if g_norm == 0.0:
        return g
    hg = hvp_from_grad(grad_fn, theta, g, h=h)
    if gnp_zeta * g_norm <= gnp_epsilon:
        return g + 2.0 * gnp_zeta * hg
    return g + (gnp_epsilon / g_norm) * hg


def gnp_grad(spec: MlpSpec, theta: np.ndarray, inputs, labels,
             gnp_zeta: float, gnp_epsilon: float, h: float = 1e-4) -> np.ndarray:
    """gnp_grad_from applied to the batch loss."""
    return gnp_grad_from(lambda t: nncore.grad(spec, t, inputs, labels),
                         theta, gnp_zeta, gnp_epsilon, h=h)


def _lr_at(cfg: TrainConfig, epoch: int) -> float:
    lr = cfg.outer_lr
    for decay_epoch, factor in cfg.lr_decay:
        if epoch >= decay_epoch:
            lr *= factor
    return lr


def _batch_grad(spec: MlpSpec, theta: np.ndarray, xb, yb, cfg: TrainConfig,
                rmp_gen) -> np.ndarray:
    if cfg.mode == "AMP" and cfg.ball.epsilon > 0.0:
        delta = perturb.amp_inner_ascent(spec, theta, xb, yb, cfg.inner, cfg.ball)
        return nncore.grad(spec, theta + delta, xb, yb)
    if cfg.mode == "RMP" and cfg.ball.epsilon > 0.0:
        delta = perturb.rmp_sample(len(theta), cfg.ball, rmp_gen)
        return nncore.grad(spec, theta + delta, xb, yb)
    if cfg.mode == "ADV":
        xb = perturb.attack_inputs(spec, theta, xb, yb, cfg.attack)
        return nncore.grad(spec, theta, xb, yb)
    if cfg.mode == "GNP":
        return gnp_grad(spec, theta, xb, yb, cfg.gnp_zeta, cfg.gnp_epsilon)
    return nncore.grad(spec, theta, xb, yb)


def train(spec: MlpSpec, data: SplitDataset, cfg: TrainConfig,
          theta0: np.ndarray | None = None) -> RunRecord:
    """Run the configured mode; returns full per-epoch history and theta*.

    Epoch metrics are full train/test evaluations at the epoch-end
    parameters. A non-finite train loss aborts the run.
    """
    theta = init_theta(spec, cfg.seed) if theta0 is None else np.array(theta0, dtype=np.float64)
    velocity = np.zeros_like(theta)
    rmp_gen = Rng(cfg.seed).with_stream("rmp").generator()
    record = RunRecord(config=cfg)
    n = data.train.n

    for epoch in range(1, cfg.epochs + 1):
        started = time.perf_counter()
        lr = _lr_at(cfg, epoch)
        perm = Rng(cfg.seed).with_stream("shuffle", epoch).permutation(n)
        for lo in range(0, n, cfg.batch_size):
            idx = perm[lo : lo + cfg.batch_size]
            xb = data.train.inputs[idx]
            yb = data.train.labels[idx]
            g = _batch_grad(spec, theta, xb, yb, cfg, rmp_gen)
            if cfg.weight_decay != 0.0:
                g = g + cfg.weight_decay * theta
            velocity = cfg.momentum * velocity + g
            theta = theta - lr * velocity

        if not np.all(np.isfinite(theta)):
            raise TrainingDiverged(epoch)
        train_loss, train_err = evaluate(spec, theta, data.train)
        if not np.isfinite(train_loss):
            raise TrainingDiverged(epoch)
        test_loss, test_err = evaluate(spec, theta, data.test)
        record.epochs.append(EpochStats(epoch, train_loss, train_err, test_loss, test_err,
                                        time.perf_counter() - started))
    record.final_theta = theta
    return record


def init_theta(spec: MlpSpec, seed: int) -> np.ndarray:
    """Seed-deterministic starting parameters (the "init" stream)."""
    return nncore.init_params(spec, Rng(seed).with_stream("init"))


def toy_worst_perturbation(toy: PiecewiseToyLoss, theta: float, eps: float) -> float:
    """Exact maximizer of the toy loss over [theta - eps, theta + eps].

    The loss is piecewise linear in the perturbation, so the max sits at
    an interval endpoint; a one-sided gradient ascent cannot see past the
    kink, hence the inner problem is solved exactly here.
    """
    lo, _ = toy_loss_and_grad(toy, theta - eps)
    hi, _ = toy_loss_and_grad(toy, theta + eps)
    return -eps if lo > hi else eps


def train_toy(toy: PiecewiseToyLoss, mode: str, eps: float, steps: int,
              lr0: float, lr_decay: tuple[tuple[int, float], ...],
              theta0: float = 1.0) -> list[float]:
    """Scalar training loop for the toy loss; returns the iterate history."""
    if mode not in ("ERM", "AMP"):
        raise ValueError("toy training supports ERM and AMP")
    theta = theta0
    history = [theta]
    for k in range(1, steps + 1):
        lr = lr0
        for decay_step, factor in lr_decay:
            if k >= decay_step:
                lr *= factor
        delta = toy_worst_perturbation(toy, theta, eps) if mode == "AMP" else 0.0
        _, g = toy_loss_and_grad(toy, theta + delta)
        theta -= lr * g
        history.append(theta)
    return history

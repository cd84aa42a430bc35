"""Flatness, calibration, sweep, and robustness measurement.

Landscape scans move along filter-normalized random directions so curves
from differently scaled models are comparable. Sharpness is the worst
loss rise inside an eps-ball at the trained parameters; the Hessian top
eigenvalue is the companion curvature number.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import nncore, perturb, trainer
from .datasets import Dataset, SplitDataset
from .linalg import Rng
from .nncore import MlpSpec
from .perturb import AttackSpec, BallSpec, InnerAscentSpec
from .trainer import TrainConfig


@dataclass(frozen=True)
class LandscapeScan1D:
    direction: np.ndarray
    alphas: np.ndarray
    losses_train: np.ndarray
    losses_test: np.ndarray


@dataclass(frozen=True)
class LandscapeScan2D:
    dx: np.ndarray
    dy: np.ndarray
    grid_x: np.ndarray
    grid_y: np.ndarray
    losses: np.ndarray  # (len(grid_x), len(grid_y))


@dataclass(frozen=True)
class CalibrationReport:
    bins: int
    counts: np.ndarray
    accuracies: np.ndarray
    confidences: np.ndarray
    ece: float


def filter_normalized_direction(spec: MlpSpec, theta: np.ndarray, rng: Rng) -> np.ndarray:
    """Random direction rescaled row-wise to the parameter row norms.

    A "row" is one output neuron's weight row together with its bias, the
    dense analogue of a conv filter. Rows of theta with zero norm produce
    zero direction rows.
    """
    theta = np.asarray(theta, dtype=np.float64)
    d = rng.standard_normal(len(theta))
    out = np.zeros_like(d)
    pos = 0
    for fan_in, fan_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        w_len = fan_in * fan_out
        w_theta = theta[pos : pos + w_len].reshape(fan_out, fan_in)
        b_theta = theta[pos + w_len : pos + w_len + fan_out]
        w_d = d[pos : pos + w_len].reshape(fan_out, fan_in)
        b_d = d[pos + w_len : pos + w_len + fan_out]
        for j in range(fan_out):
            target = np.sqrt(np.sum(w_theta[j] ** 2) + b_theta[j] ** 2)
            got = np.sqrt(np.sum(w_d[j] ** 2) + b_d[j] ** 2)
            scale = target / got if got > 0 else 0.0
            out[pos + j * fan_in : pos + (j + 1) * fan_in] = w_d[j] * scale
            out[pos + w_len + j] = b_d[j] * scale
        pos += w_len + fan_out
    return out


def landscape_1d(spec: MlpSpec, theta: np.ndarray, data: SplitDataset,
                 direction: np.ndarray, alphas) -> LandscapeScan1D:
    """Train/test loss along theta + alpha * direction."""
    alphas = np.asarray(alphas, dtype=np.float64)
    losses_train = np.array([trainer.evaluate(spec, theta + a * direction, data.train)[0]
                             for a in alphas])
    losses_test = np.array([trainer.evaluate(spec, theta + a * direction, data.test)[0]
                            for a in alphas])
    return LandscapeScan1D(np.asarray(direction), alphas, losses_train, losses_test)


def landscape_2d(spec: MlpSpec, theta: np.ndarray, ds: Dataset,
                 dx: np.ndarray, dy: np.ndarray, grid_x, grid_y) -> LandscapeScan2D:
    """Loss surface over theta + gx*dx + gy*dy on the given dataset."""
    grid_x = np.asarray(grid_x, dtype=np.float64)
    grid_y = np.asarray(grid_y, dtype=np.float64)
    losses = np.zeros((len(grid_x), len(grid_y)))
    for i, gx in enumerate(grid_x):
        for j, gy in enumerate(grid_y):
            losses[i, j] = trainer.evaluate(spec, theta + gx * dx + gy * dy, ds)[0]
    return LandscapeScan2D(np.asarray(dx), np.asarray(dy), grid_x, grid_y, losses)


def worst_rise(loss_fn, grad_fn, dim: int, eps: float,
               inner: InnerAscentSpec | None = None) -> float:
    """Worst loss increase within the eps-ball, by normalized-step ascent.

    Default budget: 50 steps of length eps/50, i.e. just enough path to
    reach the sphere. Steps are unit-normalized so the ascent leaves even
    an exact stationary point (deterministic random fallback direction).
    """
    if eps == 0.0:
        return 0.0
    if inner is None:
        inner = InnerAscentSpec(zeta=eps / 50.0, n_steps=50)
    delta = perturb.ascend_within_ball(
        grad_fn, dim, inner, BallSpec(eps),
        normalized=True, tiebreak_rng=Rng(0).with_stream("sharpness"))
    return float(loss_fn(delta) - loss_fn(np.zeros(dim)))


def sharpness(spec: MlpSpec, theta: np.ndarray, ds: Dataset, eps: float,
              inner: InnerAscentSpec | None = None) -> float:
    """Worst rise of the full-dataset loss within the eps-ball at theta."""
    theta = np.asarray(theta, dtype=np.float64)

    def loss_fn(delta):
        return trainer.evaluate(spec, theta + delta, ds)[0]

    def grad_fn(delta):
        return nncore.grad(spec, theta + delta, ds.inputs, ds.labels)

    return worst_rise(loss_fn, grad_fn, len(theta), eps, inner)


def power_iteration_top_eig(hvp_fn, dim: int, iters: int, rng: Rng | None = None) -> float:
    """Rayleigh quotient after `iters` power-iteration steps on hvp_fn."""
    if iters < 50:
        raise ValueError("iters must be >= 50")
    gen = (rng if rng is not None else Rng(0).with_stream("power-iteration")).generator()
    v = gen.standard_normal(dim)
    v /= np.linalg.norm(v)
    estimate = 0.0
    for _ in range(iters):
        hv = np.asarray(hvp_fn(v), dtype=np.float64)
        norm = float(np.linalg.norm(hv))
        if norm == 0.0:
            return estimate
        estimate = float(v @ hv)
        v = hv / norm
    return estimate


def hessian_top_eig(spec: MlpSpec, theta: np.ndarray, ds: Dataset, iters: int = 60) -> float:
    """Top Hessian eigenvalue of the dataset loss via finite-difference HVPs."""
    theta = np.asarray(theta, dtype=np.float64)
    return power_iteration_top_eig(
        lambda v: trainer.hessian_vector_product(spec, theta, ds.inputs, ds.labels, v),
        len(theta), iters)


def ece(confidences, correct, bins: int) -> CalibrationReport:
    """Expected calibration error with equal bins ((m-1)/M, m/M].

    confidences must lie in (0, 1]; empty bins contribute nothing.
    """
    conf = np.asarray(confidences, dtype=np.float64)
    hit = np.asarray(correct, dtype=bool)
    if bins < 1:
        raise ValueError("bins must be >= 1")
    if conf.shape != hit.shape or conf.ndim != 1:
        raise ValueError("confidences/correct shape mismatch")
    if np.any(conf <= 0.0) or np.any(conf > 1.0):
        raise ValueError("confidences must be in (0, 1]")

    edges = np.arange(bins + 1) / bins
    idx = np.searchsorted(edges, conf, side="left") - 1
    counts = np.bincount(idx, minlength=bins)
    acc = np.zeros(bins)
    avg_conf = np.zeros(bins)
    nonzero = counts > 0
    acc[nonzero] = np.bincount(idx, weights=hit.astype(float), minlength=bins)[nonzero] / counts[nonzero]
    avg_conf[nonzero] = np.bincount(idx, weights=conf, minlength=bins)[nonzero] / counts[nonzero]
    total = float(np.sum(counts * np.abs(acc - avg_conf))) / len(conf)
    return CalibrationReport(bins, counts, acc, avg_conf, total)


def model_calibration(spec: MlpSpec, theta: np.ndarray, ds: Dataset, bins: int) -> CalibrationReport:
    """Calibration of a classifier's winning softmax scores on a dataset."""
    probs = nncore.softmax(nncore.forward(spec, theta, ds.inputs))
    preds = np.argmax(probs, axis=1)
    conf = probs[np.arange(ds.n), preds]
    return ece(conf, preds == ds.labels, bins)


DEFAULT_SWEEP_GRID = tuple([0.0] + list(np.logspace(np.log10(0.005), np.log10(1.0), 13)))


@dataclass(frozen=True)
class SweepRow:
    epsilon: float
    train_risk: float
    test_risk: float
    seed: int


def epsilon_sweep(spec: MlpSpec, data: SplitDataset, base_cfg: TrainConfig,
                  eps_grid=DEFAULT_SWEEP_GRID) -> list[SweepRow]:
    """Unregularized train/test risk of the trained model per ball radius.

    The radius-0 row trains in ERM mode, making it the exact reference run.
    """
    if base_cfg.mode != "AMP":
        raise ValueError("base_cfg.mode must be AMP")
    rows = []
    for eps in eps_grid:
        if eps == 0.0:
            cfg = replace(base_cfg, mode="ERM")
        else:
            cfg = replace(base_cfg, ball=BallSpec(float(eps)))
        record = trainer.train(spec, data, cfg)
        train_risk, _ = trainer.evaluate(spec, record.final_theta, data.train)
        test_risk, _ = trainer.evaluate(spec, record.final_theta, data.test)
        rows.append(SweepRow(float(eps), train_risk, test_risk, base_cfg.seed))
    return rows


def robustness_eval(spec: MlpSpec, theta: np.ndarray, ds: Dataset, attack: AttackSpec) -> float:
    """Top-1 error on adversarially attacked inputs at fixed parameters."""
    adv = perturb.attack_inputs(spec, theta, ds.inputs, ds.labels, attack)
    preds = nncore.predict(spec, theta, adv)
    return float(np.mean(preds != ds.labels))

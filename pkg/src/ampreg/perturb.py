"""Norm-ball projection, the adversarial inner ascent, random model
perturbation, and input-space attacks.

The model-perturbation ball is L2; the input-attack ball is L-infinity.
Those two choices are intentional and must not be mixed up.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nncore
from .linalg import Rng
from .nncore import MlpSpec


@dataclass(frozen=True)
class BallSpec:
    """L2 ball of radius epsilon around the origin of perturbation space."""

    epsilon: float

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")


@dataclass(frozen=True)
class InnerAscentSpec:
    zeta: float
    n_steps: int

    def __post_init__(self):
        if self.zeta <= 0 or self.n_steps < 1:
            raise ValueError("need zeta > 0 and n_steps >= 1")


@dataclass(frozen=True)
class AttackSpec:
    kind: str  # "FGSM" or "PGD"
    radius: float
    step: float | None = None  # PGD only
    steps: int | None = None  # PGD only

    def __post_init__(self):
        if self.kind not in ("FGSM", "PGD"):
            raise ValueError("kind must be FGSM or PGD")
        if self.radius < 0:
            raise ValueError("radius must be >= 0")
        if self.kind == "PGD":
            if self.step is None or self.steps is None or self.steps < 1:
                raise ValueError("PGD needs step and steps >= 1")


def project_to_ball(delta: np.ndarray, ball: BallSpec) -> np.ndarray:
    """Rescale onto the sphere only when strictly outside the ball.

    Rescaling repeats if rounding leaves the result a ulp outside, so the
    projection is exactly idempotent.
    """
    delta = np.asarray(delta, dtype=np.float64)
    norm = float(np.linalg.norm(delta))
    while norm > ball.epsilon:
        delta = delta * (ball.epsilon / norm)
        new_norm = float(np.linalg.norm(delta))
        if new_norm >= norm:
            break
        norm = new_norm
    return delta


def ascend_within_ball(grad_fn, dim: int, inner: InnerAscentSpec, ball: BallSpec,
                       normalized: bool = False, tiebreak_rng: Rng | None = None) -> np.ndarray:
    """Gradient ascent on delta |-> loss(base + delta), projected to the ball.

    grad_fn(delta) must return the loss gradient at the perturbed point.
    With normalized=True each step has length zeta regardless of gradient
    scale (used for sharpness measurement); a zero gradient then falls back
    to a fixed random direction so the ascent can leave an exact minimum.
    """
    delta = np.zeros(dim)
    for _ in range(inner.n_steps):
        g = np.asarray(grad_fn(delta), dtype=np.float64)
        if normalized:
            norm = float(np.linalg.norm(g))
            if norm == 0.0:
                rng = tiebreak_rng if tiebreak_rng is not None else Rng(0).with_stream("ascent-tiebreak")
                g = rng.standard_normal(dim)
                norm = float(np.linalg.norm(g))
            step = inner.zeta * g / norm
        else:
            step = inner.zeta * g
        delta = project_to_ball(delta + step, ball)
    return delta


def amp_inner_ascent(spec: MlpSpec, theta: np.ndarray, inputs, labels,
                     inner: InnerAscentSpec, ball: BallSpec) -> np.ndarray:
    """N steps of ascend-then-project on the batch loss, starting at zero.

    Returns the model perturbation whose gradient step the outer update
    will use; its norm never exceeds the ball radius.
    """
    theta = np.asarray(theta, dtype=np.float64)
    return ascend_within_ball(
        lambda delta: nncore.grad(spec, theta + delta, inputs, labels),
        len(theta), inner, ball)


def rmp_sample(dim: int, ball: BallSpec, gen: np.random.Generator) -> np.ndarray:
    """Uniform draw from the ball: spherical direction, radius eps * u^(1/dim)."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if ball.epsilon == 0.0:
        return np.zeros(dim)
    direction = gen.standard_normal(dim)
    norm = float(np.linalg.norm(direction))
    while norm == 0.0:  # essentially impossible, but keep the draw well defined
        direction = gen.standard_normal(dim)
        norm = float(np.linalg.norm(direction))
    radius = ball.epsilon * float(gen.random()) ** (1.0 / dim)
    return direction * (radius / norm)


def _as_batch(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


def fgsm_attack(spec: MlpSpec, theta: np.ndarray, x, y, radius: float) -> np.ndarray:
    """One sign-gradient step of size radius per input coordinate.

    Accepts a single example (1-D x, scalar y) or a batch (2-D x, label
    vector); the per-example gradient signs are identical either way.
    """
    xb, single = _as_batch(x)
    yb = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if radius == 0.0:
        out = xb.copy()
    else:
        g = nncore.input_grad(spec, theta, xb, yb)
        out = xb + radius * np.sign(g)
    return out[0] if single else out


def pgd_attack(spec: MlpSpec, theta: np.ndarray, x, y, attack: AttackSpec) -> np.ndarray:
    """Iterated sign steps clipped to the L-inf ball around the clean input."""
    if attack.kind != "PGD":
        raise ValueError("attack.kind must be PGD")
    xb, single = _as_batch(x)
    yb = np.atleast_1d(np.asarray(y, dtype=np.int64))
    lo = xb - attack.radius
    hi = xb + attack.radius
    adv = xb.copy()
    for _ in range(attack.steps):
        g = nncore.input_grad(spec, theta, adv, yb)
        adv = np.clip(adv + attack.step * np.sign(g), lo, hi)
    return adv[0] if single else adv


def attack_inputs(spec: MlpSpec, theta: np.ndarray, inputs, labels, attack: AttackSpec) -> np.ndarray:
    """Apply the configured attack to a whole batch."""
    if attack.kind == "FGSM":
        return fgsm_attack(spec, theta, inputs, labels, attack.radius)
    return pgd_attack(spec, theta, inputs, labels, attack)

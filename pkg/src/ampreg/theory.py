"""Inverted-Gaussian well testbed for the flat-minima analysis.

A well is the surface C - A*exp(-(t-mu)^T kappa^{-1} (t-mu)/2). The key
facts exercised here: the minimum of the eps-ball-max of that surface is
attained at the well center and equals C - A*exp(-eps^2/(2*sigma^2)) with
sigma^2 the smallest eigenvalue of kappa; and comparing two wells under
that quantity yields an explicit (beta, r) region where the flatter but
shallower well wins.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import Rng, spd_eigendecomp


@dataclass
class GaussianSurface:
    """Inverted Gaussian well: value C - A at the center, C far away."""

    mu: np.ndarray
    kappa: np.ndarray
    amplitude: float  # A > 0
    offset: float  # C
    eigvals: np.ndarray = field(init=False, repr=False)
    eigvecs: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.kappa = np.asarray(self.kappa, dtype=np.float64)
        if self.amplitude <= 0:
            raise ValueError("amplitude must be > 0")
        self.eigvals, self.eigvecs = spd_eigendecomp(self.kappa)

    @property
    def dim(self) -> int:
        return len(self.mu)

    def _quad(self, deltas: np.ndarray) -> np.ndarray:
        """(t-mu)^T kappa^{-1} (t-mu) for rows t-mu, via the eigenbasis."""
        proj = deltas @ self.eigvecs
        return np.sum(proj * proj / self.eigvals, axis=-1)

    def value(self, theta) -> float:
        theta = np.asarray(theta, dtype=np.float64)
        q = self._quad(theta - self.mu)
        return float(self.offset - self.amplitude * np.exp(-0.5 * q))

    def value_many(self, thetas: np.ndarray) -> np.ndarray:
        q = self._quad(np.asarray(thetas, dtype=np.float64) - self.mu)
        return self.offset - self.amplitude * np.exp(-0.5 * q)

    def grad_many(self, thetas: np.ndarray) -> np.ndarray:
        """Gradient rows of the surface at each row of thetas."""
        diffs = np.asarray(thetas, dtype=np.float64) - self.mu
        proj = diffs @ self.eigvecs
        kinv = (proj / self.eigvals) @ self.eigvecs.T
        q = np.sum(proj * proj / self.eigvals, axis=-1)
        return self.amplitude * np.exp(-0.5 * q)[:, None] * kinv

    def min_value(self) -> float:
        """Surface minimum, attained at the center."""
        return self.offset - self.amplitude


def perturbed_min_closed(s: GaussianSurface, eps: float) -> float:
    """Minimum over theta of the eps-ball max of the surface (closed form).

    Depends on kappa only through its smallest eigenvalue: the worst
    perturbation at the center points along the narrowest axis of the well.
    """
    if eps < 0:
        raise ValueError("eps must be >= 0")
    sigma_sq = float(s.eigvals[0])
    return s.offset - s.amplitude * np.exp(-eps * eps / (2.0 * sigma_sq))


def ball_max_numeric(s: GaussianSurface, theta, eps: float,
                     n_steps: int = 500, n_random: int = 16) -> float:
    """Max of the surface over the eps-ball at theta, by multi-start ascent.

    Restarts: random sphere directions plus +-eigenvector directions at
    radius eps (32 starts in total); each runs projected gradient ascent
    with step eps/100 for n_steps steps. Returns the best value seen.
    """
    theta = np.asarray(theta, dtype=np.float64)
    if eps == 0.0:
        return s.value(theta)
    k = s.dim

    eig_dirs = []
    for i in range(k):
        q = s.eigvecs[:, i]
        eig_dirs.append(q)
        eig_dirs.append(-q)
    eig_dirs = np.asarray(eig_dirs[: 2 * min(k, 8)])

    n_rand = max(n_random, 32 - len(eig_dirs))
    raw = Rng(17, 0).with_stream("ball-max", k).standard_normal(n_rand * k).reshape(n_rand, k)
    rand_dirs = raw / np.linalg.norm(raw, axis=1, keepdims=True)

    deltas = np.vstack([eig_dirs, rand_dirs]) * eps
    best = float(np.max(s.value_many(theta + deltas)))
    best = max(best, s.value(theta))  # zero perturbation is always feasible

    step = eps / 100.0
    for _ in range(n_steps):
        g = s.grad_many(theta + deltas)
        deltas = deltas + step * g
        norms = np.linalg.norm(deltas, axis=1, keepdims=True)
        scale = np.where(norms > eps, eps / np.maximum(norms, 1e-300), 1.0)
        deltas = deltas * scale
        best = max(best, float(np.max(s.value_many(theta + deltas))))
    return best


def swap_condition(a1: float, a2: float, c1: float, c2: float,
                   sigma1_sq: float, sigma2_sq: float, eps: float) -> bool:
    """Whether well 1 is deeper yet loses to well 2 under the ball-max loss.

    True iff A1 - A2 > C1 - C2 > A1*exp(-eps^2/2sigma1^2) - A2*exp(-eps^2/2sigma2^2).
    """
    if a1 <= 0 or a2 <= 0 or sigma1_sq <= 0 or sigma2_sq <= 0:
        raise ValueError("amplitudes and variances must be positive")
    lhs = a1 - a2
    mid = c1 - c2
    rhs = a1 * np.exp(-eps * eps / (2.0 * sigma1_sq)) - a2 * np.exp(-eps * eps / (2.0 * sigma2_sq))
    return bool(lhs > mid > rhs)


@dataclass(frozen=True)
class RegionParams:
    """Two-well comparison parameters: depth ratio beta, flatness ratio r."""

    beta: float
    r: float
    eps: float
    sigma1_sq: float

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise ValueError("beta must be in (0, 1)")
        if self.r <= 0 or self.eps < 0 or self.sigma1_sq <= 0:
            raise ValueError("need r > 0, eps >= 0, sigma1_sq > 0")


def in_operational_region(p: RegionParams) -> bool:
    """Whether minimizing the ball-max loss prefers the shallower, flatter well.

    beta > exp(-eps^2 / 2 sigma1^2) and r > 1 / (1 + (2 sigma1^2/eps^2) log beta).
    """
    if p.eps == 0.0:
        return False
    ratio = p.eps * p.eps / (2.0 * p.sigma1_sq)
    if p.beta <= np.exp(-ratio):
        return False
    return p.r > 1.0 / (1.0 + np.log(p.beta) / ratio)


@dataclass
class DoubleWell:
    """Two well-separated inverted-Gaussian minima on a shared surface.

    Separation >= 10 * (eps + largest std) keeps each well effectively
    Gaussian within radius 2*eps of its center, so per-well closed forms
    apply to the combined surface.
    """

    s1: GaussianSurface
    s2: GaussianSurface
    eps: float

    def __post_init__(self):
        gap = float(np.linalg.norm(self.s1.mu - self.s2.mu))
        largest_std = float(np.sqrt(max(self.s1.eigvals[-1], self.s2.eigvals[-1])))
        if gap < 10.0 * (self.eps + largest_std):
            raise ValueError("wells are not separated enough to be locally Gaussian")

    def value(self, theta) -> float:
        t = np.asarray(theta, dtype=np.float64)
        return float(self.offset_total()
                     - self.s1.amplitude * np.exp(-0.5 * self.s1._quad(t - self.s1.mu))
                     - self.s2.amplitude * np.exp(-0.5 * self.s2._quad(t - self.s2.mu)))

    def offset_total(self) -> float:
        return self.s1.offset  # wells share C by construction

    def value_many(self, thetas: np.ndarray) -> np.ndarray:
        t = np.asarray(thetas, dtype=np.float64)
        return (self.offset_total()
                - self.s1.amplitude * np.exp(-0.5 * self.s1._quad(t - self.s1.mu))
                - self.s2.amplitude * np.exp(-0.5 * self.s2._quad(t - self.s2.mu)))

    def grad_many(self, thetas: np.ndarray) -> np.ndarray:
        return self.s1.grad_many(thetas) + self.s2.grad_many(thetas)


def make_double_well(p: RegionParams, a1: float = 1.0, c: float = 1.0) -> DoubleWell:
    """Dimension-2 isotropic double well realizing the given (beta, r)."""
    std1 = float(np.sqrt(p.sigma1_sq))
    std2 = float(np.sqrt(p.r * p.sigma1_sq))
    gap = 10.0 * (p.eps + max(std1, std2)) * 1.5
    s1 = GaussianSurface(np.array([0.0, 0.0]), p.sigma1_sq * np.eye(2), a1, c)
    s2 = GaussianSurface(np.array([gap, 0.0]), p.r * p.sigma1_sq * np.eye(2), p.beta * a1, c)
    return DoubleWell(s1, s2, p.eps)


@dataclass
class RegionReport:
    betas: np.ndarray
    rs: np.ndarray
    in_region: np.ndarray  # bool, shape (len(betas), len(rs))
    amp_prefers_well2: np.ndarray  # bool, same shape
    boundary_excluded: np.ndarray  # bool, same shape
    mismatches: list[tuple[float, float]]


def verify_region_grid(sigma1_sq: float, eps: float, betas, rs,
                       boundary_band: float = 1e-9) -> RegionReport:
    """Check the region predicate against closed-form well comparison.

    Wells share C, A2 = beta*A1, sigma2^2 = r*sigma1^2 (isotropic, dim 2).
    Grid points whose per-well minima differ by <= boundary_band are
    excluded: the sign there is float noise by construction.
    """
    betas = np.asarray(betas, dtype=np.float64)
    rs = np.asarray(rs, dtype=np.float64)
    in_region = np.zeros((len(betas), len(rs)), dtype=bool)
    prefers = np.zeros_like(in_region)
    excluded = np.zeros_like(in_region)
    mismatches: list[tuple[float, float]] = []

    a1 = 1.0
    for i, beta in enumerate(betas):
        for j, r in enumerate(rs):
            p = RegionParams(beta=float(beta), r=float(r), eps=eps, sigma1_sq=sigma1_sq)
            dw = make_double_well(p, a1=a1)
            m1 = perturbed_min_closed(dw.s1, eps)
            m2 = perturbed_min_closed(dw.s2, eps)
            in_region[i, j] = in_operational_region(p)
            prefers[i, j] = m2 < m1
            if abs(m1 - m2) <= boundary_band:
                excluded[i, j] = True
            elif in_region[i, j] != prefers[i, j]:
                mismatches.append((float(beta), float(r)))
    return RegionReport(betas, rs, in_region, prefers, excluded, mismatches)


def random_surface(rng: Rng, dim: int, cond_max: float = 100.0) -> GaussianSurface:
    """Random well with conditioning bounded by cond_max (for oracle sweeps)."""
    gen = rng.generator()
    cond = float(gen.uniform(1.0, cond_max))
    lam_min = float(gen.uniform(0.05, 2.0))
    lams = np.exp(gen.uniform(np.log(lam_min), np.log(lam_min * cond), size=dim))
    lams[gen.integers(dim)] = lam_min  # pin the smallest eigenvalue
    q, _ = np.linalg.qr(gen.standard_normal((dim, dim)))
    kappa = (q * lams) @ q.T
    mu = gen.uniform(-3.0, 3.0, size=dim)
    a = float(gen.uniform(0.2, 5.0))
    c = float(gen.uniform(-2.0, 2.0))
    return GaussianSurface(mu, kappa, a, c)

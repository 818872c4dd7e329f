"""Mean-reverting variance-exploding diffusion: drift, noise schedule, closed-form kernel.

The forward process drifts the state toward the noisy condition y at rate
gamma while injecting Wiener noise with an exponentially growing coefficient:

    dx = gamma * (y - x) dt + g(t) dw,
    g(t) = sigma_min * (sigma_max / sigma_min)**t * sqrt(2 * log(sigma_max / sigma_min)).

Because the process is linear-Gaussian, the transition kernel given (x0, y)
is closed form, which is what training and the verification oracle rely on.

Complex convention: grids are complex-valued and "unit" complex noise is
circularly symmetric with real/imag parts i.i.d. N(0, 1/2), so E|z|^2 = 1.
All variances quoted here are pooled complex variances E|x - mean|^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "OuveSchedule",
    "drift",
    "diffusion_coeff",
    "kernel_mean",
    "kernel_std",
    "sample_xt",
    "kernel_score",
    "complex_randn",
    "simulate_forward",
    "ForwardStats",
]


@dataclass(frozen=True)
class OuveSchedule:
    """Stiffness and noise-schedule parameters with the process horizon.

    t_eps is the terminal reverse-time cutoff: the score (which carries a
    1/sigma(t)^2 factor) is never evaluated below it.
    """

    gamma: float = 1.5
    sigma_min: float = 0.05
    sigma_max: float = 0.5
    t_max: float = 1.0
    t_eps: float = 0.03

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if not (0 < self.sigma_min <= self.sigma_max):
            raise ValueError(
                f"need 0 < sigma_min <= sigma_max, got {self.sigma_min}, {self.sigma_max}"
            )
        if not (0 < self.t_eps < self.t_max):
            raise ValueError(f"need 0 < t_eps < t_max, got {self.t_eps}, {self.t_max}")

    @property
    def log_ratio(self) -> float:
        return math.log(self.sigma_max / self.sigma_min)

    def check_time(self, t: float) -> None:
        if not (0.0 <= t <= self.t_max + 1e-12):
            raise ValueError(f"time {t} outside [0, {self.t_max}]")


def _check_shapes(x, y):
    x = np.asarray(x)
    y = np.asarray(y)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    return x, y


def drift(x: np.ndarray, y: np.ndarray, sched: OuveSchedule) -> np.ndarray:
    """Mean-reverting drift gamma * (y - x), elementwise."""
    x, y = _check_shapes(x, y)
    return sched.gamma * (y - x)


def diffusion_coeff(t: float, sched: OuveSchedule) -> float:
    """Noise injection coefficient g(t); monotone increasing when sigma_max > sigma_min."""
    sched.check_time(t)
    ratio = sched.sigma_max / sched.sigma_min
    return sched.sigma_min * ratio**t * math.sqrt(2.0 * sched.log_ratio)


def kernel_mean(x0: np.ndarray, y: np.ndarray, t: float, sched: OuveSchedule) -> np.ndarray:
    """Closed-form kernel mean: exp(-gamma t) x0 + (1 - exp(-gamma t)) y."""
    if t < 0:
        raise ValueError(f"time must be non-negative, got {t}")
    x0, y = _check_shapes(x0, y)
    w = math.exp(-sched.gamma * t)
    return w * x0 + (1.0 - w) * y


def kernel_var(t: float, sched: OuveSchedule) -> float:
    """Closed-form pooled complex kernel variance sigma(t)^2."""
    if t < 0:
        raise ValueError(f"time must be non-negative, got {t}")
    logr = sched.log_ratio
    if logr == 0.0:
        return 0.0
    ratio_sq = (sched.sigma_max / sched.sigma_min) ** (2.0 * t)
    return (
        sched.sigma_min**2
        * (ratio_sq - math.exp(-2.0 * sched.gamma * t))
        * logr
        / (sched.gamma + logr)
    )


def kernel_std(t: float, sched: OuveSchedule) -> float:
    """sigma(t); zero at t = 0."""
    return math.sqrt(max(kernel_var(t, sched), 0.0))


def complex_randn(shape, rng: np.random.Generator) -> np.ndarray:
    """Circularly symmetric complex standard normal: E|z|^2 = 1 per element."""
    scale = math.sqrt(0.5)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def sample_xt(
    x0: np.ndarray, y: np.ndarray, t: float, z: np.ndarray, sched: OuveSchedule
) -> np.ndarray:
    """One draw from the transition kernel: mean + sigma(t) * z."""
    x0, y = _check_shapes(x0, y)
    z = np.asarray(z)
    if z.shape != x0.shape:
        raise ValueError(f"noise shape {z.shape} does not match grid shape {x0.shape}")
    return kernel_mean(x0, y, t, sched) + kernel_std(t, sched) * z


def kernel_score(
    x_t: np.ndarray, x0: np.ndarray, y: np.ndarray, t: float, sched: OuveSchedule
) -> np.ndarray:
    """Analytic kernel score -(x_t - mean) / sigma(t)^2.

    This is the conjugate-Wirtinger gradient of the circular complex Gaussian
    log density; in the channel view its real/imag parts match the reverse
    SDE drift convention used by the sampler.  Requires t >= t_eps so that
    sigma(t) is bounded away from zero.
    """
    if t < sched.t_eps:
        raise ValueError(f"score requested at t={t} below cutoff t_eps={sched.t_eps}")
    x_t, x0 = _check_shapes(x_t, x0)
    _check_shapes(x0, y)
    var = kernel_var(t, sched)
    return -(x_t - kernel_mean(x0, y, t, sched)) / var


@dataclass(frozen=True)
class ForwardStats:
    """Euler-Maruyama summary: per-bin empirical mean and pooled complex variance."""

    empirical_mean: np.ndarray
    empirical_var: float
    n_paths: int
    n_steps: int

    def mean_stderr(self, sched: OuveSchedule, t: float) -> float:
        """Standard error of the complex mean estimate at time t."""
        return kernel_std(t, sched) / math.sqrt(self.n_paths)


def simulate_forward(
    x0: np.ndarray,
    y: np.ndarray,
    t_end: float,
    n_steps: int,
    n_paths: int,
    seed: int = 0,
    sched: OuveSchedule | None = None,
) -> ForwardStats:
    """Brute-force Euler-Maruyama integration of the forward process.

    Verification oracle for the closed-form kernel: integrates
    dx = gamma (y - x) dt + g(t) dw over [0, t_end] for n_paths independent
    paths and reports the empirical mean grid and the pooled complex
    variance E|x - mean|^2.  Noise comes from a counter-based Philox stream
    keyed by the seed, so results do not depend on execution order.
    """
    sched = sched or OuveSchedule()
    x0, y = _check_shapes(x0, y)
    if t_end < 0 or t_end > sched.t_max:
        raise ValueError(f"t_end {t_end} outside [0, {sched.t_max}]")
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    if t_end == 0:
        mean = np.broadcast_to(x0.astype(np.complex128), x0.shape).copy()
        return ForwardStats(empirical_mean=mean, empirical_var=0.0, n_paths=n_paths, n_steps=0)
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1 for t_end > 0")

    rng = np.random.Generator(np.random.Philox(key=seed))
    dt = t_end / n_steps
    x = np.broadcast_to(x0.astype(np.complex128), (n_paths,) + x0.shape).copy()
    yb = y.astype(np.complex128)[None]
    sqrt_dt = math.sqrt(dt)
    for k in range(n_steps):
        t = k * dt
        g = diffusion_coeff(t, sched)
        dw = sqrt_dt * complex_randn(x.shape, rng)
        x += sched.gamma * (yb - x) * dt + g * dw
    mean = x.mean(axis=0)
    var = float(np.mean(np.abs(x - mean[None]) ** 2))
    return ForwardStats(empirical_mean=mean, empirical_var=var, n_paths=n_paths, n_steps=n_steps)

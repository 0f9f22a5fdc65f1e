"""Ensemble runs and the statistical verdicts built on them.

Two identities make the filter testable without access to any internal
of the truth simulation:

* innovations statistics: along a correctly matched filter the
  accumulated innovation record is a standard Wiener process, so its
  terminal ensemble mean is ~N(0, T/n) and each trajectory's quadratic
  variation is T up to O(1/sqrt(steps));
* error identity: the ensemble mean squared estimation error
  E|a - a_hat|^2 equals the deterministic conditional variance V(t).

The second identity needs a genuine prior ensemble, not one repeated
initial state.  A Gaussian prior with V >= |W| is realized here as a
mixture of coherent states (its P representation): each trajectory
draws a coherent displacement from the prior statistics and simulates
a pure truth, while the filter is started on the mixed prior moments.
The draw uses an RNG stream keyed independently of the measurement
noise so that enabling it does not shift any dW sequence.

Trajectory seeds are base_seed XOR index: counter-mode generators give
uncorrelated streams for distinct keys and the ensemble stays exactly
reproducible.  Reduction is sequential in index order no matter how
many workers ran, so aggregate bytes never depend on scheduling.  The
worker count is taken from QKF_THREADS (default: machine parallelism).
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from .errors import CavityFilterError, ConfigError, DomainError
from .fock import CovariancePair
from .qkf import ModeParams, RiccatiState
from .control import PIDGains, ReferenceSignal, closed_loop_cosim
from .trajectory import NoiseStream

__all__ = [
    "EnsembleConfig",
    "TrajectorySample",
    "EnsembleResult",
    "FilterScenario",
    "InnovationsVerdict",
    "MSEReport",
    "run_ensemble",
    "innovations_test",
    "mse_vs_V",
]

# salt for the per-trajectory prior draw; any fixed key distinct from the
# measurement-noise key family works
_ALPHA_SALT = 0xA5A5A5A5A5A5A5A5

_QV_LOW = 0.95
_QV_HIGH = 1.05


@dataclass(frozen=True)
class EnsembleConfig:
    """Run geometry shared by every trajectory of an ensemble."""

    n_traj: int
    T: float
    dt: float
    base_seed: int
    scenario: str
    record_stride: int = 1

    def __post_init__(self) -> None:
        if self.n_traj < 1:
            raise DomainError(f"n_traj must be >= 1, got {self.n_traj}")
        if self.dt <= 0.0:
            raise DomainError(f"dt must be positive, got {self.dt}")
        if self.dt > self.T:
            raise DomainError(f"dt={self.dt} exceeds T={self.T}")
        if not 0 <= self.base_seed < 2**64:
            raise DomainError(f"base_seed must be a 64-bit integer, "
                              f"got {self.base_seed}")
        if self.record_stride < 1:
            raise DomainError(
                f"record_stride must be >= 1, got {self.record_stride}")


@dataclass(frozen=True)
class TrajectorySample:
    """Per-trajectory series reduced by the ensemble runner."""

    t: np.ndarray
    truth_mean_a: np.ndarray
    a_hat: np.ndarray
    sq_error: np.ndarray
    V: np.ndarray
    terminal_I: float
    qv: float


@dataclass(frozen=True)
class EnsembleResult:
    """Index-ordered aggregates over an ensemble.

    ``mse`` is the ensemble mean of |a - a_hat|^2 evaluated through the
    truth moments; ``V`` is the (trajectory-independent) filter
    variance on the same grid; ``terminal_I`` and ``qv`` hold the
    terminal innovation and its full-resolution quadratic variation per
    trajectory."""

    config: EnsembleConfig
    t: np.ndarray
    mean_truth_a: np.ndarray
    var_truth_a: np.ndarray
    mean_a_hat: np.ndarray
    mse: np.ndarray
    V: np.ndarray
    terminal_I: np.ndarray
    qv: np.ndarray


@dataclass(frozen=True)
class FilterScenario:
    """Builder for filter-vs-truth trajectories under a common prior.

    With ``purify`` the truth of trajectory i is a pure coherent state
    displaced by a draw from the prior covariance (prior mean plus
    Gaussian), while the filter always starts on (alpha, cov).  Without
    it the truth simply shares the filter's initial data.
    """

    params: ModeParams
    dim: int
    alpha: complex
    cov: CovariancePair
    theta: float = 0.0
    purify: bool = False
    gains: PIDGains = PIDGains(0.0)
    reference: ReferenceSignal = ReferenceSignal("constant", amplitude=0.0)

    def __call__(self, config: EnsembleConfig, index: int,
                 noise: NoiseStream) -> TrajectorySample:
        truth_alpha = None
        truth_cov = None
        if self.purify:
            rng = np.random.Generator(
                np.random.Philox(key=(config.base_seed ^ index) ^ _ALPHA_SALT))
            truth_alpha = self.alpha + _draw_displacement(self.cov, rng)
            truth_cov = CovariancePair(0.0, 0.0j)
        rec = closed_loop_cosim(
            self.alpha, self.cov, self.gains, self.reference, self.params,
            self.dim, noise, config.T, config.dt,
            record_stride=config.record_stride,
            truth_alpha=truth_alpha, truth_cov=truth_cov,
        )
        sq = (rec.truth_mean_n
              - 2.0 * (np.conj(rec.a_hat) * rec.truth_mean_a).real
              + np.abs(rec.a_hat) ** 2)
        return TrajectorySample(rec.t, rec.truth_mean_a, rec.a_hat, sq,
                                rec.V, float(rec.I[-1]), rec.qv)


def _draw_displacement(cov: CovariancePair, rng: np.random.Generator) -> complex:
    """One draw x + iy with E|.|^2 = V and E[(.)^2] = W."""
    sigma = 0.5 * np.array(
        [[cov.V + cov.W.real, cov.W.imag],
         [cov.W.imag, cov.V - cov.W.real]])
    vals, vecs = np.linalg.eigh(sigma)
    vals = np.clip(vals, 0.0, None)
    x, y = vecs @ (np.sqrt(vals) * rng.standard_normal(2))
    return complex(x, y)


def _worker_count() -> int:
    env = os.environ.get("QKF_THREADS")
    if env is None:
        return os.cpu_count() or 1
    try:
        workers = int(env)
    except ValueError:
        raise ConfigError(f"QKF_THREADS must be an integer, got {env!r}") from None
    if workers < 1:
        raise ConfigError(f"QKF_THREADS must be >= 1, got {workers}")
    return workers


def _run_one(task) -> TrajectorySample:
    build, config, index = task
    noise = NoiseStream(seed=config.base_seed ^ index, dt=config.dt)
    try:
        return build(config, index, noise)
    except CavityFilterError as exc:
        raise type(exc)(f"trajectory {index}: {exc}") from exc


def run_ensemble(config: EnsembleConfig, build) -> EnsembleResult:
    """Run n_traj trajectories and reduce them in index order.

    ``build(config, index, noise)`` must return a TrajectorySample; it
    runs in worker processes when QKF_THREADS allows, so it has to be
    picklable (module-level callable or frozen dataclass instance).
    Any trajectory failure aborts the whole run, tagged with its index.
    """
    tasks = [(build, config, i) for i in range(config.n_traj)]
    workers = min(_worker_count(), config.n_traj)
    if workers > 1:
        chunk = max(1, config.n_traj // (4 * workers))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            samples = pool.map(_run_one, tasks, chunksize=chunk)
            return _reduce(config, samples)
    return _reduce(config, map(_run_one, tasks))


def _reduce(config: EnsembleConfig, samples) -> EnsembleResult:
    t = None
    sum_a = sum_abs2 = sum_hat = sum_sq = None
    v_path = None
    terminal = np.empty(config.n_traj)
    qv = np.empty(config.n_traj)
    count = 0
    for i, s in enumerate(samples):
        if t is None:
            t = s.t
            sum_a = np.zeros_like(s.truth_mean_a)
            sum_abs2 = np.zeros(len(t))
            sum_hat = np.zeros_like(s.a_hat)
            sum_sq = np.zeros(len(t))
            v_path = s.V
        elif s.t.shape != t.shape:
            raise DomainError(f"trajectory {i}: record grid mismatch")
        sum_a = sum_a + s.truth_mean_a
        sum_abs2 = sum_abs2 + np.abs(s.truth_mean_a) ** 2
        sum_hat = sum_hat + s.a_hat
        sum_sq = sum_sq + s.sq_error
        terminal[i] = s.terminal_I
        qv[i] = s.qv
        count += 1
    n = float(count)
    mean_a = sum_a / n
    var_a = np.maximum(sum_abs2 / n - np.abs(mean_a) ** 2, 0.0)
    out = EnsembleResult(config, t, mean_a, var_a, sum_hat / n, sum_sq / n,
                         v_path, terminal, qv)
    for arr in (out.t, out.mean_truth_a, out.var_truth_a, out.mean_a_hat,
                out.mse, out.V, out.terminal_I, out.qv):
        arr.setflags(write=False)
    return out


@dataclass(frozen=True)
class InnovationsVerdict:
    """Whiteness checks with their thresholds recorded.

    The terminal-mean test is a 3 sigma z-test against N(0, T/n); the
    quadratic-variation test requires every trajectory's QV/T inside
    fixed bounds (meaningful for dt <= 1e-4 T)."""

    n_traj: int
    terminal_mean: float
    mean_threshold: float
    mean_ok: bool
    qv_ratio_min: float
    qv_ratio_max: float
    qv_low: float
    qv_high: float
    qv_ok: bool

    @property
    def passed(self) -> bool:
        return self.mean_ok and self.qv_ok


def innovations_test(source, qv=None, T=None) -> InnovationsVerdict:
    """Wiener-statistics verdict on innovation records.

    Accepts either an EnsembleResult or raw arrays (terminal
    innovations, per-trajectory quadratic variations) plus the horizon.
    """
    if isinstance(source, EnsembleResult):
        terminal = np.asarray(source.terminal_I, dtype=float)
        qv_arr = np.asarray(source.qv, dtype=float)
        horizon = source.config.T
    else:
        if qv is None or T is None:
            raise DomainError("raw innovations need qv and T alongside")
        terminal = np.asarray(source, dtype=float)
        qv_arr = np.asarray(qv, dtype=float)
        horizon = float(T)
    if terminal.shape != qv_arr.shape or terminal.ndim != 1 or not len(terminal):
        raise DomainError("terminal innovations and qv must be matching "
                          "nonempty 1-d arrays")
    if horizon <= 0.0:
        raise DomainError(f"T must be positive, got {horizon}")
    n = len(terminal)
    mean = float(np.mean(terminal))
    threshold = 3.0 * math.sqrt(horizon / n)
    ratios = qv_arr / horizon
    lo, hi = float(np.min(ratios)), float(np.max(ratios))
    return InnovationsVerdict(
        n_traj=n,
        terminal_mean=mean,
        mean_threshold=threshold,
        mean_ok=abs(mean) <= threshold,
        qv_ratio_min=lo,
        qv_ratio_max=hi,
        qv_low=_QV_LOW,
        qv_high=_QV_HIGH,
        qv_ok=_QV_LOW <= lo and hi <= _QV_HIGH,
    )


@dataclass(frozen=True)
class MSEReport:
    """Ensemble MSE against the deterministic variance on one grid.

    ``max_rel_dev`` is taken over t >= window_start (the transient
    before it is excluded)."""

    t: np.ndarray
    mse: np.ndarray
    V: np.ndarray
    max_rel_dev: float
    window_start: float

    def __post_init__(self) -> None:
        if float(np.min(self.mse)) < -1e-9 or float(np.min(self.V)) < -1e-12:
            raise DomainError("MSE and V entries must be nonnegative")
        object.__setattr__(self, "mse", np.maximum(self.mse, 0.0))
        object.__setattr__(self, "V", np.maximum(self.V, 0.0))
        for arr in (self.t, self.mse, self.V):
            arr.setflags(write=False)


def mse_vs_V(result: EnsembleResult,
             riccati: Sequence[RiccatiState]) -> MSEReport:
    """Compare ensemble MSE with a Riccati series on the same grid.

    The relative deviation |mse - V| / V is evaluated pointwise for
    t in [0.1 T, T]; where V is exactly zero the MSE must vanish too.
    """
    t = result.t
    if len(riccati) != len(t):
        raise DomainError(f"grid mismatch: {len(riccati)} Riccati samples "
                          f"for {len(t)} records")
    rt = np.array([s.t for s in riccati])
    if np.max(np.abs(rt - t)) > 1e-9:
        raise DomainError("grid mismatch: Riccati times differ from records")
    v = np.array([s.V for s in riccati])
    horizon = result.config.T
    start = 0.1 * horizon
    window = t >= start - 1e-12
    worst = 0.0
    for mk, vk in zip(result.mse[window], v[window]):
        if vk > 0.0:
            worst = max(worst, float(abs(mk - vk) / vk))
        elif mk > 1e-30:
            worst = math.inf
    return MSEReport(t, np.array(result.mse), v, worst, start)

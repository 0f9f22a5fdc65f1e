"""PID feedback around the filtered mode estimate.

The loop actuates on the filtered mean rather than on the raw record:
the error e = r - a_hat feeds proportional, integral, and derivative
terms, which enter the mode's coefficients as Hamiltonian displacement
drives.  The derivative channel is special twice over.  First, the
estimate's time derivative is not defined pathwise, so the D term uses
the filter's drift (the predictable part of da_hat) instead of a
numerical difference.  Second, feeding the measurement current back
through a Hamiltonian shifts both coefficients: L picks up -iF_D and H
picks up the compensating (F_D L + L' F_D)/2 term, which is what keeps
the observed quadrature L + L' unchanged by the feedback.

``closed_loop_cosim`` runs the full-Fock-space truth and the two-moment
filter side by side on one synthesized record, which is the ground
truth the cheap filter is judged against everywhere in this package.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Union

import numpy as np

from .errors import DimensionError, DomainError, CavityFilterError
from .fock import (
    CavityOperator,
    CovariancePair,
    DensityOperator,
    StateVector,
    _annihilation_matrix,
    _check_truncation,
    _gaussian_vector,
    _mode_matrices,
    _moments_from_density,
    _moments_from_vector,
    gaussian_state,
)
from .qkf import (
    ModeParams,
    QKFState,
    RiccatiState,
    _advance_riccati,
    _mean_update,
)
from .trajectory import (
    NoiseStream,
    SLHCoefficients,
    TrajectoryState,
    _sme_kernel,
    _sse_kernel,
    _stepper_matrices,
    damped_cavity_slh,
)

__all__ = [
    "PIDGains",
    "ReferenceSignal",
    "ClosedLoopState",
    "ClosedLoopRecord",
    "XiGain",
    "error_signal",
    "xi_gain",
    "drift_estimate",
    "controlled_slh",
    "pid_filter_step",
    "noise_free_response",
    "closed_loop_cosim",
]

_REFERENCE_KINDS = ("constant", "step", "ramp", "sinusoid")


@dataclass(frozen=True)
class PIDGains:
    """Nonnegative PID gains with set-point weights.

    mu scales the reference inside the proportional term and nu scales
    its derivative inside the derivative term; the integral term always
    integrates the unweighted error r - a_hat."""

    k_P: float
    k_I: float = 0.0
    k_D: float = 0.0
    mu: float = 1.0
    nu: float = 1.0

    def __post_init__(self) -> None:
        for name in ("k_P", "k_I", "k_D"):
            val = getattr(self, name)
            if not (val >= 0.0 and math.isfinite(val)):
                raise DomainError(f"{name} must be a nonnegative real, got {val}")
        if not (math.isfinite(self.mu) and math.isfinite(self.nu)):
            raise DomainError("set-point weights must be finite")

    @property
    def all_zero(self) -> bool:
        return self.k_P == 0.0 and self.k_I == 0.0 and self.k_D == 0.0


@dataclass(frozen=True)
class ReferenceSignal:
    """Analytic reference r(t) with an analytic derivative.

    kinds (all zero, resp. held, before ``onset``):
      constant: r = amplitude                      dr = 0
      step:     r = amplitude for t >= onset       dr = 0 (the jump
                itself is not differentiable; the derivative channel
                sees nothing from an ideal step)
      ramp:     r = amplitude + slope (t - onset)  dr = slope
      sinusoid: r = amplitude e^{i freq (t-onset)} dr = i freq r
    """

    kind: str
    amplitude: complex = 1.0 + 0.0j
    onset: float = 0.0
    slope: float = 0.0
    frequency: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in _REFERENCE_KINDS:
            raise DomainError(
                f"kind must be one of {_REFERENCE_KINDS}, got {self.kind!r}"
            )
        if not (self.onset >= 0.0 and math.isfinite(self.onset)):
            raise DomainError(f"onset must be a nonnegative real, got {self.onset}")
        for name in ("slope", "frequency"):
            if not math.isfinite(getattr(self, name)):
                raise DomainError(f"{name} must be finite")

    def value(self, t: float) -> complex:
        if self.kind == "constant":
            return complex(self.amplitude)
        if t < self.onset:
            return 0.0j
        if self.kind == "step":
            return complex(self.amplitude)
        if self.kind == "ramp":
            return complex(self.amplitude) + self.slope * (t - self.onset)
        return complex(self.amplitude) * cmath.exp(
            1j * self.frequency * (t - self.onset))

    def derivative(self, t: float) -> complex:
        if self.kind in ("constant", "step") or t < self.onset:
            return 0.0j
        if self.kind == "ramp":
            return complex(self.slope)
        return 1j * self.frequency * self.value(t)


@dataclass(frozen=True)
class XiGain:
    """Innovations gain of the derivative-controlled filter,
    sqrt(gamma) (V + W) / (1 + k_D)."""

    value: complex


@dataclass(frozen=True)
class ClosedLoopState:
    """Filter state, accumulated integral of the error, optional truth."""

    filter: QKFState
    integral_error: complex = 0.0j
    truth: Union[TrajectoryState, None] = None
    t: float = 0.0

    def __post_init__(self) -> None:
        ie = complex(self.integral_error)
        if not (math.isfinite(ie.real) and math.isfinite(ie.imag)):
            raise DomainError("integral_error must be finite")


@dataclass(frozen=True)
class ClosedLoopRecord:
    """Paired truth/filter series from a co-simulation (uniform grid).

    ``qv`` is the quadratic variation of the filter innovations over
    the whole run, accumulated at full step resolution."""

    t: np.ndarray
    truth_mean_a: np.ndarray
    truth_mean_n: np.ndarray
    a_hat: np.ndarray
    V: np.ndarray
    W: np.ndarray
    Y: np.ndarray
    I: np.ndarray
    final: ClosedLoopState
    qv: float


def error_signal(r_t: complex, a_hat: complex) -> complex:
    """Tracking error e = r(t) - a_hat."""
    return complex(r_t) - complex(a_hat)


def xi_gain(cov: RiccatiState, gains: PIDGains, gamma: float) -> XiGain:
    """Innovations gain sqrt(gamma) (V + W) / (1 + k_D)."""
    return XiGain(math.sqrt(gamma) * (cov.V + cov.W) / (1.0 + gains.k_D))


def drift_estimate(
    gains: PIDGains,
    filt: QKFState,
    ref: ReferenceSignal,
    integral_error: complex,
    t: float,
    params: ModeParams,
) -> complex:
    """Predictable part of da_hat/dt in the PID loop:

        [-(gamma/2 + i omega) a_hat + k_P (mu r - a_hat)
         + k_I integral_error + k_D nu dr/dt] / (1 + k_D).

    This is also the surrogate for the non-differentiable estimate
    velocity inside the derivative Hamiltonian.  Zero-gain terms are
    skipped outright so that gain-by-gain reductions agree at the bit
    level, not merely numerically.
    """
    return _drift(gains, filt.a_hat, integral_error, t, params, ref)


def _drift(gains: PIDGains, a_hat: complex, integral_error: complex,
           t: float, params: ModeParams, ref: ReferenceSignal) -> complex:
    num = -complex(0.5 * params.gamma, params.omega) * a_hat
    if gains.k_P != 0.0:
        num = num + gains.k_P * (gains.mu * ref.value(t) - a_hat)
    if gains.k_I != 0.0:
        num = num + gains.k_I * integral_error
    if gains.k_D != 0.0:
        num = num + gains.k_D * (gains.nu * ref.derivative(t))
    return num / (1.0 + gains.k_D)


@lru_cache(maxsize=32)
def _open_loop_slh(gamma: float, omega: float, dim: int) -> SLHCoefficients:
    return damped_cavity_slh(ModeParams(gamma, omega), dim)


def controlled_slh(
    gains: PIDGains,
    filt: QKFState,
    ref: ReferenceSignal,
    integral_error: complex,
    t: float,
    params: ModeParams,
    dim: int,
) -> SLHCoefficients:
    """SLH coefficients of the mode under the PID feedback actuation.

    S = 1 throughout.  P and I act purely through displacement
    Hamiltonians built from the error and its integral.  D modifies the
    coupling, L = sqrt(gamma) a - iF_D with F_D = i k_D (Xi* a - Xi a'),
    and adds the derivative Hamiltonian plus the current-feedback
    correction (F_D L_0 + L_0' F_D)/2 with L_0 = sqrt(gamma) a.  The
    result satisfies L + iF_D = sqrt(gamma) a and H = H' exactly.
    """
    if dim < 2:
        raise DimensionError(f"dim must be >= 2, got {dim}")
    if gains.all_zero:
        return _open_loop_slh(params.gamma, params.omega, dim)

    mats = _mode_matrices(dim)
    sg = math.sqrt(params.gamma)
    a_hat = filt.a_hat

    # coefficient of a' in the displacement part of H; conjugate rides on a
    z = 0.0j
    if gains.k_P != 0.0:
        z += 1j * gains.k_P * (gains.mu * ref.value(t) - a_hat)
    if gains.k_I != 0.0:
        z += 1j * gains.k_I * complex(integral_error)

    h_mat = params.omega * mats["n"]
    if gains.k_D != 0.0:
        xi = xi_gain(filt.riccati, gains, params.gamma).value
        lam_hat = sg * 2.0 * a_hat.real
        varpi = _drift(gains, a_hat, integral_error, t, params, ref)
        g = gains.nu * ref.derivative(t) - varpi + lam_hat * xi
        z += 1j * gains.k_D * g
        w_c = 0.5j * sg * gains.k_D * xi.conjugate()
        h_mat = h_mat + w_c * mats["m1"] + w_c.conjugate() * mats["m2"]
        l_mat = sg * mats["a"] + gains.k_D * (
            xi.conjugate() * mats["a"] - xi * mats["ad"])
    else:
        l_mat = sg * mats["a"]
    if z != 0.0:
        h_mat = h_mat + z * mats["ad"] + z.conjugate() * mats["a"]

    return SLHCoefficients(1.0 + 0.0j, CavityOperator(dim, l_mat),
                           CavityOperator(dim, h_mat))


def pid_filter_step(
    state: ClosedLoopState,
    dI: float,
    gains: PIDGains,
    ref: ReferenceSignal,
    params: ModeParams,
    dt: float,
) -> ClosedLoopState:
    """One closed-loop filter step driven by the innovations increment.

    The mean moves by drift_estimate dt plus the Xi gain times dI, with
    both coefficients frozen at the step start; the integral error
    accumulates (r - a_hat) dt the same way; the covariances advance by
    one RK4 step of the theta=0 Riccati pair.  With all gains zero this
    reproduces the uncontrolled filter step bit for bit.
    """
    if dt <= 0.0:
        raise DomainError(f"dt must be positive, got {dt}")
    filt = state.filter
    ric = filt.riccati
    drift = _drift(gains, filt.a_hat, state.integral_error, state.t, params, ref)
    gain = xi_gain(ric, gains, params.gamma).value
    a_new = _mean_update(filt.a_hat, drift, gain, dI, dt)
    v_new, w_new = _advance_riccati(ric.V, ric.W, ric.t, dt,
                                    params.gamma, params.omega, lambda _t: 0.0)
    ie_new = state.integral_error + error_signal(ref.value(state.t), filt.a_hat) * dt
    return ClosedLoopState(
        filter=QKFState(a_new, RiccatiState(v_new, w_new, ric.t + dt)),
        integral_error=ie_new,
        truth=state.truth,
        t=state.t + dt,
    )


def noise_free_response(
    gains: PIDGains,
    ref: ReferenceSignal,
    params: ModeParams,
    T: float,
    dt: float,
    a0: complex = 0.0j,
    ie0: complex = 0.0j,
):
    """Deterministic skeleton of the closed-loop filter: RK4 on

        da/dt  = drift_estimate(a, ie, t),
        die/dt = r(t) - a,

    i.e. the filter recursion with the innovations switched off.
    Returns (t, a_hat, integral_error) arrays on the full step grid.
    """
    if dt <= 0.0:
        raise DomainError(f"dt must be positive, got {dt}")
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-12 * max(1.0, abs(T)):
        raise DomainError(f"dt={dt} does not divide T={T}")

    def rhs(t, a, ie):
        return (_drift(gains, a, ie, t, params, ref), ref.value(t) - a)

    ts = np.empty(n + 1)
    a_arr = np.empty(n + 1, dtype=np.complex128)
    ie_arr = np.empty(n + 1, dtype=np.complex128)
    a, ie = complex(a0), complex(ie0)
    ts[0], a_arr[0], ie_arr[0] = 0.0, a, ie
    for k in range(n):
        t = k * dt
        k1a, k1e = rhs(t, a, ie)
        k2a, k2e = rhs(t + 0.5 * dt, a + 0.5 * dt * k1a, ie + 0.5 * dt * k1e)
        k3a, k3e = rhs(t + 0.5 * dt, a + 0.5 * dt * k2a, ie + 0.5 * dt * k2e)
        k4a, k4e = rhs(t + dt, a + dt * k3a, ie + dt * k3e)
        a = a + (dt / 6.0) * (k1a + 2.0 * (k2a + k3a) + k4a)
        ie = ie + (dt / 6.0) * (k1e + 2.0 * (k2e + k3e) + k4e)
        ts[k + 1] = (k + 1) * dt
        a_arr[k + 1] = a
        ie_arr[k + 1] = ie
    for arr in (ts, a_arr, ie_arr):
        arr.setflags(write=False)
    return ts, a_arr, ie_arr


def closed_loop_cosim(
    alpha: complex,
    cov: CovariancePair,
    gains: PIDGains,
    ref: ReferenceSignal,
    params: ModeParams,
    dim: int,
    noise: NoiseStream,
    T: float,
    dt: float,
    record_stride: int = 1,
    truth_alpha: Union[complex, None] = None,
    truth_cov: Union[CovariancePair, None] = None,
) -> ClosedLoopRecord:
    """Co-simulate the Fock-space truth and the two-moment filter.

    Per step: (1) the controlled coefficients are built from the current
    filter state; (2) the truth advances one step on the sampled noise
    increment; (3) the record increment dY = lambda_truth dt + dW is
    synthesized; (4) the filter consumes its own innovations
    dI' = dY - sqrt(gamma) 2 Re(a_hat) dt.  All coefficients are frozen
    at step start, so neither side anticipates.

    The filter is initialized at (alpha, cov).  The truth defaults to
    the same Gaussian data, integrated as a state vector when the data
    is pure and as a density matrix otherwise; ``truth_alpha`` and
    ``truth_cov`` override it, which is how an ensemble represents a
    mixed prior as a classical draw over pure preparations.
    """
    if dt <= 0.0:
        raise DomainError(f"dt must be positive, got {dt}")
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-12 * max(1.0, abs(T)):
        raise DomainError(f"dt={dt} does not divide T={T}")
    if n % record_stride != 0:
        raise DomainError(
            f"record_stride={record_stride} does not divide {n} steps"
        )
    if abs(noise.dt - dt) > 1e-15:
        raise DomainError(f"noise stream dt {noise.dt} != integration dt {dt}")

    t_alpha = alpha if truth_alpha is None else truth_alpha
    t_cov = cov if truth_cov is None else truth_cov
    pure = abs(t_cov.physicality_excess()) <= 1e-8
    if pure:
        state_arr = _gaussian_vector(t_alpha, t_cov, dim).amplitudes
    else:
        state_arr = gaussian_state(t_alpha, t_cov, dim).entries

    loop = ClosedLoopState(
        filter=QKFState(complex(alpha), RiccatiState(cov.V, cov.W, 0.0)))
    sg = math.sqrt(params.gamma)
    a_mat = _annihilation_matrix(dim)
    dws = noise.increments(n)

    n_rec = n // record_stride + 1
    rec_t = np.empty(n_rec)
    rec_ta = np.empty(n_rec, dtype=np.complex128)
    rec_tn = np.empty(n_rec)
    rec_ah = np.empty(n_rec, dtype=np.complex128)
    rec_v = np.empty(n_rec)
    rec_w = np.empty(n_rec, dtype=np.complex128)
    rec_y = np.empty(n_rec)
    rec_i = np.empty(n_rec)

    def record(idx, t, arr, y, i_acc, filt_state):
        if pure:
            ma, mn, _ = _moments_from_vector(arr, a_mat)
            pop = (abs(arr[-1]) ** 2 + abs(arr[-2]) ** 2) / np.vdot(arr, arr).real
        else:
            ma, mn, _ = _moments_from_density(arr, dim)
            pop = (arr[-1, -1] + arr[-2, -2]).real
        _check_truncation(float(pop), f"closed loop (t={t:.4g})")
        ric = filt_state.filter.riccati
        rec_t[idx] = t
        rec_ta[idx] = ma
        rec_tn[idx] = mn
        rec_ah[idx] = filt_state.filter.a_hat
        rec_v[idx] = ric.V
        rec_w[idx] = ric.W
        rec_y[idx] = y
        rec_i[idx] = i_acc

    record(0, 0.0, state_arr, 0.0, 0.0, loop)

    y_acc = 0.0
    i_acc = 0.0
    qv = 0.0
    idx = 1
    for k in range(n):
        t = k * dt
        slh = controlled_slh(gains, loop.filter, ref, loop.integral_error,
                             t, params, dim)
        l_mat, ld, ll, a0_mat, h_mat = _stepper_matrices(slh)
        dw = dws[k]
        try:
            if pure:
                state_arr, lam = _sse_kernel(state_arr, l_mat, a0_mat,
                                             1.0 + 0.0j, dw, dt)
            else:
                state_arr, lam = _sme_kernel(state_arr, l_mat, ld, ll, h_mat,
                                             1.0 + 0.0j, dw, dt)
        except CavityFilterError as exc:
            raise type(exc)(f"step {k} (t={t:.6g}): {exc}") from exc
        dy = lam * dt + dw
        di_f = dy - (sg * 2.0 * loop.filter.a_hat.real) * dt
        loop = pid_filter_step(loop, di_f, gains, ref, params, dt)
        y_acc += dy
        i_acc += di_f
        qv += di_f * di_f
        if (k + 1) % record_stride == 0:
            record(idx, (k + 1) * dt, state_arr, y_acc, i_acc, loop)
            idx += 1

    if pure:
        truth = TrajectoryState(n * dt, y_acc, float(np.sum(dws)),
                                psi=StateVector(dim, state_arr))
    else:
        truth = TrajectoryState(n * dt, y_acc, float(np.sum(dws)),
                                rho=DensityOperator(dim, state_arr))
    final = ClosedLoopState(filter=loop.filter,
                            integral_error=loop.integral_error,
                            truth=truth, t=loop.t)
    for arr in (rec_t, rec_ta, rec_tn, rec_ah, rec_v, rec_w, rec_y, rec_i):
        arr.setflags(write=False)
    return ClosedLoopRecord(rec_t, rec_ta, rec_tn, rec_ah, rec_v, rec_w,
                            rec_y, rec_i, final, qv)

"""Transfer-function algebra, pole placement, and realization checks."""

import cmath

import numpy as np
import pytest

from cavityfilter.control import PIDGains, ReferenceSignal, noise_free_response
from cavityfilter.errors import (
    AlgebraError,
    DomainError,
    InfeasibleGainError,
    PoleEvaluationError,
)
from cavityfilter.lti import (
    RationalTF,
    closed_loop,
    freq_response,
    pid_tf,
    plant_tf,
    pole_place_pi,
    realize,
    setpoint_tf,
    step_response,
)
from cavityfilter.qkf import ModeParams


def test_rational_tf_eval_matches_polyval():
    rng = np.random.default_rng(11)
    num = tuple(complex(a, b) for a, b in rng.normal(size=(3, 2)))
    den = tuple(complex(a, b) for a, b in rng.normal(size=(4, 2)))
    tf = RationalTF(num, den)
    for _ in range(20):
        s = complex(rng.normal(), rng.normal())
        want = np.polyval(list(reversed(num)), s) / np.polyval(list(reversed(den)), s)
        assert abs(tf(s) - want) < 1e-12 * max(1.0, abs(want))


def test_rational_tf_trims_trailing_coefficients():
    tf = RationalTF((1.0, 2.0, 0.0), (1.0, 1e-15))
    assert tf.num == (1.0 + 0.0j, 2.0 + 0.0j)
    assert tf.den == (1.0 + 0.0j,)
    assert tf.num_degree == 1
    assert tf.den_degree == 0


def test_rational_tf_zero_denominator_rejected():
    with pytest.raises(AlgebraError):
        RationalTF((1.0,), (0.0, 0.0))


def test_poles_linear_and_quadratic():
    assert RationalTF((1.0,), (2.0 + 1.0j, 1.0)).poles() == [-2.0 - 1.0j]
    # (s+1)^2: dyadic coefficients, double root comes out exact
    roots = RationalTF((1.0,), (1.0, 2.0, 1.0)).poles()
    assert sorted(r.real for r in roots) == [-1.0, -1.0]
    assert all(r.imag == 0.0 for r in roots)


def test_poles_quadratic_cancellation_safe():
    # widely split roots: naive formula loses the small one
    tf = RationalTF((1.0,), (1.0, 1e8, 1.0))
    small = min(tf.poles(), key=abs)
    assert abs(small - (-1e-8)) < 1e-20


def test_poles_cubic_against_numpy():
    tf = RationalTF((1.0,), (6.0, 11.0, 6.0, 1.0))
    got = sorted(tf.poles(), key=lambda r: r.real)
    for r, want in zip(got, (-3.0, -2.0, -1.0)):
        assert abs(r - want) < 1e-9


def test_zeros():
    tf = RationalTF((2.0, 2.0), (1.0, 3.0, 1.0))
    assert tf.zeros() == [-1.0 - 0.0j]
    assert RationalTF((0.0,), (1.0, 1.0)).zeros() == []


def test_plant_tf_coefficients():
    g = plant_tf(ModeParams(gamma=1.0, omega=0.5))
    assert g.num == (1.0 + 0.0j,)
    assert abs(g.den[0] - (0.5 + 0.5j)) <= 1e-12
    assert abs(g.den[1] - 1.0) <= 1e-12
    s = 0.3 + 0.7j
    assert abs(g(s) - 1.0 / (s + 0.5 + 0.5j)) < 1e-15


def test_pid_tf_value_and_collapse():
    k = pid_tf(PIDGains(1.0, 2.0, 3.0))
    assert abs(k(1.0) - 6.0) < 1e-15
    assert k.den == (0.0 + 0.0j, 1.0 + 0.0j)
    # k_I = 0 removes the integrator pole entirely
    kp = pid_tf(PIDGains(2.0, 0.0, 0.5))
    assert kp.den == (1.0 + 0.0j,)
    assert kp.num == (2.0 + 0.0j, 0.5 + 0.0j)
    assert pid_tf(PIDGains(2.0)).num == (2.0 + 0.0j,)


def test_closed_loop_pointwise():
    g = plant_tf(ModeParams(gamma=1.0, omega=0.5))
    k = pid_tf(PIDGains(2.0, 1.0, 0.5))
    h = closed_loop(g, k)
    rng = np.random.default_rng(5)
    for _ in range(32):
        s = 3.0 * complex(rng.normal(), rng.normal())
        gk = g(s) * k(s)
        assert abs(h(s) - gk / (1.0 + gk)) < 1e-10


def test_closed_loop_dc_values():
    p = ModeParams(gamma=1.0, omega=0.5)
    g = plant_tf(p)
    hp = closed_loop(g, pid_tf(PIDGains(2.0)))
    assert abs(hp(0.0) - 2.0 / (2.0 + 0.5 + 0.5j)) <= 1e-12
    hpi = closed_loop(g, pid_tf(PIDGains(2.0, 1.0)))
    assert abs(hpi(0.0) - 1.0) <= 1e-12


def test_closed_loop_cancels_shared_integrator_factor():
    g = RationalTF((0.0, 1.0), (1.0, 1.0))  # s/(s+1)
    k = RationalTF((1.0,), (0.0, 1.0))      # 1/s
    h = closed_loop(g, k)
    assert h.num == (1.0 + 0.0j,)
    assert h.den == (2.0 + 0.0j, 1.0 + 0.0j)


def test_closed_loop_singular_rejected():
    g = RationalTF((-1.0,), (1.0,))
    k = RationalTF((1.0,), (1.0,))
    with pytest.raises(AlgebraError, match="singular"):
        closed_loop(g, k)


def test_setpoint_tf_matches_closed_loop_at_unit_weight():
    p = ModeParams(gamma=1.0, omega=0.5)
    gains = PIDGains(2.0, 1.0)
    h = closed_loop(plant_tf(p), pid_tf(gains))
    sp = setpoint_tf(gains, p)
    rng = np.random.default_rng(3)
    for _ in range(16):
        s = 2.0 * complex(rng.normal(), rng.normal())
        assert abs(sp(s) - h(s)) < 1e-12


def test_setpoint_weight_scales_proportional_zero_only():
    p = ModeParams(gamma=1.0, omega=0.0)
    lo = setpoint_tf(PIDGains(2.0, 1.0, mu=0.5), p)
    hi = setpoint_tf(PIDGains(2.0, 1.0, mu=1.0), p)
    assert lo.den == hi.den
    assert abs(lo.num[1] - 0.5 * hi.num[1]) < 1e-15
    assert lo.num[0] == hi.num[0]
    with pytest.raises(DomainError):
        setpoint_tf(PIDGains(1.0, 1.0, 0.5), p)


def test_pole_place_pi_critical_damping():
    gains = pole_place_pi(1.0, 1.0, ModeParams(gamma=2.0, omega=0.0))
    assert gains.k_P == 1.0
    assert gains.k_I == 1.0
    assert gains.k_D == 0.0
    h = closed_loop(plant_tf(ModeParams(gamma=2.0, omega=0.0)), pid_tf(gains))
    for r in h.poles():
        assert abs(r - (-1.0)) <= 1e-9


def test_pole_place_pi_undamped_plant():
    gains = pole_place_pi(0.5, 2.0, ModeParams(gamma=0.0, omega=0.0))
    assert gains.k_P == 2.0
    assert gains.k_I == 4.0


def test_pole_place_pi_denominator_coefficients():
    zeta, om0, gamma = 0.7, 3.0, 1.0
    p = ModeParams(gamma=gamma, omega=0.0)
    gains = pole_place_pi(zeta, om0, p)
    h = closed_loop(plant_tf(p), pid_tf(gains))
    lead = h.den[-1]
    assert abs(h.den[0] / lead - om0 * om0) <= 1e-12
    assert abs(h.den[1] / lead - 2.0 * zeta * om0) <= 1e-12
    assert abs(lead - 1.0) <= 1e-12


def test_pole_place_pi_validation():
    with pytest.raises(InfeasibleGainError):
        pole_place_pi(0.1, 0.1, ModeParams(gamma=10.0, omega=0.0))
    with pytest.raises(DomainError):
        pole_place_pi(1.0, 1.0, ModeParams(gamma=1.0, omega=0.5))
    with pytest.raises(DomainError):
        pole_place_pi(-1.0, 1.0, ModeParams(gamma=1.0, omega=0.0))
    with pytest.raises(DomainError):
        pole_place_pi(1.0, 0.0, ModeParams(gamma=1.0, omega=0.0))


def test_freq_response_values_and_asymmetry():
    g = plant_tf(ModeParams(gamma=1.0, omega=0.5))
    grid = [-2.0, -1.0, 0.0, 1.0, 2.0]
    vals = freq_response(g, grid)
    for om, v in zip(grid, vals):
        assert abs(v - g(1j * om)) < 1e-15
    # complex coefficients break the usual mirror symmetry of |G|
    assert abs(abs(vals[1]) - abs(vals[3])) > 0.1
    g0 = plant_tf(ModeParams(gamma=1.0, omega=0.0))
    v0 = freq_response(g0, grid)
    assert abs(abs(v0[1]) - abs(v0[3])) < 1e-15


def test_freq_response_pole_on_grid():
    k = pid_tf(PIDGains(1.0, 1.0))
    with pytest.raises(PoleEvaluationError, match="0.0"):
        freq_response(k, [1.0, 0.0])


def test_realize_reconstructs_transfer_function():
    p = ModeParams(gamma=1.0, omega=0.5)
    cases = [
        plant_tf(p),
        pid_tf(PIDGains(2.0, 1.0, 0.5)),
        closed_loop(plant_tf(p), pid_tf(PIDGains(2.0, 1.0, 0.5))),
        setpoint_tf(PIDGains(2.0, 1.0), p),
        RationalTF((0.5 + 0.5j,), (1.0,)),
        RationalTF((1.0, 2.0), (1.0,)),
        RationalTF((1.0, 2.0 + 1.0j, 3.0), (1.0 + 0.5j, 1.0, 1.0)),
        RationalTF((1.0, 2.0, 3.0, 4.0), (1.0, 1.0, 1.0)),
    ]
    rng = np.random.default_rng(17)
    for tf in cases:
        sys = realize(tf)
        for _ in range(16):
            s = 2.0 * complex(rng.normal(), rng.normal())
            assert abs(sys.transfer_at(s) - tf(s)) < 1e-10


def test_realize_pid_structure():
    sys = realize(pid_tf(PIDGains(2.0, 1.0, 0.5)))
    assert sys.d_r == 2.0
    assert sys.d_dr == 0.5
    assert sys.order == 1
    assert sys.a[0, 0] == 0.0
    assert complex(sys.c[0] * sys.b_r[0]) == 1.0  # the k_I / s channel


def test_realize_biproper_has_no_feedthrough():
    # equal degrees: top coefficient rides the derivative channel, so a
    # step input produces a response that starts at zero
    tf = RationalTF((1.0, 2.0, 3.0), (1.0, 1.0, 1.0))
    sys = realize(tf)
    assert sys.d_r == 0.0
    assert sys.d_dr == 0.0
    ts, ys = step_response(tf, ReferenceSignal("step"), 0.5, 1e-3)
    assert ys[0] == 0.0


def test_realize_rejects_double_improper():
    with pytest.raises(DomainError, match="derivative"):
        realize(RationalTF((1.0, 2.0, 3.0), (1.0,)))
    with pytest.raises(DomainError, match="derivative"):
        realize(RationalTF((1.0, 2.0, 3.0, 4.0), (1.0, 1.0)))


def test_step_response_identity_tf_returns_reference():
    one = RationalTF((1.0,), (1.0,))
    ts, ys = step_response(one, ReferenceSignal("step", amplitude=0.5 + 0.5j), 1.0, 1e-3)
    assert np.all(ys == 0.5 + 0.5j)


def test_step_response_proportional_settles():
    g = plant_tf(ModeParams(gamma=1.0, omega=0.0))
    h = closed_loop(g, pid_tf(PIDGains(50.0)))
    ts, ys = step_response(h, ReferenceSignal("step"), 1.0, 1e-4)
    assert abs(ys[-1] - 100.0 / 101.0) <= 1e-6


def test_step_response_settles_to_dc_gain():
    p = ModeParams(gamma=2.0, omega=0.0)
    gains = pole_place_pi(1.0, 1.0, p)
    h = closed_loop(plant_tf(p), pid_tf(gains))
    amp = 0.8 - 0.3j
    ts, ys = step_response(h, ReferenceSignal("step", amplitude=amp), 30.0, 1e-3)
    assert abs(ys[-1] - h(0.0) * amp) <= 1e-6


def test_step_response_integrator_on_ramp_is_exact():
    # x' = r with r = t: RK4 quadrature is exact for polynomial input
    k = pid_tf(PIDGains(0.0, 2.0))
    ref = ReferenceSignal("ramp", amplitude=0.0, slope=1.0)
    ts, ys = step_response(k, ref, 2.0, 1e-2)
    assert np.max(np.abs(ys - ts * ts)) < 1e-12


def test_step_response_sinusoid_steady_state():
    p = ModeParams(gamma=2.0, omega=0.0)
    h = closed_loop(plant_tf(p), pid_tf(PIDGains(2.0, 1.0, 0.5)))
    ref = ReferenceSignal("sinusoid", amplitude=1.0, frequency=2.0)
    ts, ys = step_response(h, ref, 30.0, 1e-3)
    want = h(2.0j) * cmath.exp(2.0j * 30.0)
    assert abs(ys[-1] - want) <= 1e-5


def test_step_response_matches_filter_ode():
    ref = ReferenceSignal("step", amplitude=1.0)
    for k_p, k_i, k_d in [(2.0, 1.0, 0.5), (50.0, 0.0, 0.0), (0.0, 1.0, 0.0)]:
        for omega in (0.0, 0.5):
            p = ModeParams(gamma=1.0, omega=omega)
            gains = PIDGains(k_p, k_i, k_d)
            h = closed_loop(plant_tf(p), pid_tf(gains))
            ts, ys = step_response(h, ref, 5.0, 1e-3)
            ts2, a_arr, _ = noise_free_response(gains, ref, p, 5.0, 1e-3)
            assert np.max(np.abs(ys - a_arr)) < 1e-9


def test_step_response_grid_validation():
    one = RationalTF((1.0,), (1.0,))
    ref = ReferenceSignal("step")
    with pytest.raises(DomainError):
        step_response(one, ref, 1.0, -1e-3)
    with pytest.raises(DomainError):
        step_response(one, ref, 1.0, 0.3)

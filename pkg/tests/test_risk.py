"""Harm, time-to-contact, and collision probability kernels."""

import math

import mpmath
import numpy as np
import pytest

from crossgate.risk import (
    collision_probability,
    delta_v,
    disc_contact_time,
    harm_from_vectors,
)

mpmath.mp.dps = 50


def mp_delta_v(m_ego, m_other, v_ego, v_other, angle):
    m_ego, m_other, v_ego, v_other, angle = map(mpmath.mpf, (m_ego, m_other,
                                                             v_ego, v_other,
                                                             angle))
    rad = v_ego ** 2 + v_other ** 2 - 2 * v_ego * v_other * mpmath.cos(angle)
    if rad < 0:
        rad = mpmath.mpf(0)
    return (m_other / (m_ego + m_other)) * mpmath.sqrt(rad)


def test_delta_v_head_on_equal_masses():
    # equal masses, both 10 m/s, head on: 0.5 * sqrt(400)
    assert delta_v(1500.0, 1500.0, 10.0, 10.0, math.pi) == pytest.approx(10.0)


def test_delta_v_stationary_other():
    out = delta_v(1500.0, 90.0, 8.0, 0.0, 1.234)
    assert out == pytest.approx(90.0 / 1590.0 * 8.0)


def test_delta_v_identical_velocities():
    assert delta_v(1500.0, 1500.0, 7.0, 7.0, 0.0) == pytest.approx(0.0, abs=1e-9)


def test_delta_v_against_high_precision():
    rng = np.random.default_rng(3)
    for _ in range(200):
        m1 = float(rng.uniform(50, 3000))
        m2 = float(rng.uniform(50, 3000))
        v1 = float(rng.uniform(0, 30))
        v2 = float(rng.uniform(0, 30))
        ang = float(rng.uniform(-math.pi, math.pi))
        got = delta_v(m1, m2, v1, v2, ang)
        want = float(mp_delta_v(m1, m2, v1, v2, ang))
        assert got == pytest.approx(want, rel=1e-12, abs=1e-12)


def test_harm_from_vectors_matches_angle_form():
    rng = np.random.default_rng(4)
    for _ in range(200):
        vx1, vy1, vx2, vy2 = rng.uniform(-20, 20, size=4)
        m1 = float(rng.uniform(100, 3000))
        m2 = float(rng.uniform(50, 3000))
        got = harm_from_vectors(m1, m2, vx1, vy1, vx2, vy2)
        want = m2 / (m1 + m2) * math.hypot(vx1 - vx2, vy1 - vy2)
        assert got == pytest.approx(want, rel=1e-12, abs=1e-12)


def test_contact_time_overlap_is_zero():
    assert disc_contact_time(0.5, 0.0, 3.0, 0.0, 2.0) == 0.0


def test_contact_time_head_on_gap_over_speed():
    # gap between edges 6, closing speed 4
    t = disc_contact_time(8.0, 0.0, -4.0, 0.0, 2.0)
    assert t == pytest.approx(6.0 / 4.0)


def test_contact_time_parallel_courses_never():
    assert disc_contact_time(0.0, 5.0, 3.0, 0.0, 2.0) == math.inf


def test_contact_time_receding_never():
    assert disc_contact_time(4.0, 0.0, 2.0, 0.0, 2.0) == math.inf


def test_contact_time_zero_relative_velocity():
    assert disc_contact_time(4.0, 1.0, 0.0, 0.0, 2.0) == math.inf


def simulate_contact(rx, ry, vx, vy, radius_sum, dt=1e-3, horizon=60.0):
    """Forward-integrate the relative state until the discs touch."""
    t = 0.0
    while t <= horizon:
        if math.hypot(rx + vx * t, ry + vy * t) <= radius_sum:
            return t
        t += dt
    return math.inf


def test_contact_time_against_forward_simulation():
    rng = np.random.default_rng(5)
    checked = 0
    while checked < 60:
        rx, ry = rng.uniform(-25, 25, size=2)
        vx, vy = rng.uniform(-12, 12, size=2)
        rs = float(rng.uniform(0.5, 3.0))
        closed = disc_contact_time(float(rx), float(ry), float(vx), float(vy), rs)
        if not (0.0 < closed < 50.0):
            continue
        simulated = simulate_contact(float(rx), float(ry), float(vx), float(vy), rs)
        # the 1 ms sweep detects contact at the first grid point after touch
        assert closed <= simulated + 1e-9
        assert simulated - closed <= 1e-3 + 1e-9
        checked += 1


def test_contact_time_never_means_never():
    rng = np.random.default_rng(6)
    for _ in range(80):
        rx, ry = rng.uniform(-25, 25, size=2)
        vx, vy = rng.uniform(-12, 12, size=2)
        rs = float(rng.uniform(0.5, 3.0))
        if disc_contact_time(float(rx), float(ry), float(vx), float(vy), rs) \
                == math.inf:
            assert simulate_contact(float(rx), float(ry), float(vx), float(vy),
                                    rs, dt=5e-3) == math.inf


def test_collision_probability_boundaries():
    assert collision_probability(0.0, 1.5) == 1.0
    assert collision_probability(1.5, 1.5) == 0.0
    assert collision_probability(0.75, 1.5) == pytest.approx(0.25)
    assert collision_probability(2.0, 1.5) == 0.0
    assert collision_probability(math.inf, 1.5) == 0.0


def test_collision_probability_errors():
    with pytest.raises(ValueError):
        collision_probability(-0.1, 1.5)
    with pytest.raises(ValueError):
        collision_probability(0.5, 0.0)


def test_collision_probability_monotone_and_bounded():
    taus = [0.5, 1.5, 4.0]
    for tau in taus:
        grid = np.linspace(0.0, tau * 1.5, 200)
        probs = [collision_probability(float(t), tau) for t in grid]
        assert all(0.0 <= p <= 1.0 for p in probs)
        assert all(a >= b - 1e-15 for a, b in zip(probs, probs[1:]))


def test_collision_probability_against_high_precision():
    rng = np.random.default_rng(7)
    for _ in range(200):
        tau = float(rng.uniform(0.2, 5.0))
        ttc = float(rng.uniform(0.0, tau))
        want = float((1 - mpmath.mpf(ttc) / mpmath.mpf(tau)) ** 2)
        assert collision_probability(ttc, tau) == pytest.approx(want, rel=1e-12,
                                                                abs=1e-15)

"""Per-agent risk kernels: collision harm, time-to-collision, probability.

Harm is the ego's post-impact velocity change computed from the two
masses and the relative-velocity magnitude. TTC is the first time two
disc footprints touch under constant-velocity extrapolation; the
collision probability ramps quadratically from 0 at ``tau`` to 1 at
contact.
"""

from __future__ import annotations

import math


def delta_v(m_ego: float, m_other: float, v_ego: float, v_other: float,
            angle: float) -> float:
    """Ego velocity change for an impact at the given approach angle.

    ``angle`` is the angle between the two velocity vectors. The
    radicand is clamped at zero against rounding.
    """
    rad = v_ego * v_ego + v_other * v_other - 2.0 * v_ego * v_other * math.cos(angle)
    return m_other / (m_ego + m_other) * math.sqrt(max(0.0, rad))


def harm_from_vectors(m_ego: float, m_other: float,
                      vx_ego: float, vy_ego: float,
                      vx_other: float, vy_other: float) -> float:
    """delta_v expressed through velocity vectors (identical value)."""
    rel = math.hypot(vx_ego - vx_other, vy_ego - vy_other)
    return m_other / (m_ego + m_other) * rel


def disc_contact_time(rx: float, ry: float, vx: float, vy: float,
                      radius_sum: float) -> float:
    """First t >= 0 at which two discs touch; ``inf`` if they never do.

    ``(rx, ry)`` is the relative position, ``(vx, vy)`` the relative
    velocity (other minus ego for both).
    """
    c = rx * rx + ry * ry - radius_sum * radius_sum
    if c <= 0.0:
        return 0.0
    a = vx * vx + vy * vy
    b = rx * vx + ry * vy
    if a <= 1e-12 or b >= 0.0:
        return math.inf          # no relative motion, or separating
    disc = b * b - a * c
    if disc < 0.0:
        return math.inf          # closest approach misses
    return (-b - math.sqrt(disc)) / a


def collision_probability(ttc: float, tau_ttc: float) -> float:
    """Quadratic ramp: 1 at contact, 0 at and beyond the time threshold."""
    if ttc < 0.0:
        raise ValueError("ttc must be non-negative")
    if tau_ttc <= 0.0:
        raise ValueError("tau_ttc must be positive")
    if ttc > tau_ttc:
        return 0.0
    ratio = 1.0 - ttc / tau_ttc
    return ratio * ratio

"""Synthetic demonstration generators.

``letter_g_2d`` / ``letter_g_3d``
    Five handwritten-style "G" strokes over 2 s with per-demo scale,
    offset, rotation, time-warp and wobble perturbations.
``walk_com``
    Four center-of-mass trajectories over three 0.7 s periods, obtained by
    integrating the pendulum relation ``x_dot = (p - x) / b`` for a
    capture-point profile ``p`` that first drifts forward and then backward.
"""

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .exceptions import ValidationError
from .trajdata import DemoSet, numerical_derivative

H_COM = 0.8898
GRAVITY = 9.8
PERIOD = 0.7


def capture_gain(h_com=H_COM, g=GRAVITY):
    """Velocity weight ``sqrt(h_com / g)`` of the capture-point expression."""
    return float(np.sqrt(h_com / g))


def _min_jerk(tau):
    tau = np.clip(tau, 0.0, 1.0)
    return tau ** 3 * (10 - 15 * tau + 6 * tau ** 2)


def _g_path(u, radius=5.0, center=(3.5, 3.0)):
    """Unit-speed-ish G outline sampled at arc fractions ``u`` in [0, 1]."""
    theta0, theta1 = 0.1 * np.pi, 2.0 * np.pi
    arc = radius * (theta1 - theta0)
    bar = 0.65 * radius
    total = arc + bar
    # pad both ends so the smoothing below only rounds the corner
    pad = 0.1 * total
    dense = np.linspace(-0.1, 1.1, 4801)
    s = dense * total
    on_arc = s <= arc
    theta = theta0 + np.minimum(s, arc) / radius
    x = np.where(on_arc, center[0] + radius * np.cos(theta), center[0] + radius - (s - arc))
    y = np.where(on_arc, center[1] + radius * np.sin(theta), center[1])
    x = gaussian_filter1d(x, 40, mode="nearest")
    y = gaussian_filter1d(y, 40, mode="nearest")
    keep = (s >= -pad * 0.5) & (s <= total + pad * 0.5)
    return np.interp(u, dense[keep], x[keep]), np.interp(u, dense[keep], y[keep])


def _sample_with_derivative(fn, times, oversample=8):
    dense = np.linspace(times[0], times[-1], (times.size - 1) * oversample + 1)
    pos = fn(dense)
    vel = numerical_derivative(dense, pos)
    return pos[::oversample], vel[::oversample]


def letter_g_2d(seed=0, n_demos=5, n_points=200, t_end=2.0, radius=5.0):
    """Five planar "G" demonstrations on ``t = t_end/n_points, ..., t_end``."""
    rng = np.random.default_rng(seed)
    times = np.linspace(t_end / n_points, t_end, n_points)
    t0 = 0.0
    xi, xi_dot = [], []
    for _ in range(n_demos):
        scale = 1.0 + 0.06 * rng.standard_normal()
        offset = 0.4 * rng.standard_normal(2)
        rot = 0.05 * rng.standard_normal()
        warp = rng.uniform(-0.06, 0.06)
        wob_amp = 0.3 * rng.standard_normal(2)
        wob_phase = rng.uniform(0, 2 * np.pi, 2)
        cr, sr = np.cos(rot), np.sin(rot)

        def demo(t):
            tau = (t - t0) / (t_end - t0)
            tau = tau + warp * np.sin(np.pi * tau)
            # the pen is already moving when recording starts
            x, y = _g_path(0.4 * tau + 0.6 * _min_jerk(tau), radius * scale)
            x = x + wob_amp[0] * np.sin(2 * np.pi * tau + wob_phase[0])
            y = y + wob_amp[1] * np.sin(2 * np.pi * tau + wob_phase[1])
            xr = cr * (x - 3.5) - sr * (y - 3.0) + 3.5 + offset[0]
            yr = sr * (x - 3.5) + cr * (y - 3.0) + 3.0 + offset[1]
            return np.column_stack([xr, yr])

        pos, vel = _sample_with_derivative(demo, np.concatenate([[t0], times]))
        xi.append(pos[1:])
        xi_dot.append(vel[1:])
    return DemoSet(np.tile(times, (n_demos, 1)), np.array(xi), np.array(xi_dot))


def letter_g_3d(seed=0, n_demos=5, n_points=200, t_end=2.0):
    """Five spatial "G" demonstrations drawn on a tilted, slightly warped sheet."""
    rng = np.random.default_rng(seed)
    planar = letter_g_2d(seed, n_demos, n_points, t_end, radius=1.5)
    xi, xi_dot = [], []
    for m in range(n_demos):
        x, y = planar.xi[m].T
        xd, yd = planar.xi_dot[m].T
        tilt = np.array([0.3, -0.2]) + 0.03 * rng.standard_normal(2)
        bend = 0.05 * rng.standard_normal()
        z = 0.5 + tilt[0] * x + tilt[1] * y + bend * (x - 1.0) ** 2
        zd = tilt[0] * xd + tilt[1] * yd + 2.0 * bend * (x - 1.0) * xd
        xi.append(np.column_stack([x, y, z]))
        xi_dot.append(np.column_stack([xd, yd, zd]))
    return DemoSet(planar.times, np.array(xi), np.array(xi_dot))


def _smooth_step(t, start, width):
    return _min_jerk((t - start) / width)


def walk_com(seed=0, n_demos=4, n_points=211, periods=3, period=PERIOD):
    """Center-of-mass demonstrations over ``periods * period`` seconds.

    Capture points stay near the sagittal origin during the first period,
    then drift backward; laterally they sway once per period.
    """
    rng = np.random.default_rng(seed)
    t_end = periods * period
    times = np.linspace(0.0, t_end, n_points)
    b = capture_gain()
    xi, xi_dot = [], []
    for _ in range(n_demos):
        fwd = 0.008 + 0.003 * rng.standard_normal()
        back = -0.13 + 0.006 * rng.standard_normal()
        shift = 0.02 * rng.standard_normal()
        sway_amp = 0.055 + 0.005 * rng.standard_normal()
        sway_phase = 0.1 * rng.standard_normal()
        lat = -0.09 + 0.005 * rng.standard_normal()

        def cp_x(t):
            return fwd + (back - fwd) * _smooth_step(t, period + 0.05 + shift, 0.5)

        def cp_y(t):
            centre = lat - 0.035 * _smooth_step(t, 2 * period - 0.15 + shift, 0.3)
            return centre + sway_amp * np.sin(2 * np.pi * t / period + sway_phase)

        dense = np.linspace(0.0, t_end, (n_points - 1) * 20 + 1)
        dt = dense[1] - dense[0]
        px, py = cp_x(dense), cp_y(dense)
        x = np.empty_like(dense)
        y = np.empty_like(dense)
        x[0], y[0] = px[0] - 0.02, py[0]
        decay = np.exp(-dt / b)
        for k in range(dense.size - 1):
            # exact update for piecewise-constant capture point
            x[k + 1] = px[k] + (x[k] - px[k]) * decay
            y[k + 1] = py[k] + (y[k] - py[k]) * decay
        pos = np.column_stack([x, y])
        vel = numerical_derivative(dense, pos)
        xi.append(pos[::20])
        xi_dot.append(vel[::20])
    return DemoSet(np.tile(times, (n_demos, 1)), np.array(xi), np.array(xi_dot))


GENERATORS = {
    "letter_g_2d": letter_g_2d,
    "letter_g_3d": letter_g_3d,
    "walk_com": walk_com,
}


def gen_scenario(name, params=None, seed=0):
    """Run the named generator with ``params`` as keyword arguments."""
    try:
        fn = GENERATORS[name]
    except KeyError:
        raise ValidationError(
            f"unknown generator {name!r}; choose from {sorted(GENERATORS)}", "ingest"
        ) from None
    return fn(seed=seed, **(params or {}))

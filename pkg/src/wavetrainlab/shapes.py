"""Initial-data shapes on the N-period torus.

All shapes are centered in the domain and decay to machine zero well before
the edges, emulating whole-line data; localization is always checked by the
consumers, never assumed.
"""

import numpy as np
from scipy.special import erf


def domain_grid(n_periods, pts_per_period):
    """Sample points over [0, N) with the origin at the left edge."""
    total = n_periods * pts_per_period
    return np.arange(total) * (n_periods / total)


def smoothed_box(x, n_periods, amplitude, half_width=None, edge_width=2.0):
    """Plateau of the given amplitude with error-function edges.

    Rises near N/2 - half_width, falls near N/2 + half_width; the derivative
    is a pair of opposite Gaussian bumps of scale edge_width.
    """
    if half_width is None:
        half_width = n_periods / 8.0
    center = n_periods / 2.0
    up = erf((x - (center - half_width)) / (np.sqrt(2.0) * edge_width))
    down = erf((x - (center + half_width)) / (np.sqrt(2.0) * edge_width))
    return amplitude * 0.5 * (up - down)


def gaussian_bump(x, n_periods, amplitude, width=1.0, center_offset=0.0,
                  direction=None, n_components=1):
    """Localized vector bump; direction defaults to equal weight per component."""
    center = n_periods / 2.0 + center_offset
    scalar = amplitude * np.exp(-((x - center) ** 2) / (2.0 * width**2))
    if direction is None:
        direction = np.ones(n_components)
    direction = np.asarray(direction, dtype=float)
    return direction[:, None] * scalar[None, :]


def gaussian_bump_integral(x, n_periods, amplitude, width=1.0):
    """Smoothed single step: integral of a unit-mass Gaussian, scaled."""
    center = n_periods / 2.0
    return amplitude * 0.5 * (1.0 + erf((x - center) / (np.sqrt(2.0) * width)))

"""
Families of Dirichlet data supported on Γ.

On a partial arc every datum is multiplied by a smooth taper that rises
over the first and last two boundary edges, so it vanishes at the arc ends.
"""
import math

import numpy as np

from meshes.models import NodeTag

from ..models import BoundaryData


def gamma_parameter(mesh):
    """
    Arc parameter s in [0, 1] of every Γ node, the angular width of Γ and
    whether Γ is the whole outer circle (then s = θ / 2π).
    """
    x, y = mesh.vertices[mesh.gamma_nodes].T
    theta = np.mod(np.arctan2(y, x), 2.0 * math.pi)
    if not np.any(mesh.node_tags == NodeTag.OUTER):
        return theta / (2.0 * math.pi), 2.0 * math.pi, True
    order = np.sort(theta)
    gaps = np.diff(np.append(order, order[0] + 2.0 * math.pi))
    start = order[(np.argmax(gaps) + 1) % len(order)]
    offset = np.mod(theta - start, 2.0 * math.pi)
    width = float(offset.max())
    return (offset / width if width > 0 else offset), width, False


def gamma_taper(mesh, edges=2):
    """Smoothstep weight rising from 0 to 1 over ``edges`` boundary edges at each arc end."""
    s, width, full = gamma_parameter(mesh)
    if full:
        return np.ones_like(s)
    points = mesh.vertices[mesh.gamma_nodes]
    radius = float(np.mean(np.hypot(points[:, 0], points[:, 1])))
    outer = mesh.boundary_edges[mesh.edge_tags != NodeTag.CAVITY]
    d = mesh.vertices[outer[:, 0]] - mesh.vertices[outer[:, 1]]
    edge = float(np.mean(np.hypot(d[:, 0], d[:, 1])))
    distance = np.minimum(s, 1.0 - s) * width * radius
    t = np.clip(distance / (edges * edge), 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def _normalized(mesh, values, amplitude):
    peak = np.max(np.abs(values)) if len(values) else 0.0
    if peak == 0:
        return BoundaryData(mesh, values)
    return BoundaryData(mesh, amplitude * values / peak)


def trig_family(mesh, n_modes, amplitude=1.0):
    """
    Trigonometric traces with sup norm ``amplitude``: cos θ, sin θ, cos 2θ, ...
    on the full circle, taper * cos(π k s) and taper * sin(π k s) on an arc.
    """
    s, _, full = gamma_parameter(mesh)
    taper = gamma_taper(mesh)
    family = []
    for j in range(n_modes):
        if full:
            k = j // 2 + 1
            wave = np.cos(2.0 * math.pi * k * s) if j % 2 == 0 else np.sin(2.0 * math.pi * k * s)
        else:
            wave = np.cos(math.pi * (j // 2) * s) if j % 2 == 0 else np.sin(math.pi * (j // 2 + 1) * s)
        family.append(_normalized(mesh, taper * wave, amplitude))
    return family


def positive_family(mesh, n_bumps, amplitude=1.0):
    """Nonnegative raised-cosine bumps centred at s = (j + 1/2) / n, never identically zero."""
    s, _, _ = gamma_parameter(mesh)
    taper = gamma_taper(mesh)
    family = []
    for j in range(n_bumps):
        center = (j + 0.5) / n_bumps
        bump = 0.5 * (1.0 + np.cos(2.0 * math.pi * (s - center)))
        family.append(_normalized(mesh, taper * bump, amplitude))
    return family


def random_data(mesh, rng, amplitude, n_modes=6):
    """Random combination of the trigonometric family, scaled to sup norm ``amplitude``."""
    family = trig_family(mesh, n_modes)
    weights = rng.standard_normal(n_modes)
    values = sum(w * f.values for w, f in zip(weights, family))
    return _normalized(mesh, values, amplitude)

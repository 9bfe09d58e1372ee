"""Reference implementations used only by the tests."""

import itertools
import math

import numpy as np


def mcd_direct(t1, d1, t2, d2, zeta, std, rng):
    """MCD straight from its definition (angles in degrees)."""
    u1 = np.array([math.cos(math.radians(t1)), math.sin(math.radians(t1))])
    u2 = np.array([math.cos(math.radians(t2)), math.sin(math.radians(t2))])
    ang = 0.5 * np.linalg.norm(u1 - u2)
    dl = 0.0 if rng == 0 else zeta * abs(d1 - d2) / rng * std / rng
    return math.sqrt(ang**2 + dl**2)


def cluster_cost(theta, tau, w, zeta, std, rng):
    """Power-weighted squared MCD to the best centroid (circular / arithmetic mean)."""
    z = np.sum(w * np.exp(1j * np.deg2rad(theta)))
    c_t = math.degrees(math.atan2(z.imag, z.real)) if abs(z) > 1e-300 else 0.0
    c_d = np.dot(w, tau) / w.sum()
    return sum(wi * mcd_direct(t, d, c_t, c_d, zeta, std, rng) ** 2 for t, d, wi in zip(theta, tau, w))


def exhaustive_optimum(theta, tau, w, k, zeta):
    """Minimum cost over every partition of the points into exactly k non-empty clusters."""
    n = len(theta)
    std, rng = float(np.std(tau)), float(np.ptp(tau))
    best = math.inf
    for labels in itertools.product(range(k), repeat=n):
        # canonical form only: first occurrence order 0, 1, 2, ...
        seen = []
        for lab in labels:
            if lab not in seen:
                seen.append(lab)
        if seen != list(range(k)):
            continue
        lab = np.array(labels)
        cost = sum(cluster_cost(theta[lab == j], tau[lab == j], w[lab == j], zeta, std, rng) for j in range(k))
        best = min(best, cost)
    return best


def exhaustive_optimum_fast(theta, tau, w, k, zeta):
    """Vectorized twin of :func:`exhaustive_optimum` (all label vectors at once)."""
    theta, tau, w = (np.asarray(x, float) for x in (theta, tau, w))
    n = theta.size
    std, rng = float(np.std(tau)), float(np.ptp(tau))
    scale = 0.0 if rng == 0 else zeta * std / rng**2
    labels = np.array(list(itertools.product(range(k), repeat=n)), dtype=np.int64)
    labels = labels[np.all([np.any(labels == j, axis=1) for j in range(k)], axis=0)]
    u = np.exp(1j * np.deg2rad(theta))
    total = np.zeros(len(labels))
    for j in range(k):
        m = (labels == j) * w  # (P, n) member weights
        z = m @ u
        c = np.where(np.abs(z) > 1e-300, z / np.where(np.abs(z) > 0, np.abs(z), 1.0), 1.0)
        tc = (m @ tau) / m.sum(axis=1)
        ang = 0.25 * np.abs(u[None, :] - c[:, None]) ** 2
        dl = (scale * (tau[None, :] - tc[:, None])) ** 2
        total += np.sum(m * (ang + dl), axis=1)
    return float(total.min())

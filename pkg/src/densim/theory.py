"""Scale-free density error metric, its asymptotic closed form, and bounds.

``psi`` is a sensed density vector, ``phi`` the ground truth. Sensed densities
are only meaningful up to a positive scale, so comparisons go through the
member of ``psi``'s scaling class closest to ``phi``.
"""
from __future__ import annotations

import math

import numpy as np


class UninformativeBound(ValueError):
    """Sampled mean density does not exceed the false-positive rate."""


def _pair(psi, phi) -> tuple[np.ndarray, np.ndarray]:
    psi = np.asarray(psi, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if psi.shape != phi.shape or psi.ndim != 1:
        raise ValueError(f"dimension mismatch: {psi.shape} vs {phi.shape}")
    return psi, phi


def _density(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    if phi.ndim != 1 or phi.size == 0:
        raise ValueError("density vector must be 1-D and non-empty")
    if (phi < 0).any():
        raise ValueError("density vector has negative entries")
    return phi


def project(psi, phi) -> np.ndarray:
    """Closest point to ``phi`` on the line through ``psi``."""
    psi, phi = _pair(psi, phi)
    nn = float(psi @ psi)
    if nn == 0.0:
        return np.zeros_like(psi)
    return psi * (float(psi @ phi) / nn)


def normalized_error(psi, phi) -> float:
    """``|psi' - phi| / (|psi'| + |phi|)`` in [0, 1]; 0 when both vanish."""
    psi, phi = _pair(psi, phi)
    proj = project(psi, phi)
    denom = np.linalg.norm(proj) + np.linalg.norm(phi)
    if denom == 0.0:
        return 0.0
    return float(min(1.0, np.linalg.norm(proj - phi) / denom))


def closed_form_error(p: float, s: float, c: float) -> float:
    """Limit of the normalized error when ``psi = p*phi + lam``.

    ``s`` is ``lam / h`` and ``c`` the shape parameter of ``phi``.
    """
    if p <= 0:
        raise ValueError("closed form requires p > 0")
    if s < 0:
        raise ValueError("s = lambda/h must be >= 0")
    if c < 1:
        raise ValueError("shape parameter c must be >= 1")
    c2 = c * c
    radicand = c2 * (p + s) ** 2 + (p * c2 + s) ** 2 - 2 * (p + s) * (p * c2 + s)
    num = s * math.sqrt(max(radicand, 0.0))
    den = (p * c2 + s) * math.sqrt(p * p * c2 + s * s + 2 * p * s) + (p * p * c2 + 2 * p * s + s * s) * c
    return num / den


def bound_tight(p: float, lam: float, h: float, c: float) -> float:
    if p <= 0 or h <= 0:
        raise ValueError("p and h must be positive")
    if c < 1:
        raise ValueError("shape parameter c must be >= 1")
    return math.sqrt(c * c - 1) * lam / (2 * c * c * h * p)


def bound_loose(p: float, lam: float, h: float) -> float:
    """Shape-free bound ``lam / (4 h p)``."""
    if p <= 0 or h <= 0:
        raise ValueError("p and h must be positive")
    return lam / (4 * h * p)


def bound_from_sampled_density(lam: float, h_hat: float) -> float:
    """Bound from the sensed mean density: ``lam / (4 (h_hat - lam))``.

    Raises :class:`UninformativeBound` when ``h_hat <= lam``.
    """
    if h_hat <= lam:
        raise UninformativeBound(f"h_hat={h_hat} <= lambda={lam}; bound is uninformative")
    return lam / (4 * (h_hat - lam))


def shape_c(phi) -> float:
    phi = _density(phi)
    m = float(phi.sum())
    if m <= 0:
        raise ValueError("shape parameter undefined for an all-zero density")
    c = float(np.linalg.norm(phi)) * math.sqrt(phi.size) / m
    # clip rounding just outside [1, sqrt(r)]
    return min(max(c, 1.0), math.sqrt(phi.size))


def mean_density(phi) -> float:
    return float(_density(phi).mean())


def unbiased_h(h_hat: float, p: float, lam: float) -> float:
    if p <= 0:
        raise ValueError("p must be positive")
    return (h_hat - lam) / p


def expected_psi(phi, p: float, lam: float) -> np.ndarray:
    """Asymptotic sensed density ``p*phi + lam`` for the bucket model."""
    return p * _density(phi) + lam

"""Correlation estimates, error bars and derived quantities."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid

from .errors import StructuralError
from .hilbert import Operator


@dataclass
class CorrelationSeries:
    """Ensemble mean of w<psi|A|phi> on a time grid.

    ``K == 0`` marks an exact (oracle) series.  Standard errors are reported
    per component of the complex mean.
    """

    times: np.ndarray
    mean: np.ndarray
    stderr_real: np.ndarray
    stderr_imag: np.ndarray
    K: int
    normalization: complex | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.mean = np.asarray(self.mean, dtype=complex)
        self.stderr_real = np.asarray(self.stderr_real, dtype=float)
        self.stderr_imag = np.asarray(self.stderr_imag, dtype=float)
        n = self.times.size
        if not (self.mean.size == self.stderr_real.size == self.stderr_imag.size == n):
            raise StructuralError("series arrays must have equal length")
        if n > 1 and not np.all(np.diff(self.times) > 0):
            raise StructuralError("times must be strictly increasing")
        if self.K < 0:
            raise StructuralError("K must be >= 0")

    @property
    def stderr(self) -> np.ndarray:
        return np.maximum(self.stderr_real, self.stderr_imag)

    @property
    def exact(self) -> bool:
        return self.K == 0

    @property
    def low_confidence(self) -> bool:
        return self.K == 1

    @property
    def normalized(self) -> np.ndarray:
        if self.normalization is None or self.normalization == 0:
            raise ValueError("series has no usable normalization")
        return self.mean / self.normalization

    def values(self, normalized: bool = True) -> np.ndarray:
        if normalized and self.normalization not in (None, 0):
            return self.normalized
        return self.mean


class SampleStats:
    """Mean and centred second moments of complex samples, mergeable.

    Uses shifted two-pass sums within a block and Chan's update across blocks,
    so identical samples give exactly zero spread.
    """

    def __init__(self, n, mean, m2_re, m2_im):
        self.n = int(n)
        self.mean = np.asarray(mean, dtype=complex)
        self.m2_re = np.asarray(m2_re, dtype=float)
        self.m2_im = np.asarray(m2_im, dtype=float)

    @classmethod
    def from_samples(cls, x) -> "SampleStats":
        x = np.asarray(x, dtype=complex)
        if x.ndim == 1:
            x = x[:, None]
        if x.shape[0] == 0:
            raise ValueError("no samples")
        d = x - x[0]
        dm = d.mean(axis=0)
        r = d - dm
        return cls(x.shape[0], x[0] + dm, (r.real ** 2).sum(axis=0), (r.imag ** 2).sum(axis=0))

    def merge(self, other: "SampleStats") -> "SampleStats":
        n = self.n + other.n
        delta = other.mean - self.mean
        f = self.n * other.n / n
        return SampleStats(n, self.mean + delta * (other.n / n),
                           self.m2_re + other.m2_re + delta.real ** 2 * f,
                           self.m2_im + other.m2_im + delta.imag ** 2 * f)

    def stderr(self):
        if self.n < 2:
            z = np.zeros_like(self.m2_re)
            return z, z.copy()
        den = self.n * (self.n - 1)
        return np.sqrt(self.m2_re / den), np.sqrt(self.m2_im / den)


def sample_correlator(pair, A: Operator) -> complex:
    """w <psi|A|phi> for one pair."""
    if A.dim != pair.phi.shape[0]:
        raise StructuralError("observable and pair dimensions differ")
    return complex(pair.weight * np.vdot(pair.psi, A.apply(pair.phi)))


def aggregate(samples, times=None, normalization=None) -> CorrelationSeries:
    """Mean and standard error per time from a ``(K, n_times)`` sample array."""
    x = np.asarray(samples, dtype=complex)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] == 0:
        raise ValueError("K = 0: nothing to aggregate")
    stats = SampleStats.from_samples(x)
    se_re, se_im = stats.stderr()
    if times is None:
        times = np.arange(x.shape[1], dtype=float)
    return CorrelationSeries(times, stats.mean, se_re, se_im, x.shape[0], normalization)


def error_bound(ensemble) -> float:
    """(1/K) * mean |w|^2 <phi|phi><psi|psi> over a list of pairs."""
    if not ensemble:
        raise ValueError("empty ensemble")
    vals = [abs(p.weight) ** 2 * np.vdot(p.phi, p.phi).real * np.vdot(p.psi, p.psi).real
            for p in ensemble]
    return float(np.mean(vals) / len(vals))


def spectrum(series: CorrelationSeries, omega_grid, normalized: bool = True) -> np.ndarray:
    """S(w) = 2 Re int_0^T g(t) exp(iwt) dt by the trapezoidal rule.

    Assumes g(-t) = conj(g(t)) and a uniform grid starting at t = 0.
    """
    t = series.times
    if t.size < 2:
        raise StructuralError("need at least two samples")
    steps = np.diff(t)
    if not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12):
        raise StructuralError("time grid must be uniform")
    g = series.values(normalized)
    omega = np.asarray(omega_grid, dtype=float)
    phase = np.exp(1j * np.outer(omega, t))
    return 2.0 * trapezoid(g[None, :] * phase, t, axis=1).real


def fit_tunneling_time(series: CorrelationSeries, window, normalized: bool = True) -> float:
    """Fit ln|g| = c + m t on ``window`` and return T = -2/m."""
    lo, hi = window
    t = series.times
    if lo < t[0] - 1e-12 or hi > t[-1] + 1e-12 or lo >= hi:
        raise StructuralError("window outside the series range")
    sel = (t >= lo - 1e-12) & (t <= hi + 1e-12)
    if sel.sum() < 4:
        raise StructuralError("fewer than 4 points in the fit window")
    g = np.abs(series.values(normalized)[sel])
    if not np.all(g > 0):
        raise StructuralError("non-positive |g| inside the fit window")
    slope, _ = np.polyfit(t[sel], np.log(g), 1)
    return -2.0 / slope


def kinsler_drummond_T(lam: float, G: float, gamma1: float) -> float:
    """Potential-barrier estimate of the DOPO tunneling time."""
    sigma = 1.0 - G * G / 2.0
    if not lam > sigma:
        raise ValueError(f"pump ratio {lam} must exceed sigma = {sigma}")
    pref = math.pi / gamma1 * math.sqrt((lam + sigma) / (lam * (lam - sigma) ** 2))
    return pref * math.exp(2.0 / (G * G) * (lam - sigma - sigma * math.log(lam / sigma)))

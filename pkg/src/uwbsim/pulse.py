"""Unit-energy Gaussian-derivative pulses and their correlation functions.

The pulse family is ``p_n(t) ∝ d^n/dt^n exp(-2π t²/τ²)``. Given only the
support width ``Tm`` the shaping factor ``τ`` is solved so that 99.9 % of
the continuous pulse energy falls inside ``[-Tm/2, Tm/2]``; the pulse is then
sampled on that window and renormalised to unit energy.

Sampling convention: a pulse of ``n`` samples has sample times
``(k - (n - 1)/2) * dt``. With the default ``dt = Tm/100`` there is no sample
at ``t = 0``, so the left and right halves of an even pulse carry exactly the
same number of samples.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial import hermite
from scipy import integrate, optimize

ENERGY_FRACTION = 0.999


@dataclass
class SampledWaveform:
    """Uniformly sampled real signal.

    Attributes
    ----------
    samples : ndarray
        Real amplitudes.
    sample_interval : float
        Seconds between samples.
    start_time : float
        Time of ``samples[0]`` in seconds.
    """

    samples: np.ndarray
    sample_interval: float
    start_time: float = 0.0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if not self.sample_interval > 0:
            raise ValueError("sample_interval must be positive")

    def __len__(self):
        return self.samples.size

    @property
    def times(self) -> np.ndarray:
        return self.start_time + self.sample_interval * np.arange(self.samples.size)

    @property
    def duration(self) -> float:
        return self.samples.size * self.sample_interval

    @property
    def energy(self) -> float:
        return float(np.dot(self.samples, self.samples) * self.sample_interval)


@dataclass(frozen=True)
class PulseSpec:
    """Gaussian-derivative pulse description.

    ``shaping_tau=None`` means "solve it from the 99.9 % energy rule";
    ``sample_interval=None`` defaults to ``duration_Tm / 100``.
    """

    order: int = 2
    duration_Tm: float = 0.5e-9
    shaping_tau: float | None = None
    sample_interval: float | None = None
    _resolved_dt: float = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if int(self.order) != self.order or self.order < 1:
            raise ValueError(f"pulse order must be an integer >= 1, got {self.order!r}")
        if not self.duration_Tm > 0:
            raise ValueError("duration_Tm must be positive")
        dt = self.duration_Tm / 100 if self.sample_interval is None else self.sample_interval
        if not dt > 0:
            raise ValueError("sample_interval must be positive")
        if dt > self.duration_Tm / 50 * (1 + 1e-12):
            raise ValueError(
                f"sample_interval {dt:g} s exceeds duration_Tm/50 = {self.duration_Tm / 50:g} s"
            )
        if self.shaping_tau is not None and not self.shaping_tau > 0:
            raise ValueError("shaping_tau must be positive")
        object.__setattr__(self, "_resolved_dt", float(dt))

    @property
    def dt(self) -> float:
        return self._resolved_dt

    @property
    def tau(self) -> float:
        if self.shaping_tau is not None:
            return float(self.shaping_tau)
        return self.duration_Tm / support_ratio(self.order)


def gaussian_derivative(order, shaping_tau, t):
    """n-th time derivative of ``exp(-2π t²/τ²)`` (unnormalised).

    Uses ``d^n/du^n exp(-u²) = (-1)^n H_n(u) exp(-u²)`` with physicists'
    Hermite polynomials and ``u = sqrt(2π) t / τ``.
    """
    if int(order) != order or order < 1:
        raise ValueError(f"order must be an integer >= 1, got {order!r}")
    if not shaping_tau > 0:
        raise ValueError("shaping_tau must be positive")
    order = int(order)
    scale = np.sqrt(2 * np.pi) / shaping_tau
    u = scale * np.asarray(t, dtype=float)
    coeffs = np.zeros(order + 1)
    coeffs[order] = 1.0
    out = (-1) ** order * scale**order * hermite.hermval(u, coeffs) * np.exp(-u * u)
    return out if out.ndim else float(out)


def _energy_fraction(order: int, ratio: float) -> float:
    """Fraction of ∫p² inside |t| <= ratio/2 for τ = 1."""
    f = lambda t: gaussian_derivative(order, 1.0, t) ** 2  # noqa: E731
    inside, _ = integrate.quad(f, 0.0, ratio / 2, epsabs=0, epsrel=1e-13, limit=200)
    outside, _ = integrate.quad(f, ratio / 2, np.inf, epsabs=0, epsrel=1e-13, limit=200)
    return inside / (inside + outside)


@lru_cache(maxsize=None)
def support_ratio(order: int, fraction: float = ENERGY_FRACTION) -> float:
    """Ratio ``Tm/τ`` at which exactly ``fraction`` of the energy lies in ``[-Tm/2, Tm/2]``."""
    return optimize.brentq(lambda r: _energy_fraction(order, r) - fraction, 0.05, 20.0, xtol=1e-14)


def energy_fraction_in_support(spec: PulseSpec) -> float:
    return _energy_fraction(spec.order, spec.duration_Tm / spec.tau)


def make_pulse(spec: PulseSpec) -> SampledWaveform:
    """Sample the pulse on ``[-Tm/2, Tm/2]`` and normalise to unit energy.

    Raises
    ------
    ValueError
        If the shaping factor leaves less than 99.9 % of the energy inside the
        support window.
    """
    frac = energy_fraction_in_support(spec)
    if frac < ENERGY_FRACTION - 1e-9:
        raise ValueError(
            f"shaping_tau={spec.tau:g} s keeps only {100 * frac:.4f}% of the pulse energy "
            f"inside Tm={spec.duration_Tm:g} s (need >= {100 * ENERGY_FRACTION:.1f}%)"
        )
    dt = spec.dt
    n = max(int(round(spec.duration_Tm / dt)), 2)
    t = (np.arange(n) - (n - 1) / 2) * dt
    s = gaussian_derivative(spec.order, spec.tau, t)
    s /= np.sqrt(np.dot(s, s) * dt)
    return SampledWaveform(s, dt, float(t[0]))


def correlation_table(a: SampledWaveform, b: SampledWaveform):
    """Discrete cross-correlation ``c[k] = Σ_n a[n] b[n-k] dt`` for every lag.

    Returns ``(lags, values)`` with integer sample lags from ``-(len(b)-1)``
    to ``len(a)-1``. Both waveforms must share the grid.
    """
    _check_same_grid(a, b)
    vals = np.correlate(a.samples, b.samples, mode="full") * a.sample_interval
    lags = np.arange(-(len(b) - 1), len(a))
    return lags, vals


def correlation(a: SampledWaveform, b: SampledWaveform, lag):
    """``∫ a(t) b(t - lag) dt`` on the shared sample grid.

    Non-integer sample lags are linearly interpolated; lags beyond the joint
    support give exactly 0.
    """
    lags, vals = correlation_table(a, b)
    x = np.asarray(lag, dtype=float) / a.sample_interval
    out = np.interp(x, lags, vals, left=0.0, right=0.0)
    return out if out.ndim else float(out)


def autocorrelation(p: SampledWaveform, lag):
    """``R(lag) = ∫ p(t) p(t + lag) dt``; zero for ``|lag| >= duration``."""
    return correlation(p, p, lag)


def bandwidth_10db(p: SampledWaveform, n_fft: int = 1 << 16) -> float:
    """Width in Hz of the contiguous band around the spectral peak within 10 dB of it."""
    spec = np.abs(np.fft.rfft(p.samples, n_fft)) ** 2
    f = np.fft.rfftfreq(n_fft, p.sample_interval)
    k = int(np.argmax(spec))
    above = spec >= spec[k] / 10
    lo = k
    while lo > 0 and above[lo - 1]:
        lo -= 1
    hi = k
    while hi < above.size - 1 and above[hi + 1]:
        hi += 1
    return float(f[hi] - f[lo])


def _check_same_grid(a: SampledWaveform, b: SampledWaveform):
    if not np.isclose(a.sample_interval, b.sample_interval, rtol=1e-12, atol=0):
        raise ValueError("waveforms use different sample intervals")
    if not np.isclose(a.start_time, b.start_time, rtol=0, atol=1e-6 * a.sample_interval):
        raise ValueError("waveforms are not aligned on the same start time")

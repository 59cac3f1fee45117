"""IEEE 802.15.4a style multipath channel generator.

Clusters arrive as a Poisson process, rays within a cluster as a two-rate
mixed Poisson process, mean ray power decays exponentially across and within
clusters, and each tap amplitude is Nakagami-m with a random sign.

All times in this module are in nanoseconds and rates in 1/ns.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, fields, replace
from functools import lru_cache

import numpy as np
from scipy import stats

TAU_MAX_CAP_NS = 300.0


@dataclass(frozen=True)
class ChannelParams:
    """Statistical channel parameters (times in ns, rates in 1/ns).

    ``tau_max_ns=None`` selects the energy-fraction policy: the smallest
    delay holding ``tau_max_energy_fraction`` of the expected energy, capped
    at ``tau_max_cap_ns``.
    """

    mean_clusters_Lbar: float
    cluster_rate_Lambda: float
    ray_rate_lambda1: float
    ray_rate_lambda2: float
    mix_beta: float
    cluster_decay_Gamma: float
    intra_decay_gamma0: float
    intra_decay_slope_kgamma: float = 0.0
    cluster_shadowing_sigma_dB: float = 0.0
    nakagami_m_mean: float = 1.0
    nakagami_m_sigma: float = 0.0
    tau_max_ns: float | None = None
    tau_max_energy_fraction: float = 0.995
    tau_max_cap_ns: float = TAU_MAX_CAP_NS

    def __post_init__(self):
        positive = (
            "cluster_rate_Lambda",
            "ray_rate_lambda1",
            "ray_rate_lambda2",
            "cluster_decay_Gamma",
            "intra_decay_gamma0",
            "tau_max_cap_ns",
        )
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)!r}")
        if self.mean_clusters_Lbar < 0:
            raise ValueError("mean_clusters_Lbar must be >= 0")
        if not 0.0 <= self.mix_beta <= 1.0:
            raise ValueError(f"mix_beta must lie in [0, 1], got {self.mix_beta!r}")
        if self.intra_decay_slope_kgamma < 0:
            raise ValueError("intra_decay_slope_kgamma must be >= 0")
        if self.cluster_shadowing_sigma_dB < 0 or self.nakagami_m_sigma < 0:
            raise ValueError("spread parameters must be >= 0")
        if self.nakagami_m_mean < 0.5:
            raise ValueError(f"nakagami_m_mean must be >= 0.5, got {self.nakagami_m_mean!r}")
        if self.tau_max_ns is not None and not self.tau_max_ns > 0:
            raise ValueError("tau_max_ns must be > 0")
        if not 0.0 < self.tau_max_energy_fraction < 1.0:
            raise ValueError("tau_max_energy_fraction must lie in (0, 1)")

    @property
    def ray_rate_effective(self) -> float:
        """``(1-β)λ1 + βλ2``, the bracketed rate in the mean ray power."""
        return (1 - self.mix_beta) * self.ray_rate_lambda1 + self.mix_beta * self.ray_rate_lambda2

    def gamma_l(self, T_l):
        return self.intra_decay_slope_kgamma * np.asarray(T_l, dtype=float) + self.intra_decay_gamma0

    @property
    def tau_max(self) -> float:
        if self.tau_max_ns is not None:
            return float(self.tau_max_ns)
        return _energy_tau_max(self)

    def with_overrides(self, **kw) -> "ChannelParams":
        return replace(self, **kw)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


PRESETS = {
    "residential_los": ChannelParams(
        mean_clusters_Lbar=3.0,
        cluster_rate_Lambda=0.047,
        ray_rate_lambda1=1.54,
        ray_rate_lambda2=0.15,
        mix_beta=0.095,
        cluster_decay_Gamma=22.61,
        intra_decay_gamma0=12.53,
    ),
    "indoor_office_los": ChannelParams(
        mean_clusters_Lbar=5.4,
        cluster_rate_Lambda=0.016,
        ray_rate_lambda1=0.19,
        ray_rate_lambda2=2.97,
        mix_beta=0.0184,
        cluster_decay_Gamma=14.6,
        intra_decay_gamma0=6.4,
    ),
}


def preset(name: str, **overrides) -> ChannelParams:
    try:
        base = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown channel preset {name!r}; choose from {sorted(PRESETS)}") from None
    return base.with_overrides(**overrides) if overrides else base


def cluster_count_survival(params: ChannelParams, l_max: int) -> np.ndarray:
    """``P(L >= l)`` for l = 1..l_max with ``L = max(1, Poisson(L̄))``."""
    l = np.arange(1, l_max + 1)
    out = stats.poisson.sf(l - 1, params.mean_clusters_Lbar)
    out[0] = 1.0
    return out


def _cluster_cumulative_energy(params, T, x):
    """Expected energy of one cluster started at ``T`` within delay ``x`` of its start."""
    g = params.gamma_l(T)
    lam = params.ray_rate_effective
    x = np.maximum(x, 0.0)
    return np.exp(-T / params.cluster_decay_Gamma) / (g * (lam + 1)) * (1 + lam * g * (1 - np.exp(-x / g)))


@lru_cache(maxsize=64)
def _energy_tau_max(params: ChannelParams) -> float:
    step = 0.25
    cap = params.tau_max_cap_ns
    t = np.arange(0.0, cap + step / 2, step)
    # cluster 1 is pinned at T = 0; later clusters average over Erlang arrival times
    cum = _cluster_cumulative_energy(params, 0.0, t)
    total = float(_cluster_cumulative_energy(params, 0.0, np.inf))
    horizon = np.arange(step / 2, 40 * max(params.cluster_decay_Gamma, 1 / params.cluster_rate_Lambda), step)
    survival = cluster_count_survival(params, 200)
    for l in range(2, survival.size + 1):
        w = survival[l - 1]
        if w < 1e-12:
            break
        dens = stats.gamma.pdf(horizon, a=l - 1, scale=1 / params.cluster_rate_Lambda) * w * step
        total += float(np.sum(dens * _cluster_cumulative_energy(params, horizon, np.inf)))
        inside = horizon <= cap
        Tj = horizon[inside]
        cum += np.sum(
            dens[inside][None, :] * _cluster_cumulative_energy(params, Tj[None, :], t[:, None] - Tj[None, :])
            * (t[:, None] >= Tj[None, :]),
            axis=1,
        )
    hit = np.nonzero(cum >= params.tau_max_energy_fraction * total)[0]
    return float(t[hit[0]]) if hit.size else float(cap)


def sample_cluster_arrivals(params: ChannelParams, rng: np.random.Generator) -> np.ndarray:
    """Cluster arrival times (ns): ``T_1 = 0`` and exponential gaps at rate Λ."""
    n = max(1, int(rng.poisson(params.mean_clusters_Lbar)))
    gaps = rng.exponential(1.0 / params.cluster_rate_Lambda, size=n - 1)
    return np.concatenate(([0.0], np.cumsum(gaps)))


def _ray_gaps(params, n, rng):
    fast = rng.random(n) < params.mix_beta
    rate = np.where(fast, params.ray_rate_lambda2, params.ray_rate_lambda1)
    return rng.exponential(1.0, size=n) / rate


def sample_ray_arrivals(params: ChannelParams, cluster_T: float, rng: np.random.Generator,
                        tau_max: float | None = None) -> np.ndarray:
    """Ray offsets within a cluster, truncated at ``tau_max - cluster_T``.

    The first offset is 0; each further gap is exponential with rate λ1
    (probability 1-β) or λ2 (probability β).
    """
    if cluster_T < 0:
        raise ValueError("cluster_T must be >= 0")
    limit = (params.tau_max if tau_max is None else tau_max) - cluster_T
    mean_gap = (1 - params.mix_beta) / params.ray_rate_lambda1 + params.mix_beta / params.ray_rate_lambda2
    chunk = int(max(limit, 0.0) / mean_gap * 1.3) + 16
    offsets = [np.zeros(1)]
    last = 0.0
    while True:
        tau = last + np.cumsum(_ray_gaps(params, chunk, rng))
        keep = tau[tau <= limit]
        offsets.append(keep)
        if keep.size < tau.size:
            break
        last = float(tau[-1])
    return np.concatenate(offsets)


def mean_ray_power(params: ChannelParams, T_l, tau, shadowing_dB=0.0):
    """Mean power of a ray at offset ``tau`` inside a cluster arriving at ``T_l``."""
    T_l = np.asarray(T_l, dtype=float)
    tau = np.asarray(tau, dtype=float)
    g = params.gamma_l(T_l)
    omega_l = np.exp(-T_l / params.cluster_decay_Gamma) * 10.0 ** (np.asarray(shadowing_dB) / 10.0)
    out = omega_l * np.exp(-tau / g) / (g * (params.ray_rate_effective + 1.0))
    return out if out.ndim else float(out)


def sample_tap_amplitude(mean_power_Omega, m, rng: np.random.Generator, size=None):
    """Signed Nakagami-m amplitude: ``|α|² ~ Gamma(m, Ω/m)``, sign ±1 equiprobable."""
    m_arr = np.asarray(m, dtype=float)
    omega = np.asarray(mean_power_Omega, dtype=float)
    if np.any(m_arr < 0.5):
        raise ValueError("Nakagami m must be >= 0.5")
    if np.any(omega <= 0):
        raise ValueError("mean power must be > 0")
    if size is None:
        size = np.broadcast(m_arr, omega).shape
    mag = np.sqrt(rng.gamma(m_arr, omega / m_arr, size=size))
    sign = np.where(rng.random(size) < 0.5, -1.0, 1.0)
    out = sign * mag
    return out if np.ndim(out) else float(out)


def _sample_m(params, n, rng):
    if params.nakagami_m_sigma == 0:
        return np.full(n, params.nakagami_m_mean)
    s = params.nakagami_m_sigma
    m = params.nakagami_m_mean * np.exp(s * rng.standard_normal(n) - s * s / 2)
    return np.maximum(m, 0.5)


@dataclass
class ChannelRealization:
    """One drawn impulse response: tap delays (ns, ascending) and signed amplitudes.

    ``clusters`` labels each tap with its cluster index; ``cluster_arrivals``
    holds every drawn cluster arrival time, including clusters that start
    beyond ``tau_max`` and so contribute no taps.
    """

    delays: np.ndarray
    amplitudes: np.ndarray
    clusters: np.ndarray = field(default=None, repr=False)
    cluster_arrivals: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.delays = np.asarray(self.delays, dtype=float)
        self.amplitudes = np.asarray(self.amplitudes, dtype=float)
        if self.clusters is None:
            self.clusters = np.zeros(self.delays.size, dtype=int)
        if self.cluster_arrivals is None:
            self.cluster_arrivals = np.zeros(1)
        if self.delays.shape != self.amplitudes.shape or self.delays.ndim != 1 or not self.delays.size:
            raise ValueError("need matching non-empty delay and amplitude vectors")
        if np.any(np.diff(self.delays) <= 0):
            raise ValueError("tap delays must be strictly increasing")

    @classmethod
    def delta(cls, amplitude=1.0, delay=0.0):
        return cls(np.array([delay]), np.array([amplitude]))

    @property
    def taps(self):
        return list(zip(self.delays.tolist(), self.amplitudes.tolist()))

    @property
    def first_tap_delay(self) -> float:
        return float(self.delays[0])

    @property
    def total_energy(self) -> float:
        return float(np.dot(self.amplitudes, self.amplitudes))

    def to_csv(self, fh=None) -> str | None:
        buf = io.StringIO() if fh is None else fh
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["delay_ns", "amplitude"])
        for d, a in zip(self.delays, self.amplitudes):
            w.writerow([repr(float(d)), repr(float(a))])
        return buf.getvalue() if fh is None else None

    @classmethod
    def from_csv(cls, text: str) -> "ChannelRealization":
        rows = [r for r in csv.reader(io.StringIO(text)) if r and not r[0].startswith("#")]
        body = rows[1:] if rows and rows[0][0] == "delay_ns" else rows
        arr = np.array([[float(a), float(b)] for a, b in body])
        return cls(arr[:, 0], arr[:, 1])


def realize_channel(params: ChannelParams, rng: np.random.Generator) -> ChannelRealization:
    """Draw one impulse response in continuous delay (ns)."""
    tau_max = params.tau_max
    drawn = sample_cluster_arrivals(params, rng)
    T = drawn[drawn <= tau_max]
    delays, powers, labels = [], [], []
    for l, T_l in enumerate(T):
        tau = sample_ray_arrivals(params, T_l, rng, tau_max=tau_max)
        shadow = 0.0
        if params.cluster_shadowing_sigma_dB > 0:
            shadow = params.cluster_shadowing_sigma_dB * rng.standard_normal()
        delays.append(T_l + tau)
        powers.append(mean_ray_power(params, T_l, tau, shadow))
        labels.append(np.full(tau.size, l))
    delays = np.concatenate(delays)
    powers = np.atleast_1d(np.concatenate([np.atleast_1d(p) for p in powers]))
    labels = np.concatenate(labels)
    m = _sample_m(params, delays.size, rng)
    amps = np.atleast_1d(sample_tap_amplitude(powers, m, rng))
    order = np.argsort(delays, kind="stable")
    delays, amps, labels = delays[order], amps[order], labels[order]
    # coincident delays from overlapping clusters are measure-zero; merge if they occur
    dup = np.nonzero(np.diff(delays) <= 0)[0]
    if dup.size:
        keep = np.ones(delays.size, bool)
        for i in dup[::-1]:
            amps[i] += amps[i + 1]
            keep[i + 1] = False
        delays, amps, labels = delays[keep], amps[keep], labels[keep]
    return ChannelRealization(delays, amps, labels, drawn)

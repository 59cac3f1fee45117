"""Semi-analytic SINR decomposition and BER for correlation receivers.

Decision-statistic moments (everything in ns and the channel's power units):

* desired energy ``Eb = Ω0 Ns² ρc²`` and noise ``σn² = Ns N0/2 ρe``, where
  ``ρc`` is the template/pulse correlation at zero lag and ``ρe`` the
  template replica energy (both 1 for the conventional template);
* intra-symbol interference from the desired user's own later rays;
* inter-symbol interference from previous pulses' multipath tails, driven by
  the aggregate tail power ``Ω_Σ``;
* multiuser interference from asynchronous users, scaled by a free constant
  ``F(ω0)`` (default 1).

Modelling readings (the source formulas leave these open):

* ray-arrival density of the k-th ray is Erlang(k-1) at the effective rate
  ``λ = (1-β)λ1 + βλ2``; cluster arrival density is Erlang at rate Λ;
* the intra-cluster decay constant is γ0;
* ISI and MUI rays fall at either side of a template replica, so their lag
  integrals over ``[0, Tm]`` use the folded profile ``X(u)² + X(-u)²``
  (``2R(u)²`` for the conventional template); IASI rays always trail the
  first ray and use ``X(y)²`` for y > 0 only;
* ``Ω_Σ`` is the mean power of a single tail ray overlapping the template,
  with the code offset uniform over ``±Nh·Tc``; the ray is attributed to the
  latest cluster arrived by its delay.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from functools import cached_property

import numpy as np
from scipy import special, stats

from .channel import ChannelParams, cluster_count_survival
from .montecarlo import (
    CONVENTIONAL_RX,
    DESIRED,
    IASI,
    ISI,
    MUI,
    PulseKernel,
    Receiver,
    SimConfig,
    block_components,
    draw_users,
    noise_projection,
    trial_rng,
)
from .pulse import PulseSpec, make_pulse
from .quadrature import ConvergenceError, adaptive_simpson
from .txrx import FrameConfig

MAX_SERIES_TERMS = 10_000
TERMS = ("Eb", "sigma_n2", "sigma_iasi2", "sigma_isi2", "sigma_mui2")


@dataclass(frozen=True)
class SinrBreakdown:
    Eb: float
    sigma_n2: float
    sigma_iasi2: float
    sigma_isi2: float
    sigma_mui2: float

    @property
    def denominator(self) -> float:
        return self.sigma_n2 + self.sigma_iasi2 + self.sigma_isi2 + self.sigma_mui2

    def as_dict(self) -> dict:
        return asdict(self)


def sinr_and_ber(b: SinrBreakdown):
    """``SINR = Eb / Σσ²`` and ``BER = ½ erfc(√(SINR/2))``."""
    den = b.denominator
    if den <= 0:
        raise ZeroDivisionError("SINR undefined: noise and interference variances are all zero")
    sinr = b.Eb / den
    return sinr, 0.5 * float(special.erfc(math.sqrt(sinr / 2)))


def ber_from_sinr(sinr):
    return 0.5 * special.erfc(np.sqrt(np.asarray(sinr, dtype=float) / 2))


def omega0(channel: ChannelParams) -> float:
    """Mean power of the first ray of the first cluster."""
    return 1.0 / (channel.intra_decay_gamma0 * (channel.ray_rate_effective + 1.0))


class LagProfile:
    """Template/pulse cross-correlation ``X(y)`` with ``y`` in ns (positive = late ray)."""

    def __init__(self, pulse_spec: PulseSpec, receiver: Receiver = CONVENTIONAL_RX):
        pulse = make_pulse(pulse_spec)
        kernel = PulseKernel(pulse, (receiver,))
        n = kernel.n
        self.nodes = np.arange(-(n - 1), n) * pulse.sample_interval * 1e9
        self.values = kernel.xcorr[0]
        self.rho_c = float(kernel.signal_gain[0])
        self.rho_e = float(kernel.gram[0, 0])
        self.support = len(pulse) * pulse.sample_interval * 1e9

    def x(self, y):
        return np.interp(y, self.nodes, self.values, left=0.0, right=0.0)

    def one_sided_sq(self, y):
        return self.x(y) ** 2

    def folded_sq(self, u):
        return self.x(u) ** 2 + self.x(-u) ** 2

    @property
    def positive_nodes(self):
        return self.nodes[self.nodes >= 0]


def ray_arrival_density(lam: float, y, rtol: float = 1e-4) -> np.ndarray:
    """``Σ_{k>=2} f_k(y)``, f_k the Erlang(k-1, λ) density of the k-th ray offset.

    The series is truncated once every point's latest term is below
    ``rtol`` times its partial sum and past the Poisson mode. The untruncated
    sum equals ``λ`` for ``y > 0``.
    """
    y = np.asarray(y, dtype=float)
    pos = y > 0
    yy = np.where(pos, y, 0.0)
    term = lam * np.exp(-lam * yy)
    total = term.copy()
    mode = lam * float(yy.max(initial=0.0))
    for j in range(1, MAX_SERIES_TERMS):
        term = term * lam * yy / j
        total += term
        if j > mode and np.all(term <= rtol * total):
            return np.where(pos, total, 0.0)
    raise ConvergenceError(f"ray-arrival series did not converge within {MAX_SERIES_TERMS} terms")


@dataclass(frozen=True)
class AnalyticConfig:
    """Inputs of the analytic SINR evaluation (times in the usual units: channel ns, frame s)."""

    channel: ChannelParams
    frame: FrameConfig
    pulse: PulseSpec = field(default_factory=PulseSpec)
    n_interferers_Nu: int = 0
    N0: float = 1.0
    receiver: Receiver = CONVENTIONAL_RX
    tolerance: float = 1e-4
    f_omega0: float = 1.0

    def __post_init__(self):
        if not 0 < self.tolerance <= 1e-2:
            raise ValueError("quadrature tolerance must lie in (0, 1e-2]")
        if self.n_interferers_Nu < 0:
            raise ValueError("n_interferers_Nu must be >= 0")
        if self.N0 < 0:
            raise ValueError("N0 must be >= 0")

    @cached_property
    def profile(self) -> LagProfile:
        return LagProfile(self.pulse, self.receiver)

    @property
    def Tm(self) -> float:
        return self.profile.support

    @property
    def gamma(self) -> float:
        return self.channel.intra_decay_gamma0

    @property
    def Tf_ns(self) -> float:
        return self.frame.Tf * 1e9

    @property
    def Rb_per_ns(self) -> float:
        return self.frame.Rb * 1e-9

    @property
    def n_previous_frames(self) -> int:
        """``N_f = ⌈τ_max Rb Ns⌉``."""
        return math.ceil(self.channel.tau_max * self.Rb_per_ns * self.frame.Ns - 1e-12)

    @property
    def code_offset_halfwidth(self) -> float:
        return self.frame.Nh * self.frame.Tc * 1e9

    def with_(self, **kw) -> "AnalyticConfig":
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d.update(kw)
        return AnalyticConfig(**d)


def template_factors(pulse: PulseSpec, receiver: Receiver = CONVENTIONAL_RX):
    """``(ρc, ρe)``: zero-lag template/pulse correlation and template replica energy."""
    prof = LagProfile(pulse, receiver)
    return prof.rho_c, prof.rho_e


def desired_energy_and_noise(channel: ChannelParams, frame: FrameConfig, N0: float,
                             pulse: PulseSpec | None = None, receiver: Receiver = CONVENTIONAL_RX):
    """``(Eb, σn²) = (Ω0 Ns² ρc², Ns N0/2 ρe)``."""
    rho_c, rho_e = (1.0, 1.0)
    if receiver != CONVENTIONAL_RX:
        rho_c, rho_e = template_factors(pulse or PulseSpec(), receiver)
    Ns = frame.Ns
    return omega0(channel) * Ns**2 * rho_c**2, Ns * N0 / 2 * rho_e


def _lag_integral(cfg: AnalyticConfig, sq, lead: float) -> float:
    """``Ns² ∫_0^Tm lead · e^{-y/γ} f_p(y) sq(y) dy``."""
    if lead == 0:
        return 0.0
    lam, g, tol = cfg.channel.ray_rate_effective, cfg.gamma, cfg.tolerance

    def integrand(y):
        return np.exp(-y / g) * ray_arrival_density(lam, y, tol) * sq(y)

    val = adaptive_simpson(integrand, 0.0, cfg.Tm, rtol=tol, breakpoints=cfg.profile.positive_nodes)
    return cfg.frame.Ns**2 * lead * val


def sigma_iasi(cfg: AnalyticConfig, omega_first: float | None = None) -> float:
    """Intra-symbol interference variance from the desired user's own later rays (linear in Ω0)."""
    if omega_first is None:
        omega_first = omega0(cfg.channel)
    return _lag_integral(cfg, cfg.profile.one_sided_sq, omega_first)


def _erlang_pdf(l, T, rate):
    return stats.gamma.pdf(T, a=l - 1, scale=1.0 / rate)


def _tail_power_at(cfg: AnalyticConfig, d: float) -> float:
    """Expected power of the ray at absolute delay ``d`` (ns).

    The ray belongs to the latest cluster arrived by ``d``: cluster ``l``
    (present with probability ``P(L >= l)``, arrival ``T_l`` Erlang at rate Λ)
    qualifies if it is the last cluster or the next exponential gap ends after ``d``.
    """
    ch = cfg.channel
    if d <= 0 or d > ch.tau_max:
        return 0.0
    tol = cfg.tolerance
    O0, G, g, Lam = omega0(ch), ch.cluster_decay_Gamma, cfg.gamma, ch.cluster_rate_Lambda
    survival = cluster_count_survival(ch, 512)

    def last_prob(l):
        return 1.0 - survival[l] / survival[l - 1] if l < survival.size else 1.0

    q = last_prob(1)
    total = O0 * math.exp(-d / g) * (q + (1 - q) * math.exp(-Lam * d))
    for l in range(2, survival.size + 1):
        w, q = survival[l - 1], last_prob(l)

        def inner(T, l=l, q=q):
            return (np.exp(-T / G - (d - T) / g) * _erlang_pdf(l, T, Lam)
                    * (q + (1 - q) * np.exp(-Lam * (d - T))))

        term = w * O0 * adaptive_simpson(inner, 0.0, d, rtol=tol)
        total += term
        if term <= tol * total and (w < tol or l - 1 > Lam * d):
            return total
    raise ConvergenceError("cluster sum in the tail-power integral did not converge")


def omega_sigma(cfg: AnalyticConfig) -> float:
    """Aggregate mean tail power ``Ω_Σ`` of earlier pulses overlapping the current template."""
    n_terms = cfg.n_previous_frames * cfg.frame.Ns - 1
    if n_terms < 1:
        return 0.0
    Ts, Tf, tol = cfg.code_offset_halfwidth, cfg.Tf_ns, cfg.tolerance
    total = 0.0
    for s in range(1, n_terms + 1):

        def outer(tc, s=s):
            return np.array([_tail_power_at(cfg, s * Tf + t) for t in np.atleast_1d(tc)])

        total += adaptive_simpson(outer, -Ts, Ts, rtol=tol, min_intervals=4) / (2 * Ts)
    return total


def sigma_isi(cfg: AnalyticConfig, omega_sum: float | None = None) -> float:
    """Inter-symbol interference variance (linear in ``Ω_Σ``)."""
    if omega_sum is None:
        omega_sum = omega_sigma(cfg)
    return _lag_integral(cfg, cfg.profile.folded_sq, omega_sum)


def sigma_mui(cfg: AnalyticConfig, omega_sum: float | None = None) -> float:
    """Multiuser interference variance; linear in ``N_u`` and ``F(ω0)``."""
    if cfg.n_interferers_Nu == 0 or cfg.f_omega0 == 0:
        return 0.0
    if omega_sum is None:
        omega_sum = omega_sigma(cfg)
    lam, g, tol, Tm = cfg.channel.ray_rate_effective, cfg.gamma, cfg.tolerance, cfg.Tm
    prof = cfg.profile
    nodes = prof.positive_nodes

    def inner(z):
        # substitute u = y + z: kinks of the lag table stay at fixed u
        lo = max(0.0, z)
        if lo >= Tm:
            return 0.0

        def f(u):
            y = u - z
            return np.exp(-y / g) * ray_arrival_density(lam, y, tol) * prof.folded_sq(u)

        return adaptive_simpson(f, lo, Tm, rtol=tol, breakpoints=nodes, min_intervals=2)

    def outer(z):
        return np.array([inner(t) for t in np.atleast_1d(z)])

    half = cfg.Tf_ns / 2
    upper = min(half, Tm)
    breaks = [0.0] if -half < 0 < upper else None
    core = adaptive_simpson(outer, -half, upper, rtol=tol, breakpoints=breaks)
    Ns = cfg.frame.Ns
    scale = cfg.f_omega0 * cfg.Rb_per_ns * Ns**2 * cfg.n_interferers_Nu
    return scale * (omega0(cfg.channel) + omega_sum) * core


def analytic_breakdown(cfg: AnalyticConfig) -> SinrBreakdown:
    Eb, sn = desired_energy_and_noise(cfg.channel, cfg.frame, cfg.N0, cfg.pulse, cfg.receiver)
    om = omega_sigma(cfg)
    return SinrBreakdown(Eb, sn, sigma_iasi(cfg), sigma_isi(cfg, om), sigma_mui(cfg, om))


ALL_COMPONENTS = frozenset({"desired", "iasi", "isi", "mui", "noise"})


def estimate_variance_decomposition(cfg: AnalyticConfig, master_seed: int, n_trials: int,
                                    components=ALL_COMPONENTS, channels=None,
                                    bits_per_trial: int = 1) -> SinrBreakdown:
    """Empirical counterpart of :func:`analytic_breakdown` from the simulator.

    Each trial draws fresh channels (unless ``channels`` is given), codes,
    bits and delays, and measures the second moment of every correlator
    output component over ``bits_per_trial`` decisions. Components not in
    ``components`` are reported as 0.
    """
    if n_trials < 1000:
        raise ValueError("n_trials must be >= 1000")
    unknown = set(components) - ALL_COMPONENTS
    if unknown:
        raise ValueError(f"unknown components {sorted(unknown)}")
    sim = SimConfig(
        channel=cfg.channel,
        frame=cfg.frame,
        pulse=cfg.pulse,
        n_users=cfg.n_interferers_Nu + 1,
        receivers=(cfg.receiver,),
        block_bits=bits_per_trial,
        master_seed=master_seed,
    )
    kernel, warm = sim.kernel, sim.warmup_bits
    acc = np.zeros(5)
    count = 0
    need_signal = bool({"desired", "iasi", "isi", "mui"} & set(components))
    for t in range(n_trials):
        rng = trial_rng(master_seed, 0, t)
        users, chans = draw_users(sim, warm + bits_per_trial, rng, channels)
        if need_signal:
            comps = block_components(cfg.frame, kernel, users, chans)[:, 0, warm:]
            acc[:4] += np.sum(comps**2, axis=1)
        if "noise" in components:
            noise = noise_projection(kernel, cfg.frame.Ns, cfg.N0, bits_per_trial, rng)[0]
            acc[4] += np.sum(noise**2)
        count += bits_per_trial
    m = acc / count
    keep = [name in components for name in ("desired", "iasi", "isi", "mui", "noise")]
    m = np.where(keep, m, 0.0)
    return SinrBreakdown(Eb=m[DESIRED], sigma_n2=m[4], sigma_iasi2=m[IASI], sigma_isi2=m[ISI], sigma_mui2=m[MUI])


def empirical_omega_sigma(cfg: AnalyticConfig, rng: np.random.Generator, n_realizations: int) -> float:
    """Monte Carlo ``Ω_Σ``: mean per-ray power in each earlier frame's overlap window.

    For every ``s = 1 .. N_f Ns - 1`` the channel taps with delay in
    ``s·Tf ± Nh·Tc`` are collected over many realisations; their total power
    divided by their count is the mean ray power there.
    """
    from .channel import realize_channel

    n_terms = cfg.n_previous_frames * cfg.frame.Ns - 1
    if n_terms < 1:
        return 0.0
    Ts, Tf = cfg.code_offset_halfwidth, cfg.Tf_ns
    power = np.zeros(n_terms)
    count = np.zeros(n_terms)
    for _ in range(n_realizations):
        ch = realize_channel(cfg.channel, rng)
        for s in range(1, n_terms + 1):
            sel = np.abs(ch.delays - s * Tf) <= Ts
            power[s - 1] += np.sum(ch.amplitudes[sel] ** 2)
            count[s - 1] += np.count_nonzero(sel)
    return float(np.sum(np.divide(power, count, out=np.zeros_like(power), where=count > 0)))

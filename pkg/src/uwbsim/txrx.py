"""Sample-level TH-BPSK transmitter, multipath propagation and correlation receiver.

Grid convention: every composite signal starts at ``start_time`` such that a
pulse whose support begins at slot time ``s`` occupies samples
``round(s/dt) .. round(s/dt) + n_p - 1``. Pulse, channel-tap and template
positions are all rounded to that grid the same way, so the fast
pulse-level engine in :mod:`uwbsim.montecarlo` reproduces these waveforms
exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelRealization
from .pulse import SampledWaveform

CONVENTIONAL = "conventional"
PARTIAL = "partial"


@dataclass(frozen=True)
class FrameConfig:
    """Time-hopping frame structure (seconds, bits/second)."""

    Ns: int
    Tf: float
    Tc: float
    Nh: int
    Rb: float

    def __post_init__(self):
        if self.Ns < 1 or self.Nh < 1:
            raise ValueError("Ns and Nh must be >= 1")
        if not (self.Tf > 0 and self.Tc > 0 and self.Rb > 0):
            raise ValueError("Tf, Tc and Rb must be positive")
        if abs(self.Tf * self.Rb * self.Ns - 1.0) > 1e-12:
            raise ValueError(f"Tf={self.Tf!r} s does not equal 1/(Rb*Ns)")
        if self.Nh * self.Tc > self.Tf * (1 + 1e-12):
            raise ValueError(f"hop window Nh*Tc={self.Nh * self.Tc:g} s exceeds frame Tf={self.Tf:g} s")

    @classmethod
    def from_rate(cls, Rb, Ns=1, Nh=16, Tc=0.5e-9) -> "FrameConfig":
        return cls(Ns=int(Ns), Tf=1.0 / (Rb * Ns), Tc=float(Tc), Nh=int(Nh), Rb=float(Rb))

    @property
    def bit_duration(self) -> float:
        return self.Ns * self.Tf


@dataclass
class UserConfig:
    """One user's hopping code (one entry per frame), asynchronous delay and bits."""

    th_code: np.ndarray
    delay_tau: float
    bits: np.ndarray

    def __post_init__(self):
        self.th_code = np.asarray(self.th_code, dtype=np.int64)
        self.bits = np.asarray(self.bits, dtype=np.int64)
        if not np.all(np.abs(self.bits) == 1):
            raise ValueError("bits must be +1/-1")

    def validate(self, frame: FrameConfig):
        if self.th_code.size != self.bits.size * frame.Ns:
            raise ValueError(
                f"need {self.bits.size * frame.Ns} code entries for {self.bits.size} bits, got {self.th_code.size}"
            )
        if self.th_code.size and (self.th_code.min() < 0 or self.th_code.max() >= frame.Nh):
            raise ValueError(f"hopping code entries must lie in [0, {frame.Nh})")
        if not 0.0 <= self.delay_tau < frame.bit_duration:
            raise ValueError("delay_tau must lie in [0, Ns*Tf)")


@dataclass
class Template:
    kind: str
    keep_fraction: float
    waveform: SampledWaveform


def generate_th_code(Nh: int, n_frames: int, rng: np.random.Generator) -> np.ndarray:
    """Independent uniform slot indices in ``[0, Nh)``."""
    if Nh < 1:
        raise ValueError("Nh must be >= 1")
    return rng.integers(0, Nh, size=n_frames)


def grid_start(pulse: SampledWaveform) -> float:
    """Start time of composite signals built from ``pulse`` (see module docstring)."""
    return pulse.start_time + len(pulse) * pulse.sample_interval / 2


def pulse_start_indices(code, frame: FrameConfig, dt: float, delay: float = 0.0) -> np.ndarray:
    """Sample index at which each frame's pulse support begins."""
    k = np.arange(len(code))
    return np.rint((k * frame.Tf + np.asarray(code) * frame.Tc + delay) / dt).astype(np.int64)


def tap_shifts(channel: ChannelRealization, dt: float) -> np.ndarray:
    """Channel tap delays (ns) rounded to whole samples of ``dt`` seconds."""
    return np.rint(channel.delays * 1e-9 / dt).astype(np.int64)


def keep_mask(n: int, keep_fraction: float) -> np.ndarray:
    """Indicator over a pulse's ``n`` samples keeping the leading ``keep_fraction``."""
    if not 0.0 < keep_fraction <= 1.0:
        raise ValueError(f"keep_fraction must lie in (0, 1], got {keep_fraction!r}")
    mask = np.zeros(n)
    mask[: int(round(keep_fraction * n))] = 1.0
    return mask


def _check_pulse_fits(pulse: SampledWaveform, frame: FrameConfig):
    if pulse.duration > frame.Tc * (1 + 1e-9):
        raise ValueError(
            f"pulse support {pulse.duration:g} s is wider than the hop slot Tc={frame.Tc:g} s"
        )


def synthesize_signal(user: UserConfig, frame: FrameConfig, pulse: SampledWaveform) -> SampledWaveform:
    """Place ``d_i * p(t - kTf - c_k Tc - delay)`` for every frame k of every bit i (Ep = 1)."""
    user.validate(frame)
    _check_pulse_fits(pulse, frame)
    dt = pulse.sample_interval
    n = len(pulse)
    idx = pulse_start_indices(user.th_code, frame, dt, user.delay_tau)
    d = np.repeat(user.bits, frame.Ns).astype(float)
    total = int(idx.max()) + n if idx.size else 0
    out = np.zeros(total)
    for i, s in zip(idx, d):
        out[i : i + n] += s * pulse.samples
    return SampledWaveform(out, dt, grid_start(pulse))


def propagate(signal: SampledWaveform, channel: ChannelRealization) -> SampledWaveform:
    """``Σ_taps a_k · signal(t - delay_k)`` with delays rounded to the sample grid."""
    shifts = tap_shifts(channel, signal.sample_interval)
    x = signal.samples
    out = np.zeros(x.size + int(shifts.max()))
    for s, a in zip(shifts, channel.amplitudes):
        out[s : s + x.size] += a * x
    return SampledWaveform(out, signal.sample_interval, signal.start_time)


def add_awgn(signal: SampledWaveform, N0: float, rng: np.random.Generator) -> SampledWaveform:
    """Add white Gaussian noise of two-sided PSD ``N0/2`` (variance ``N0/(2 dt)`` per sample)."""
    if N0 < 0:
        raise ValueError("N0 must be >= 0")
    if N0 == 0:
        return SampledWaveform(signal.samples.copy(), signal.sample_interval, signal.start_time)
    sigma = np.sqrt(N0 / (2 * signal.sample_interval))
    noisy = signal.samples + sigma * rng.standard_normal(signal.samples.size)
    return SampledWaveform(noisy, signal.sample_interval, signal.start_time)


def build_template(kind: str, keep_fraction: float, frame: FrameConfig, code,
                   pulse: SampledWaveform, sync_delay: float = 0.0, polarity: float = 1.0) -> Template:
    """Correlation template for the desired user's whole bit stream.

    ``conventional`` places a full pulse replica at every coded position;
    ``partial`` keeps only the leading ``keep_fraction`` of each replica's
    support and zeroes the rest. ``sync_delay`` (seconds) and ``polarity``
    (sign of the first-ray amplitude) are what perfect synchronisation to the
    first ray provides.
    """
    if polarity not in (1, -1):
        raise ValueError("polarity must be +1 or -1")
    if kind not in (CONVENTIONAL, PARTIAL):
        raise ValueError(f"unknown template kind {kind!r}")
    if kind == CONVENTIONAL and keep_fraction != 1.0:
        raise ValueError("a conventional template keeps the whole pulse (keep_fraction=1)")
    _check_pulse_fits(pulse, frame)
    dt = pulse.sample_interval
    replica = polarity * pulse.samples * keep_mask(len(pulse), keep_fraction)
    idx = pulse_start_indices(code, frame, dt) + int(np.rint(sync_delay / dt))
    out = np.zeros(int(idx.max()) + len(pulse))
    for i in idx:
        out[i : i + len(pulse)] += replica
    return Template(kind, float(keep_fraction), SampledWaveform(out, dt, grid_start(pulse)))


def bit_boundaries(frame: FrameConfig, n_bits: int, sync_delay: float = 0.0) -> np.ndarray:
    """Times (s) of the ``n_bits + 1`` decision-window edges."""
    return np.arange(n_bits + 1) * frame.bit_duration + sync_delay


def correlator_outputs(received: SampledWaveform, template: Template, bit_boundaries) -> np.ndarray:
    """Per-bit inner products ``Σ r·v·dt`` over each decision window."""
    v = template.waveform
    if not np.isclose(received.sample_interval, v.sample_interval, rtol=1e-12, atol=0):
        raise ValueError("received signal and template use different sample intervals")
    if not np.isclose(received.start_time, v.start_time, rtol=0, atol=1e-6 * v.sample_interval):
        raise ValueError("received signal and template are not aligned")
    dt = v.sample_interval
    # slot times map to indices as rint(t/dt), matching pulse_start_indices
    edges = np.clip(np.rint(np.asarray(bit_boundaries) / dt).astype(np.int64), 0, None)
    if len(v) > edges[-1]:
        raise ValueError(
            f"template spans {len(v)} samples, beyond the last decision window edge at {edges[-1]}"
        )
    # the received signal is zero past its last sample
    n = min(len(v), len(received))
    prod = np.zeros(edges[-1])
    prod[:n] = received.samples[:n] * v.samples[:n]
    csum = np.concatenate(([0.0], np.cumsum(prod)))
    return (csum[edges[1:]] - csum[edges[:-1]]) * dt


def decide(z) -> np.ndarray:
    """Sign decision; an exactly-zero statistic resolves to +1."""
    return np.where(np.asarray(z) < 0, -1, 1)


def correlate_and_decide(received: SampledWaveform, template: Template, bit_boundaries) -> np.ndarray:
    return decide(correlator_outputs(received, template, bit_boundaries))

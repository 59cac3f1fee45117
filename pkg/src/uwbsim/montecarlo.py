"""Seeded Monte Carlo BER estimation for conventional and partial-template receivers.

The engine never materialises the full received waveform. A correlator output
only depends on pulse arrivals overlapping a template replica, so each
decision statistic is accumulated as ``Σ d · α · X_r(lag)`` over overlapping
(pulse, tap) pairs, where ``X_r`` is the sampled cross-correlation of
receiver ``r``'s replica with the pulse. With all positions rounded to the
sample grid exactly as in :mod:`uwbsim.txrx`, this equals the waveform
chain's inner product. Noise is one white Gaussian sample vector per bit
projected onto every receiver's replica, which has exactly the distribution
of sampled white noise correlated against the templates (covariance
``N0/2 · Ns · <v_r, v_s>``).
"""

from __future__ import annotations

import csv
import io
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.stats import binomtest

from .channel import ChannelParams, ChannelRealization, realize_channel
from .pulse import PulseSpec, SampledWaveform, correlation_table, make_pulse
from .txrx import (
    CONVENTIONAL,
    PARTIAL,
    FrameConfig,
    UserConfig,
    generate_th_code,
    keep_mask,
    pulse_start_indices,
    tap_shifts,
)

log = logging.getLogger(__name__)

DESIRED, IASI, ISI, MUI = range(4)
COMPONENTS = ("desired", "iasi", "isi", "mui")


@dataclass(frozen=True)
class Receiver:
    """Correlation receiver: ``conventional`` or ``partial`` with a keep fraction."""

    kind: str = CONVENTIONAL
    keep_fraction: float = 1.0

    def __post_init__(self):
        if self.kind not in (CONVENTIONAL, PARTIAL):
            raise ValueError(f"unknown receiver kind {self.kind!r}")
        if not 0.0 < self.keep_fraction <= 1.0:
            raise ValueError(f"keep_fraction must lie in (0, 1], got {self.keep_fraction!r}")
        if self.kind == CONVENTIONAL and self.keep_fraction != 1.0:
            raise ValueError("conventional receiver must have keep_fraction = 1")

    @property
    def label(self) -> str:
        if self.kind == CONVENTIONAL:
            return CONVENTIONAL
        if self.keep_fraction == 0.5:
            return PARTIAL
        return f"{PARTIAL}_{self.keep_fraction:g}"

    @classmethod
    def parse(cls, text: str) -> "Receiver":
        """``conventional``, ``partial`` (keep 0.5) or ``partial_<fraction>``."""
        text = text.strip()
        if text == CONVENTIONAL:
            return cls()
        if text == PARTIAL:
            return cls(PARTIAL, 0.5)
        if text.startswith(PARTIAL + "_"):
            return cls(PARTIAL, float(text[len(PARTIAL) + 1 :]))
        raise ValueError(f"cannot parse receiver {text!r}")


CONVENTIONAL_RX = Receiver()
PARTIAL_RX = Receiver(PARTIAL, 0.5)


class PulseKernel:
    """Per-receiver lag tables ``X_r[Δ]`` and template Gram matrix for one pulse."""

    def __init__(self, pulse: SampledWaveform, receivers):
        self.pulse = pulse
        self.receivers = tuple(receivers)
        self.dt = pulse.sample_interval
        self.n = len(pulse)
        rows, reps = [], []
        for rx in self.receivers:
            v = SampledWaveform(pulse.samples * keep_mask(self.n, rx.keep_fraction), self.dt, pulse.start_time)
            lags, vals = correlation_table(v, pulse)
            assert lags[0] == -(self.n - 1)
            rows.append(vals)
            reps.append(v.samples)
        self.xcorr = np.array(rows)
        self.replicas = np.array(reps)
        self.gram = self.replicas @ self.replicas.T * self.dt

    @property
    def signal_gain(self) -> np.ndarray:
        """Correlation of each template replica with an aligned pulse (ρ_c)."""
        return self.xcorr[:, self.n - 1]


def _overlapping_pairs(rep: np.ndarray, P: np.ndarray, n: int, last_tap: int):
    """Index pairs ``(i, j)`` with ``-n < rep[i] - P[j] < last_tap + n``, row-major order.

    Both index arrays are increasing (hop offsets stay inside a frame), so
    each replica's overlapping pulses form one contiguous run of ``P``.
    """
    lo = np.searchsorted(P, rep - last_tap - n, side="right")
    hi = np.searchsorted(P, rep + n, side="left")
    cnt = np.maximum(hi - lo, 0)
    ri = np.repeat(np.arange(rep.size), cnt)
    pi = lo[ri] + np.arange(ri.size) - np.repeat(np.cumsum(cnt) - cnt, cnt)
    return ri, pi


def block_components(frame: FrameConfig, kernel: PulseKernel, users, channels) -> np.ndarray:
    """Noise-free correlator outputs split by origin.

    ``users[0]`` is the desired user (delay 0); templates are synchronised to
    its first channel tap, delay and polarity. Returns an array ``(4, n_receivers, n_bits)`` with
    the desired first-ray term, own-bit multipath (IASI), previous-bit
    multipath (ISI) and other-user (MUI) contributions.
    """
    dt, n = kernel.dt, kernel.n
    desired = users[0]
    n_bits = desired.bits.size
    sync = int(tap_shifts(channels[0], dt)[0])
    rep = pulse_start_indices(desired.th_code, frame, dt) + sync
    rep_bit = np.arange(rep.size) // frame.Ns
    n_rx = kernel.xcorr.shape[0]
    polarity = 1.0 if channels[0].amplitudes[0] >= 0 else -1.0
    out = np.zeros((4, n_rx, n_bits))
    for u, (user, ch) in enumerate(zip(users, channels)):
        P = pulse_start_indices(user.th_code, frame, dt, user.delay_tau)
        pbit = np.arange(P.size) // frame.Ns
        taps = tap_shifts(ch, dt)
        ri, pi = _overlapping_pairs(rep, P, n, int(taps[-1]))
        if ri.size == 0:
            continue
        d = rep[ri] - P[pi]
        lo = np.searchsorted(taps, d - n + 1, side="left")
        hi = np.searchsorted(taps, d + n - 1, side="right")
        cnt = hi - lo
        total = int(cnt.sum())
        if total == 0:
            continue
        pair = np.repeat(np.arange(ri.size), cnt)
        ti = lo[pair] + np.arange(total) - np.repeat(np.cumsum(cnt) - cnt, cnt)
        lag = taps[ti] - d[pair]
        weight = polarity * user.bits[pbit[pi[pair]]] * ch.amplitudes[ti]
        rb = rep_bit[ri[pair]]
        if u == 0:
            same = pbit[pi[pair]] == rb
            cat = np.where(same, np.where(ti == 0, DESIRED, IASI), ISI)
        else:
            cat = np.full(total, MUI)
        slot = cat * n_bits + rb
        for r in range(n_rx):
            out[:, r, :] += np.bincount(
                slot, weights=weight * kernel.xcorr[r, lag + n - 1], minlength=4 * n_bits
            ).reshape(4, n_bits)
    return out


def noise_projection(kernel: PulseKernel, Ns: int, N0: float, n_bits: int, rng: np.random.Generator) -> np.ndarray:
    """Jointly Gaussian noise at every receiver's correlator output, ``(n_rx, n_bits)``.

    One white-noise sample vector per bit (the Ns frames' noise summed, which
    is equal in distribution) is correlated with each replica. Every receiver
    sees the same vector, so adding a receiver leaves the others' noise
    unchanged and identical templates get identical noise.
    """
    w = rng.standard_normal((kernel.n, n_bits))
    if N0 == 0:
        return np.zeros((kernel.replicas.shape[0], n_bits))
    return kernel.replicas @ w * math.sqrt(Ns * N0 * kernel.dt / 2)


@dataclass(frozen=True)
class SimConfig:
    """Everything a BER sweep depends on.

    ``channel=None`` means a single unit tap (AWGN only). With
    ``fixed_channel`` the channels are drawn once per grid point instead of
    once per block of ``block_bits`` bits.
    """

    channel: ChannelParams | None
    frame: FrameConfig
    pulse: PulseSpec = field(default_factory=PulseSpec)
    n_users: int = 1
    ebn0_grid_db: tuple = ()
    receivers: tuple = (CONVENTIONAL_RX, PARTIAL_RX)
    max_bits: int = 1_000_000
    min_errors: int = 100
    master_seed: int = 0
    block_bits: int = 100
    fixed_channel: bool = False

    def __post_init__(self):
        object.__setattr__(self, "ebn0_grid_db", tuple(float(x) for x in self.ebn0_grid_db))
        object.__setattr__(self, "receivers", tuple(self.receivers))
        g = np.asarray(self.ebn0_grid_db)
        if g.size > 1 and np.any(np.diff(g) <= 0):
            raise ValueError("ebn0_grid_db must be strictly increasing")
        if self.max_bits < 1000:
            raise ValueError("max_bits must be >= 1000")
        if self.min_errors < 10:
            raise ValueError("min_errors must be >= 10")
        if self.n_users < 1:
            raise ValueError("n_users must be >= 1")
        if self.block_bits < 1:
            raise ValueError("block_bits must be >= 1")
        if not self.receivers:
            raise ValueError("at least one receiver is required")
        if len({rx.label for rx in self.receivers}) != len(self.receivers):
            raise ValueError("duplicate receivers")
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must be an unsigned 64-bit integer")

    @cached_property
    def pulse_waveform(self) -> SampledWaveform:
        return make_pulse(self.pulse)

    @cached_property
    def kernel(self) -> PulseKernel:
        return PulseKernel(self.pulse_waveform, self.receivers)

    @property
    def tau_max_ns(self) -> float:
        return 0.0 if self.channel is None else self.channel.tau_max

    @property
    def warmup_bits(self) -> int:
        """Previous bits whose multipath can still reach a decision window."""
        reach = (self.tau_max_ns * 1e-9 + self.pulse.duration_Tm) / self.frame.bit_duration
        return max(1, math.ceil(reach))

    def n0(self, ebn0_db: float) -> float:
        # Ep = 1, so the transmitted energy per bit is Ns
        return self.frame.Ns / 10 ** (ebn0_db / 10)


def trial_rng(master_seed: int, point: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(point, trial)))


def draw_users(cfg: SimConfig, n_bits: int, rng: np.random.Generator, channels=None):
    """Random codes, bits, delays and (unless given) channels for every user."""
    users, chans = [], []
    for u in range(cfg.n_users):
        nb = n_bits if u == 0 else n_bits + 1
        if channels is not None:
            ch = channels[u]
        elif cfg.channel is None:
            ch = ChannelRealization.delta()
        else:
            ch = realize_channel(cfg.channel, rng)
        code = generate_th_code(cfg.frame.Nh, nb * cfg.frame.Ns, rng)
        bits = np.where(rng.random(nb) < 0.5, -1, 1)
        delay = 0.0 if u == 0 else float(rng.uniform(0.0, cfg.frame.bit_duration))
        users.append(UserConfig(code, delay, bits))
        chans.append(ch)
    return users, chans


def _fixed_channels(cfg: SimConfig, point: int):
    if not cfg.fixed_channel or cfg.channel is None:
        return None
    rng = np.random.default_rng(np.random.SeedSequence(cfg.master_seed, spawn_key=(point, 2**32)))
    return [realize_channel(cfg.channel, rng) for _ in range(cfg.n_users)]


def run_trial(cfg: SimConfig, ebn0_db: float, point: int, trial: int, channels=None):
    """One channel block: returns per-receiver (errors, bits)."""
    rng = trial_rng(cfg.master_seed, point, trial)
    warm = cfg.warmup_bits
    users, chans = draw_users(cfg, warm + cfg.block_bits, rng, channels)
    comps = block_components(cfg.frame, cfg.kernel, users, chans)
    z = comps.sum(axis=0) + noise_projection(cfg.kernel, cfg.frame.Ns, cfg.n0(ebn0_db), comps.shape[2], rng)
    decisions = np.where(z[:, warm:] < 0, -1, 1)
    errors = np.count_nonzero(decisions != users[0].bits[warm:], axis=1)
    return errors, cfg.block_bits


def _trial_batch(args):
    cfg, ebn0_db, point, trials, channels = args
    return [run_trial(cfg, ebn0_db, point, t, channels) for t in trials]


def run_ber_point(cfg: SimConfig, ebn0_db: float, point: int = 0, executor=None, workers: int = 1,
                  batch: int = 32):
    """Simulate one grid point until the stopping rule fires.

    Stops once ``max_bits`` bits are simulated or every receiver has seen
    ``min_errors`` errors. Trials are accumulated in index order, so the
    result does not depend on how batches are scheduled across workers.

    Returns
    -------
    errors : ndarray of int, one per receiver
    bits : int
    """
    channels = _fixed_channels(cfg, point)
    errors = np.zeros(len(cfg.receivers), dtype=np.int64)
    bits = 0
    trial = 0
    while True:
        chunks = [range(trial + k * batch, trial + (k + 1) * batch) for k in range(workers)]
        jobs = [(cfg, ebn0_db, point, c, channels) for c in chunks]
        results = executor.map(_trial_batch, jobs) if executor is not None else map(_trial_batch, jobs)
        for res in results:
            for e, b in res:
                errors += e
                bits += b
                trial += 1
                if bits >= cfg.max_bits or errors.min() >= cfg.min_errors:
                    return errors, bits


def wilson_interval(errors: int, bits: int):
    if bits == 0:
        return 0.0, 1.0
    ci = binomtest(int(errors), int(bits)).proportion_ci(confidence_level=0.95, method="wilson")
    return float(ci.low), float(ci.high)


@dataclass(frozen=True)
class BerPoint:
    ebn0_db: float
    receiver: str
    ber: float
    ci95: float
    bits: int
    errors: int

    @property
    def interval(self):
        return wilson_interval(self.errors, self.bits)


@dataclass
class BerCurve:
    points: list = field(default_factory=list)

    def __len__(self):
        return len(self.points)

    def receivers(self):
        return list(dict.fromkeys(p.receiver for p in self.points))

    def series(self, receiver: str):
        """``(ebn0_db, ber)`` arrays for one receiver."""
        pts = [p for p in self.points if p.receiver == receiver]
        return np.array([p.ebn0_db for p in pts]), np.array([p.ber for p in pts])

    def get(self, receiver: str, ebn0_db: float) -> BerPoint:
        for p in self.points:
            if p.receiver == receiver and p.ebn0_db == ebn0_db:
                return p
        raise KeyError((receiver, ebn0_db))

    def to_csv(self, header_lines=()) -> str:
        buf = io.StringIO()
        for line in header_lines:
            buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["ebn0_db", "receiver_kind", "ber", "ci95", "bits", "errors"])
        for p in self.points:
            w.writerow([f"{p.ebn0_db:g}", p.receiver, f"{p.ber:.10g}", f"{p.ci95:.10g}", p.bits, p.errors])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "BerCurve":
        rows = [r for r in csv.reader(io.StringIO(text)) if r and not r[0].startswith("#")]
        pts = [
            BerPoint(float(r[0]), r[1], float(r[2]), float(r[3]), int(r[4]), int(r[5])) for r in rows[1:]
        ]
        return cls(pts)


def make_point(ebn0_db, receiver, errors, bits) -> BerPoint:
    lo, hi = wilson_interval(errors, bits)
    return BerPoint(float(ebn0_db), receiver, errors / bits, (hi - lo) / 2, int(bits), int(errors))


def run_sweep(cfg: SimConfig, threads: int = 1, on_point=None) -> BerCurve:
    """Run every grid point; ``on_point(points)`` is called after each one."""
    curve = BerCurve()
    executor = ProcessPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for k, x in enumerate(cfg.ebn0_grid_db):
            errors, bits = run_ber_point(cfg, x, point=k, executor=executor, workers=max(threads, 1))
            new = [make_point(x, rx.label, e, bits) for rx, e in zip(cfg.receivers, errors)]
            curve.points.extend(new)
            log.info(
                "Eb/N0 %5.1f dB  %s  (%d bits)",
                x,
                "  ".join(f"{p.receiver}={p.ber:.3e}" for p in new),
                bits,
            )
            if on_point is not None:
                on_point(new)
    finally:
        if executor is not None:
            executor.shutdown()
    return curve


def default_threads() -> int:
    return max(1, os.cpu_count() or 1)

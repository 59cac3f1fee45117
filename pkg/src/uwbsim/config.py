"""Experiment files: INI sections mapped onto the simulation and analytic configs.

Units follow the usual tables: times in ns, ray and cluster rates in 1/ns,
bit rate in Mbps. Unknown sections or keys are rejected by name.

Example::

    [experiment]
    seed = 7
    output = ber.csv

    [channel]
    preset = indoor_office_los

    [pulse]
    order = 2
    duration_ns = 0.5

    [frame]
    rate_mbps = 15
    pulses_per_bit = 1
    hop_slots = 16
    slot_ns = 0.5

    [users]
    count = 4

    [receivers]
    kinds = conventional, partial

    [sweep]
    ebn0_db = 0, 10, 20, 30
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, replace

from .analytic import AnalyticConfig
from .channel import PRESETS, ChannelParams, preset
from .montecarlo import CONVENTIONAL_RX, Receiver, SimConfig
from .pulse import PulseSpec
from .txrx import FrameConfig


class ConfigError(ValueError):
    """Invalid experiment file; the message names the offending section/key."""


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_floats(text: str) -> tuple:
    return tuple(float(x) for x in text.replace(",", " ").split())


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_fmt(v) for v in value)
    return str(value)


_CHANNEL_KEYS = ChannelParams.field_names()


@dataclass(frozen=True)
class Experiment:
    """Fully parsed experiment file (plain values, config units)."""

    seed: int = 0
    output: str = ""
    channel_preset: str = "indoor_office_los"
    channel_overrides: tuple = ()
    pulse_order: int = 2
    pulse_duration_ns: float = 0.5
    pulse_shaping_tau_ns: float | None = None
    pulse_sample_interval_ns: float | None = None
    rate_mbps: float = 15.0
    pulses_per_bit: int = 1
    hop_slots: int = 16
    slot_ns: float = 0.5
    users: int = 1
    receivers: tuple = ("conventional", "partial")
    ebn0_db: tuple = ()
    max_bits: int = 1_000_000
    min_errors: int = 100
    block_bits: int = 100
    fixed_channel: bool = False
    analytic_ebn0_db: float = 20.0
    analytic_tolerance: float = 1e-4
    analytic_f_omega0: float = 1.0
    analytic_empirical_trials: int = 0
    analytic_bits_per_trial: int = 1

    # --- conversions -------------------------------------------------------------

    def channel_params(self) -> ChannelParams | None:
        if self.channel_preset == "awgn":
            if self.channel_overrides:
                raise ConfigError("[channel]: overrides are not allowed with preset = awgn")
            return None
        try:
            return preset(self.channel_preset, **dict(self.channel_overrides))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[channel]: {exc}") from None

    def pulse_spec(self) -> PulseSpec:
        try:
            return PulseSpec(
                order=self.pulse_order,
                duration_Tm=self.pulse_duration_ns * 1e-9,
                shaping_tau=None if self.pulse_shaping_tau_ns is None else self.pulse_shaping_tau_ns * 1e-9,
                sample_interval=(
                    None if self.pulse_sample_interval_ns is None else self.pulse_sample_interval_ns * 1e-9
                ),
            )
        except ValueError as exc:
            raise ConfigError(f"[pulse]: {exc}") from None

    def frame(self) -> FrameConfig:
        try:
            return FrameConfig.from_rate(
                self.rate_mbps * 1e6, Ns=self.pulses_per_bit, Nh=self.hop_slots, Tc=self.slot_ns * 1e-9
            )
        except ValueError as exc:
            raise ConfigError(f"[frame]: {exc}") from None

    def receiver_list(self) -> tuple:
        try:
            return tuple(Receiver.parse(r) for r in self.receivers)
        except ValueError as exc:
            raise ConfigError(f"[receivers] kinds: {exc}") from None

    def sim_config(self) -> SimConfig:
        try:
            return SimConfig(
                channel=self.channel_params(),
                frame=self.frame(),
                pulse=self.pulse_spec(),
                n_users=self.users,
                ebn0_grid_db=self.ebn0_db,
                receivers=self.receiver_list(),
                max_bits=self.max_bits,
                min_errors=self.min_errors,
                master_seed=self.seed,
                block_bits=self.block_bits,
                fixed_channel=self.fixed_channel,
            )
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"[sweep]/[users]: {exc}") from None

    def analytic_config(self, receiver: Receiver = CONVENTIONAL_RX) -> AnalyticConfig:
        ch = self.channel_params()
        if ch is None:
            raise ConfigError("[channel] preset: the analytic breakdown needs a multipath channel, not awgn")
        frame = self.frame()
        try:
            return AnalyticConfig(
                channel=ch,
                frame=frame,
                pulse=self.pulse_spec(),
                n_interferers_Nu=self.users - 1,
                N0=frame.Ns / 10 ** (self.analytic_ebn0_db / 10),
                receiver=receiver,
                tolerance=self.analytic_tolerance,
                f_omega0=self.analytic_f_omega0,
            )
        except ValueError as exc:
            raise ConfigError(f"[analytic]: {exc}") from None

    # --- serialisation -----------------------------------------------------------

    def to_ini(self) -> str:
        """Canonical text form; ``parse_experiment(e.to_ini()) == e``."""
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        exp = {"seed": self.seed}
        if self.output:
            exp["output"] = self.output
        cp["experiment"] = {k: _fmt(v) for k, v in exp.items()}
        cp["channel"] = {"preset": self.channel_preset, **{k: _fmt(v) for k, v in self.channel_overrides}}
        pulse = {"order": self.pulse_order, "duration_ns": self.pulse_duration_ns}
        if self.pulse_shaping_tau_ns is not None:
            pulse["shaping_tau_ns"] = self.pulse_shaping_tau_ns
        if self.pulse_sample_interval_ns is not None:
            pulse["sample_interval_ns"] = self.pulse_sample_interval_ns
        cp["pulse"] = {k: _fmt(v) for k, v in pulse.items()}
        cp["frame"] = {
            "rate_mbps": _fmt(self.rate_mbps),
            "pulses_per_bit": _fmt(self.pulses_per_bit),
            "hop_slots": _fmt(self.hop_slots),
            "slot_ns": _fmt(self.slot_ns),
        }
        cp["users"] = {"count": _fmt(self.users)}
        cp["receivers"] = {"kinds": ", ".join(self.receivers)}
        cp["sweep"] = {
            "ebn0_db": _fmt(self.ebn0_db),
            "max_bits": _fmt(self.max_bits),
            "min_errors": _fmt(self.min_errors),
            "block_bits": _fmt(self.block_bits),
            "fixed_channel": _fmt(self.fixed_channel),
        }
        cp["analytic"] = {
            "ebn0_db": _fmt(self.analytic_ebn0_db),
            "tolerance": _fmt(self.analytic_tolerance),
            "f_omega0": _fmt(self.analytic_f_omega0),
            "empirical_trials": _fmt(self.analytic_empirical_trials),
            "bits_per_trial": _fmt(self.analytic_bits_per_trial),
        }
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue().rstrip("\n") + "\n"

    def sha256(self) -> str:
        return hashlib.sha256(self.to_ini().encode()).hexdigest()

    def with_seed(self, seed: int) -> "Experiment":
        _check_seed(seed, "--seed")
        return replace(self, seed=seed)


def _check_seed(seed: int, where: str):
    if not 0 <= seed < 2**64:
        raise ConfigError(f"{where}: seed must be an unsigned 64-bit integer")


# section -> key -> (Experiment field, parser)
_SCHEMA = {
    "experiment": {"seed": ("seed", int), "output": ("output", str)},
    "pulse": {
        "order": ("pulse_order", int),
        "duration_ns": ("pulse_duration_ns", float),
        "shaping_tau_ns": ("pulse_shaping_tau_ns", float),
        "sample_interval_ns": ("pulse_sample_interval_ns", float),
    },
    "frame": {
        "rate_mbps": ("rate_mbps", float),
        "pulses_per_bit": ("pulses_per_bit", int),
        "hop_slots": ("hop_slots", int),
        "slot_ns": ("slot_ns", float),
    },
    "users": {"count": ("users", int)},
    "receivers": {"kinds": ("receivers", lambda s: tuple(x.strip() for x in s.split(",") if x.strip()))},
    "sweep": {
        "ebn0_db": ("ebn0_db", _parse_floats),
        "max_bits": ("max_bits", lambda s: int(float(s))),
        "min_errors": ("min_errors", int),
        "block_bits": ("block_bits", int),
        "fixed_channel": ("fixed_channel", _parse_bool),
    },
    "analytic": {
        "ebn0_db": ("analytic_ebn0_db", float),
        "tolerance": ("analytic_tolerance", float),
        "f_omega0": ("analytic_f_omega0", float),
        "empirical_trials": ("analytic_empirical_trials", int),
        "bits_per_trial": ("analytic_bits_per_trial", int),
    },
}
_SECTIONS = ("experiment", "channel", *(s for s in _SCHEMA if s != "experiment"))


def parse_experiment(text: str) -> Experiment:
    """Parse an experiment file's text; raises :class:`ConfigError` naming the bad key."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    values = {}
    for section in cp.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        items = dict(cp.items(section))
        if section == "channel":
            values.update(_parse_channel(items))
            continue
        schema = _SCHEMA[section]
        for key, raw in items.items():
            if key not in schema:
                raise ConfigError(f"[{section}] {key}: unknown key")
            name, conv = schema[key]
            try:
                values[name] = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: {exc}") from None
    if "seed" in values:
        _check_seed(values["seed"], "[experiment] seed")
    exp = Experiment(**values)
    # surface semantic errors at parse time
    exp.receiver_list()
    exp.channel_params()
    exp.frame()
    return exp


def _parse_channel(items: dict) -> dict:
    out = {}
    name = items.pop("preset", "indoor_office_los")
    if name not in PRESETS and name != "awgn":
        raise ConfigError(f"[channel] preset: unknown preset {name!r}; choose from {sorted(PRESETS) + ['awgn']}")
    out["channel_preset"] = name
    overrides = []
    for key, raw in items.items():
        if key not in _CHANNEL_KEYS:
            raise ConfigError(f"[channel] {key}: unknown key")
        try:
            overrides.append((key, float(raw)))
        except ValueError as exc:
            raise ConfigError(f"[channel] {key}: {exc}") from None
    out["channel_overrides"] = tuple(sorted(overrides))
    return out


def load_experiment(path) -> Experiment:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_experiment(text)


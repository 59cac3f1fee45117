"""Impulse-radio UWB link simulator with conventional and partial correlation templates."""

from .channel import PRESETS, ChannelParams, ChannelRealization, preset, realize_channel
from .pulse import PulseSpec, SampledWaveform, autocorrelation, make_pulse
from .txrx import FrameConfig

__all__ = [
    "PRESETS",
    "ChannelParams",
    "ChannelRealization",
    "FrameConfig",
    "PulseSpec",
    "SampledWaveform",
    "autocorrelation",
    "make_pulse",
    "preset",
    "realize_channel",
]

__version__ = "0.1.0"

"""Nyquist WDM 16QAM link simulator."""

from .signal import F_REF, DualPolSignal, SampledSignal, SpectrumView

__all__ = ["F_REF", "DualPolSignal", "SampledSignal", "SpectrumView"]

"""NYQIQ1 binary IQ capture files.

Layout (little-endian): magic ``NYQIQ1``, version u16 (=1), n_pol u16,
sample_rate f64, center_freq f64, n_samples u64, then one block per
polarization of interleaved I/Q f64 pairs.
"""

from __future__ import annotations

import os
import struct
from typing import Union

import numpy as np

from .signal import DualPolSignal, SampledSignal

MAGIC = b"NYQIQ1"
VERSION = 1
_HEADER = struct.Struct("<6sHHddQ")


class IqFormatError(ValueError):
    pass


def encode(sig: Union[SampledSignal, DualPolSignal]) -> bytes:
    pols = sig.pols if isinstance(sig, DualPolSignal) else (sig,)
    head = _HEADER.pack(MAGIC, VERSION, len(pols), sig.sample_rate, sig.center_freq, len(sig))
    body = np.concatenate([p.samples for p in pols]).astype("<c16").tobytes()
    return head + body


def decode(data: bytes) -> Union[SampledSignal, DualPolSignal]:
    if len(data) < _HEADER.size:
        raise IqFormatError("file shorter than the NYQIQ1 header")
    magic, version, n_pol, fs, fc, n = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise IqFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise IqFormatError(f"unsupported version {version}")
    if n_pol not in (1, 2):
        raise IqFormatError(f"n_pol must be 1 or 2, got {n_pol}")
    expected = _HEADER.size + n_pol * n * 16
    if len(data) != expected:
        raise IqFormatError(f"size {len(data)} bytes, header implies {expected}")
    x = np.frombuffer(data, dtype="<c16", offset=_HEADER.size).reshape(n_pol, n)
    if n_pol == 1:
        return SampledSignal(x[0], fs, fc)
    return DualPolSignal.from_arrays(x[0], x[1], fs, fc)


def write_iq(path: Union[str, os.PathLike], sig: Union[SampledSignal, DualPolSignal]) -> None:
    with open(path, "wb") as fh:
        fh.write(encode(sig))


def read_iq(path: Union[str, os.PathLike]) -> Union[SampledSignal, DualPolSignal]:
    with open(path, "rb") as fh:
        return decode(fh.read())

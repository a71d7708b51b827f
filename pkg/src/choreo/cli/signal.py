"""Spectral peak extraction for slow-mode frequency measurements.

The measured series are short (a handful of slow cycles over thousands of
samples), so a raw FFT bin is far too coarse.  Peaks are therefore refined
by fitting a parabola through the log-magnitudes of the three bins around
each local maximum of the Hann-windowed spectrum; for a well-separated tone
this recovers the frequency to a small fraction of a bin.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FrequencyPeak:
    frequency: float      # cycles per unit time
    amplitude: float      # amplitude of the underlying tone (approximate)

    def to_record(self) -> dict:
        return {"frequency": self.frequency, "amplitude": self.amplitude}


def freq_extract(series, rate: float, top_k: int = 4, band=None,
                 min_samples: int = 1 << 12) -> list:
    """Dominant oscillation frequencies of a uniformly sampled series.

    Returns up to top_k FrequencyPeak entries sorted by amplitude, largest
    first.  band = (lo, hi) restricts the search window in frequency.  A
    series without oscillatory content returns an empty list.
    """
    x = np.asarray(series, dtype=float).ravel()
    n = x.size
    if n < min_samples:
        raise ValueError(f"need at least {min_samples} samples, got {n}")
    if rate <= 0:
        raise ValueError("rate must be positive")
    x = x - x.mean()
    scale = float(np.max(np.abs(x)))
    if scale == 0.0 or not np.isfinite(scale):
        return []

    w = np.hanning(n)
    mag = np.abs(np.fft.rfft(x * w))
    freqs = np.fft.rfftfreq(n, d=1.0 / rate)

    # interior local maxima, away from the DC and Nyquist lobes
    k = np.arange(2, mag.size - 2)
    local = (mag[k] > mag[k - 1]) & (mag[k] >= mag[k + 1])
    strong = mag[k] > 1e-8 * mag.max()
    candidates = k[local & strong]

    peaks = []
    tiny = 1e-300
    for kk in candidates:
        a, b, c = np.log(mag[kk - 1:kk + 2] + tiny)
        denom = a - 2.0 * b + c
        p = 0.5 * (a - c) / denom if denom != 0.0 else 0.0
        p = min(0.5, max(-0.5, p))
        freq = (kk + p) * rate / n
        if band is not None and not (band[0] <= freq <= band[1]):
            continue
        log_peak = b - 0.25 * (a - c) * p
        amplitude = 2.0 * np.exp(log_peak) / w.sum()
        peaks.append(FrequencyPeak(float(freq), float(amplitude)))

    peaks.sort(key=lambda pk: -pk.amplitude)
    return peaks[:top_k]

"""Iterative radix-2 FFT and one-sided magnitude spectra."""

from __future__ import annotations

import numpy as np

from csihar.errors import ContractError


def next_pow2(n: int) -> int:
    return 1 << max(0, (int(n) - 1).bit_length())


def fft_radix2(x) -> np.ndarray:
    """Cooley-Tukey decimation-in-time FFT; ``len(x)`` must be a power of two."""
    a = np.asarray(x, dtype=np.complex128)
    n = a.shape[0]
    if n < 1 or n & (n - 1):
        raise ContractError(f"radix-2 FFT needs a power-of-two length, got {n}")
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    a = a[rev].copy()
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(-2j * np.pi * np.arange(half) / size)
        blocks = a.reshape(-1, size)
        even = blocks[:, :half].copy()
        odd = blocks[:, half:] * tw
        blocks[:, :half] = even + odd
        blocks[:, half:] = even - odd
        size *= 2
    return a


def magnitude_spectrum(series, sample_rate: float) -> tuple[np.ndarray, np.ndarray]:
    """One-sided amplitude spectrum of a real series.

    The mean is removed before zero-padding to the next power of two (so padding
    does not leak the DC level into other bins) and reported back in bin 0.
    Magnitudes are divided by the unpadded length.
    """
    s = np.asarray(series, dtype=np.float64)
    n = s.shape[0]
    if n < 2:
        raise ContractError("spectrum needs at least 2 samples")
    m = s.mean()
    size = next_pow2(n)
    padded = np.zeros(size)
    padded[:n] = s - m
    spec = np.abs(fft_radix2(padded)[: size // 2 + 1]) / n
    spec[0] = abs(m)
    freqs = np.arange(size // 2 + 1) * sample_rate / size
    return freqs, spec

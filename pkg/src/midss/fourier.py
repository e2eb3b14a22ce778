"""2D Fourier transforms and progress-aware random amplitude mixup.

The transform is a recursive mixed-radix Cooley-Tukey FFT that handles any
length; prime lengths above ``_DIRECT_MAX`` go through Bluestein's chirp-z
algorithm on a power-of-two grid.  Spectra are stored DC-centered.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .exceptions import DimensionError, NumericalIntegrityError
from .grid import as_grid, elementwise_mix

_DIRECT_MAX = 16
IMAG_DISCARD_TOL = 1e-6
IMAG_ERROR_TOL = 1e-3


# -- 1D kernels ----------------------------------------------------------------


@lru_cache(maxsize=None)
def _smallest_factor(n):
    if n % 2 == 0:
        return 2
    f = 3
    while f * f <= n:
        if n % f == 0:
            return f
        f += 2
    return n


@lru_cache(maxsize=64)
def _dft_matrix(n, sign):
    k = np.arange(n)
    return np.exp(sign * 2j * np.pi * np.outer(k, k) / n)


@lru_cache(maxsize=64)
def _twiddles(p, m, sign):
    return np.exp(sign * 2j * np.pi * np.outer(np.arange(p), np.arange(m)) / (p * m))


@lru_cache(maxsize=32)
def _chirp(n, sign):
    k = np.arange(n)
    # k^2 mod 2n keeps the angle small for large n
    return np.exp(sign * 1j * np.pi * ((k * k) % (2 * n)) / n)


def _fft_last(x, sign):
    """Unnormalized DFT along the last axis with kernel ``exp(sign*2*pi*i*jk/n)``."""
    n = x.shape[-1]
    if n == 1:
        return x.copy()
    p = _smallest_factor(n)
    if p == n:
        if n <= _DIRECT_MAX:
            return x @ _dft_matrix(n, sign).T
        return _bluestein(x, sign)
    m = n // p
    sub = np.swapaxes(x.reshape(*x.shape[:-1], m, p), -1, -2)
    y = _fft_last(sub, sign) * _twiddles(p, m, sign)
    out = np.einsum("qr,...rk->...qk", _dft_matrix(p, sign), y)
    return out.reshape(x.shape)


def _bluestein(x, sign):
    n = x.shape[-1]
    size = 1 << (2 * n - 2).bit_length()
    w = _chirp(n, sign)
    a = np.zeros(x.shape[:-1] + (size,), dtype=np.complex128)
    a[..., :n] = x * w
    b = np.zeros(size, dtype=np.complex128)
    b[:n] = np.conj(w)
    b[size - n + 1 :] = np.conj(w[1:][::-1])
    conv = _fft_last(_fft_last(a, -1) * _fft_last(b, -1), 1) / size
    return conv[..., :n] * w


def fft1(x, inverse=False):
    x = np.asarray(x, dtype=np.complex128)
    if inverse:
        return _fft_last(x, 1) / x.shape[-1]
    return _fft_last(x, -1)


def fft2_complex(a, inverse=False):
    """2D DFT over the first two axes of an ``(H, W, ...)`` array."""
    a = np.asarray(a, dtype=np.complex128)
    moved = np.moveaxis(a, (0, 1), (-2, -1))
    out = fft1(moved, inverse)
    out = np.swapaxes(fft1(np.swapaxes(out, -1, -2), inverse), -1, -2)
    return np.moveaxis(out, (-2, -1), (0, 1))


# -- spectra ---------------------------------------------------------------------


@dataclass(frozen=True)
class Spectrum:
    """Polar form of a per-channel 2D DFT, ``(H, W, D)`` each."""

    amplitude: np.ndarray
    phase: np.ndarray
    centered: bool = True

    def to_complex(self):
        z = self.amplitude * np.exp(1j * self.phase)
        if self.centered:
            z = np.fft.ifftshift(z, axes=(0, 1))
        return z


def _polar(z, centered):
    if centered:
        z = np.fft.fftshift(z, axes=(0, 1))
    phase = np.angle(z)
    phase[phase <= -np.pi] = np.pi
    return Spectrum(np.abs(z), phase, centered)


def fft2(image, centered=True):
    """Amplitude/phase spectrum of each channel of an ``(H, W, D)`` image."""
    return _polar(fft2_complex(as_grid(image, "image")), centered)


def ifft2(spectrum):
    """Invert :func:`fft2`, returning a real image.

    Raises NumericalIntegrityError when the inverse carries an imaginary part
    above ``IMAG_ERROR_TOL``, which only a non-Hermitian (corrupted) spectrum
    can produce.
    """
    z = fft2_complex(spectrum.to_complex(), inverse=True)
    residue = float(np.max(np.abs(z.imag))) if z.size else 0.0
    if residue > IMAG_ERROR_TOL:
        raise NumericalIntegrityError(f"inverse transform has imaginary residue {residue:.3g}")
    return np.ascontiguousarray(z.real)


# -- amplitude mixup ---------------------------------------------------------------


def phi_schedule(t, t_total):
    """Ceiling of the amplitude mixing ratio: grows linearly from 0 to 1 over training."""
    if t_total <= 0:
        return 1.0
    if t > t_total:
        warnings.warn(f"iteration {t} exceeds t_total={t_total}; clamping progress to 1", stacklevel=2)
        return 1.0
    return t / t_total


def _round_half_up(v):
    return int(math.floor(v + 0.5))


def low_frequency_window(height, width, beta):
    """Boolean ``(H, W)`` window around DC in the centered spectrum.

    The nominal extent is ``round(2*beta*H) x round(2*beta*W)`` (at least one
    bin); it is made symmetric about DC (odd extent) so that mixing keeps the
    spectrum conjugate-symmetric and the inverse transform real.
    """
    if not 0 < beta <= 0.5:
        raise ValueError(f"beta must lie in (0, 0.5], got {beta}")
    rows = np.zeros(height, dtype=bool)
    cols = np.zeros(width, dtype=bool)
    for sel, n in ((rows, height), (cols, width)):
        half = max(1, _round_half_up(2 * beta * n)) // 2
        c = n // 2
        sel[max(0, c - half) : min(n, c + half + 1)] = True
    return np.outer(rows, cols)


def spectral_mask(height, width, beta, rho):
    """Mixing mask that is ``rho`` inside the low-frequency window and 0 elsewhere."""
    return low_frequency_window(height, width, beta) * float(rho)


def amplitude_mix(x_w, u_w, beta, rho):
    """Move the low-frequency amplitude of ``x_w`` toward ``u_w`` by ratio ``rho``, keeping ``x_w``'s phase."""
    x_w = as_grid(x_w, "x_w")
    u_w = as_grid(u_w, "u_w")
    if x_w.shape != u_w.shape:
        raise DimensionError(f"tp_ram inputs differ in shape: {x_w.shape} vs {u_w.shape}")
    sx, su = fft2(x_w), fft2(u_w)
    mask = spectral_mask(x_w.shape[0], x_w.shape[1], beta, rho)
    amp = elementwise_mix(su.amplitude, sx.amplitude, mask)
    return ifft2(Spectrum(amp, sx.phase))


def sample_mixing_ratio(t, t_total, rng, progress_aware=True):
    """Draw the amplitude mixing ratio: U[0, phi(t)] when progress-aware, U[0, 1] otherwise."""
    ceiling = phi_schedule(t, t_total) if progress_aware else 1.0
    return float(rng.uniform(0.0, 1.0)) * ceiling


def tp_ram(x_w, u_w, beta, t, t_total, rng, progress_aware=True):
    """Style-shift a labeled image toward an unlabeled one in the low-frequency amplitude.

    One mixing ratio is drawn per call.  With ``progress_aware=False`` the ratio
    ignores training progress (plain random amplitude mixup).  The result is
    clamped to [-1, 1].
    """
    rho = sample_mixing_ratio(t, t_total, rng, progress_aware)
    return np.clip(amplitude_mix(x_w, u_w, beta, rho), -1.0, 1.0)

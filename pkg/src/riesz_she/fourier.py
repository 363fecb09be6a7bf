"""Fourier convention shared by every module.

The forward transform is

    F phi(xi) = int phi(x) exp(-2 pi i x xi) dx,

so frequencies are ordinary (cycles per unit length), not angular. Under
this convention the heat kernel with variance ``kappa * t`` has transform
``exp(-2 pi^2 kappa t xi^2)`` and its squared modulus carries the
``4 pi^2`` exponent used throughout the kernel estimates.

On the periodic grid of circumference ``2L`` with ``n_x`` points the
discrete frequencies are ``xi_j = j / (2L)``; ``rfft_frequencies`` returns
the nonnegative half used with ``numpy``/``scipy`` real FFTs.
"""

import numpy as np

TWO_PI = 2.0 * np.pi


def heat_symbol(kappa, t, xi):
    """Fourier transform of the heat kernel p_t at frequency ``xi``."""
    xi = np.asarray(xi, dtype=float)
    return np.exp(-2.0 * np.pi**2 * kappa * t * xi**2)


def rfft_frequencies(n_x, L):
    """Nonnegative grid frequencies ``j / (2L)``, ``j = 0 .. n_x // 2``."""
    return np.arange(n_x // 2 + 1) / (2.0 * L)


def full_frequencies(n_x, L):
    """All ``n_x`` grid frequencies in FFT order."""
    return np.fft.fftfreq(n_x, d=2.0 * L / n_x)

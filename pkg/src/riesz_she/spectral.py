"""Planned real FFTs along the last axis for the solver's hot loop.

Uses FFTW through pyFFTW when it is installed, planned with
``FFTW_ESTIMATE`` so that plan choice (and therefore every output bit)
does not depend on timing measurements. Falls back to ``scipy.fft``.
"""

import numpy as np
import scipy.fft as sfft

try:
    import pyfftw
except ImportError:  # pragma: no cover - exercised only without pyfftw
    pyfftw = None

BACKEND = "fftw" if pyfftw is not None else "pocketfft"


def _empty(shape, dtype):
    return pyfftw.empty_aligned(shape, dtype=dtype) if pyfftw is not None else np.empty(shape, dtype=dtype)


def _padded(shape, dtype, rows):
    """Buffer of ``shape`` backed by at least two rows (see ``RealFFT``)."""
    buf = _empty((max(rows, 2), shape[-1]), dtype)
    buf[rows:] = 0
    return buf, buf[:rows].reshape(shape)


class RealFFT:
    """Forward/backward real FFT pair for arrays of one fixed shape.

    ``input`` feeds ``forward``, which fills ``spectrum``; ``backward``
    turns ``spectrum`` into ``output``. ``output`` is ``input`` unless
    ``separate_output`` is set. Callers may write straight into these
    buffers to skip copies; results returned by the methods are the
    buffers themselves and are overwritten by the next call.

    FFTW plans a lone row differently from a batch, so a single row is
    padded to two; each row's result is then independent of batch shape.
    """

    def __init__(self, shape, separate_output=False):
        self.shape = tuple(shape)
        self.n = self.shape[-1]
        cshape = self.shape[:-1] + (self.n // 2 + 1,)
        rows = int(np.prod(self.shape[:-1], dtype=int))
        a, self.input = _padded(self.shape, "float64", rows)
        c, self.spectrum = _padded(cshape, "complex128", rows)
        o, self.output = _padded(self.shape, "float64", rows) if separate_output else (a, self.input)
        if pyfftw is not None:
            self._fwd = pyfftw.FFTW(a, c, axes=(-1,), flags=("FFTW_ESTIMATE",), threads=1)
            self._bwd = pyfftw.FFTW(
                c, o, axes=(-1,), direction="FFTW_BACKWARD",
                flags=("FFTW_ESTIMATE", "FFTW_DESTROY_INPUT"), threads=1,
            )

    def forward(self, x=None):
        if x is not None:
            self.input[...] = x
        if pyfftw is None:
            self.spectrum[...] = sfft.rfft(self.input, axis=-1)
        else:
            self._fwd()
        return self.spectrum

    def backward(self, c=None):
        if c is not None and c is not self.spectrum:
            self.spectrum[...] = c
        if pyfftw is None:
            self.output[...] = sfft.irfft(self.spectrum, n=self.n, axis=-1)
        else:
            self._bwd(normalise_idft=True)
        return self.output

    def filter(self, x=None, symbol=1.0):
        """``x`` (default: current ``input``) multiplied by ``symbol`` in Fourier space."""
        c = self.forward(x)
        c *= symbol
        return self.backward()


def rfft(x):
    return RealFFT(np.shape(x)).forward(x).copy()


def irfft(c, n):
    shape = np.shape(c)[:-1] + (n,)
    return RealFFT(shape).backward(np.asarray(c)).copy()

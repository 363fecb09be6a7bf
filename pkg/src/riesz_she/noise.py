"""Space-time noise on the periodic grid and its Riesz coloring.

White cells are i.i.d. N(0, 1/(dt dx)), so a discrete stochastic integral
``sum(phi * noise) * dt * dx`` has variance ``sum(phi**2) * dt * dx``.
Colored rows are obtained from white rows by the spectral multiplier
``m(xi) = |xi|^-((1 - alpha) / 2)`` with ``m(0) = 0``; because
``m(xi)^2 = |xi|^-(1 - alpha)`` is the symbol of f_alpha, every alpha is
driven by the same white realization.
"""

import hashlib
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CouplingError, DomainError, PreconditionError
from .fourier import full_frequencies, rfft_frequencies
from .kernels import riesz_f, validate_alpha
from .spectral import irfft, rfft

NOISE_TAG = 0x6E6F697365  # "noise"


@dataclass(frozen=True)
class GridSpec:
    """Discretization of [0, T] x torus of circumference 2L.

    ``N`` is the half-width of the observation window [-N, N].
    """

    T: float = 0.5
    n_t: int = 2000
    L: float = 50.0
    n_x: int = 4096
    kappa: float = 1.0
    N: float = 10.0

    def __post_init__(self):
        if not (self.T > 0 and self.L > 0 and self.kappa > 0 and self.N > 0):
            raise DomainError(f"T, L, kappa, N must be positive: {self}")
        if int(self.n_t) != self.n_t or self.n_t < 1:
            raise DomainError(f"n_t must be a positive integer, got {self.n_t!r}")
        n = int(self.n_x)
        if n != self.n_x or n < 2 or n & (n - 1):
            raise DomainError(f"n_x must be a power of two, got {self.n_x!r}")
        margin = 4.0 * math.sqrt(self.kappa * self.T)
        if self.L - self.N < margin:
            raise DomainError(
                f"observation window [-{self.N}, {self.N}] needs margin {margin:.3g} inside [-{self.L}, {self.L}]"
            )

    @property
    def dt(self):
        return self.T / self.n_t

    @property
    def dx(self):
        return 2.0 * self.L / self.n_x

    @property
    def x(self):
        return -self.L + self.dx * np.arange(self.n_x)

    @property
    def t(self):
        return self.dt * np.arange(self.n_t + 1)

    @property
    def window(self):
        """Boolean mask of grid points inside [-N, N]."""
        return np.abs(self.x) <= self.N + 1e-12 * self.dx

    @property
    def freqs(self):
        return rfft_frequencies(self.n_x, self.L)

    def to_dict(self):
        return {"T": self.T, "n_t": self.n_t, "L": self.L, "n_x": self.n_x, "kappa": self.kappa, "N": self.N}


@dataclass(frozen=True, eq=False)
class NoiseSlab:
    """One realization of noise increments, shape ``(n_t, n_x)``.

    ``alpha == 1`` marks white noise. Treat ``values`` as read-only.
    """

    values: np.ndarray
    grid: GridSpec
    seed: int
    replica: int
    alpha: float = 1.0
    meta: dict = field(default_factory=dict)


def stream_generator(seed, replica, tag=NOISE_TAG):
    """Counter-based generator for one (seed, replica, tag) stream.

    The Philox key is derived by hashing the triple, so any replica's
    stream can be produced on its own, in any order.
    """
    if seed < 0 or replica < 0:
        raise DomainError("seed and replica must be nonnegative")
    digest = hashlib.sha256(struct.pack("<QQQ", seed & (2**64 - 1), replica, tag)).digest()
    key = np.frombuffer(digest[:16], dtype=np.uint64).copy()
    return np.random.Generator(np.random.Philox(key=key))


def white_scale(grid):
    return 1.0 / math.sqrt(grid.dt * grid.dx)


def sample_white_slab(grid, seed, replica):
    rng = stream_generator(seed, replica)
    values = rng.standard_normal((grid.n_t, grid.n_x))
    values *= white_scale(grid)
    values.flags.writeable = False
    return NoiseSlab(values, grid, int(seed), int(replica), 1.0)


def multiplier(grid, alpha):
    """Coloring multiplier on the rfft frequencies; ``m(0) = 0`` for alpha < 1."""
    a = validate_alpha(alpha)
    xi = grid.freqs
    if a == 1.0:
        return np.ones_like(xi)
    m = np.zeros_like(xi)
    m[1:] = xi[1:] ** (-(1.0 - a) / 2.0)
    return m


def color_spectrum(spectrum, grid, alpha):
    """Colored rows from the rfft ``spectrum`` of white rows (alpha < 1)."""
    return irfft(spectrum * multiplier(grid, alpha), grid.n_x)


def color_slab(slab, alpha):
    if slab.alpha != 1.0:
        raise PreconditionError(f"color_slab expects a white slab, got alpha={slab.alpha}")
    a = validate_alpha(alpha)
    if a == 1.0:
        return NoiseSlab(slab.values, slab.grid, slab.seed, slab.replica, 1.0)
    values = color_spectrum(rfft(slab.values), slab.grid, a)
    values.flags.writeable = False
    return NoiseSlab(values, slab.grid, slab.seed, slab.replica, a)


def discrete_target_covariance(grid, alpha, lags=None):
    """Exact spatial covariance density of one colored row, C_disc(r).

    C_disc(r) = (1/(2L)) sum_{j != 0} m(xi_j)^2 exp(2 pi i xi_j r), indexed by
    lag in grid cells. A slab row's covariance is ``C_disc / dt``. For
    alpha = 1 the white path returns ``delta_{r,0} / dx``.

    Returns ``(lags, values)``.
    """
    a = validate_alpha(alpha)
    lags = np.arange(grid.n_x // 2 + 1) if lags is None else np.asarray(lags, dtype=int)
    if a == 1.0:
        return lags, np.where(lags % grid.n_x == 0, 1.0 / grid.dx, 0.0)
    xi = np.abs(full_frequencies(grid.n_x, grid.L))
    m2 = np.zeros_like(xi)
    m2[xi > 0] = xi[xi > 0] ** (-(1.0 - a))
    cov = np.fft.ifft(m2).real / grid.dx
    return lags, cov[lags % grid.n_x]


def continuum_comparison(grid, alpha, lags):
    """Ratio C_disc(r) / f_alpha(r) at nonzero lags (diagnostic only)."""
    lags, c = discrete_target_covariance(grid, alpha, lags)
    return c / riesz_f(alpha, lags * grid.dx)


@dataclass(frozen=True)
class CovarianceEstimate:
    lags: np.ndarray
    estimate: np.ndarray
    std_error: np.ndarray
    M: int


def empirical_covariance(slabs, lags, batch_size=20):
    """Spatial cross-moments E[w(t, x) w(t, x + r)] averaged over rows and replicas.

    The noise is centered by construction, so the raw second moment is the
    covariance. Standard errors come from nonoverlapping replica batches.
    """
    slabs = list(slabs)
    if len(slabs) < 100:
        raise DomainError(f"need at least 100 slabs, got {len(slabs)}")
    alphas = {s.alpha for s in slabs}
    grids = {s.grid for s in slabs}
    if len(alphas) != 1 or len(grids) != 1:
        raise CouplingError("slabs must share grid and alpha")
    lags = np.asarray(lags, dtype=int)
    per_replica = np.array([_row_lag_moments(s.values, lags) for s in slabs])
    return _batched(per_replica, lags, batch_size)


def _row_lag_moments(values, lags):
    return np.array([np.mean(values * np.roll(values, -r, axis=-1)) for r in lags])


def _batched(per_replica, lags, batch_size):
    M = per_replica.shape[0]
    nb = M // batch_size
    if nb < 2:
        raise DomainError("not enough replicas for two batches")
    means = per_replica[: nb * batch_size].reshape(nb, batch_size, -1).mean(axis=1)
    est = per_replica.mean(axis=0)
    se = means.std(axis=0, ddof=1) / math.sqrt(nb)
    return CovarianceEstimate(lags, est, se, M)


def covariance_from_white_rows(rows_hat, grid, alpha, lags):
    """Per-replica lag moments of colored rows given rfft of white rows.

    ``rows_hat`` has shape ``(n_rows, n_freq)``; avoids materializing a slab.
    """
    colored = color_spectrum(rows_hat, grid, alpha) if alpha != 1.0 else irfft(rows_hat, grid.n_x)
    return _row_lag_moments(colored, np.asarray(lags, dtype=int))


_HEADER = struct.Struct("<4sI6d2qQqd")
_MAGIC = b"RSHE"


def write_binary(path, values, grid, seed, replica, alpha):
    """Little-endian header (grid, seed, replica, alpha) then row-major doubles."""
    values = np.ascontiguousarray(values, dtype="<f8")
    header = _HEADER.pack(
        _MAGIC, 1, grid.T, grid.L, grid.kappa, grid.N, grid.dt, grid.dx,
        grid.n_t, grid.n_x, seed, replica, alpha,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(struct.pack("<2q", *values.shape))
        fh.write(values.tobytes())


def read_binary(path):
    """Inverse of ``write_binary``: ``(values, grid, seed, replica, alpha)``."""
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, version, T, L, kappa, N, _dt, _dx, n_t, n_x, seed, replica, alpha = _HEADER.unpack_from(raw)
    if magic != _MAGIC or version != 1:
        raise ValueError(f"{path}: bad header")
    rows, cols = struct.unpack_from("<2q", raw, _HEADER.size)
    values = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size + 16).reshape(rows, cols).astype(float)
    grid = GridSpec(T=T, n_t=n_t, L=L, n_x=n_x, kappa=kappa, N=N)
    return values, grid, seed, replica, alpha


def dump_slab(slab, path):
    write_binary(path, slab.values, slab.grid, slab.seed, slab.replica, slab.alpha)


def load_slab(path):
    values, grid, seed, replica, alpha = read_binary(path)
    return NoiseSlab(values, grid, seed, replica, alpha)

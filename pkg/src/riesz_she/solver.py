"""Exponential-Euler solver for the mild form of the stochastic heat equation.

One step is

    u_next = S_dt [u + sigma(u) * eta * dt],

with S_dt the exact heat semigroup on the torus, applied as the Fourier
multiplier exp(-2 pi^2 kappa dt xi^2). Noise enters at the left endpoint.
All alphas of a coupled family are colored from the same white rows.
"""

import json
import warnings
from dataclasses import dataclass

import numpy as np

from . import __version__
from .errors import BlowUpError, DomainError
from .fourier import heat_symbol
from .kernels import validate_alpha
from .spectral import RealFFT
from .noise import (
    GridSpec,
    color_slab,
    multiplier,
    read_binary,
    sample_white_slab,
    stream_generator,
    white_scale,
    write_binary,
)

SIGMA_KINDS = ("constant", "linear", "tanh")


@dataclass(frozen=True)
class SigmaSpec:
    kind: str = "tanh"
    lam: float = 1.0

    def __post_init__(self):
        if self.kind not in SIGMA_KINDS:
            raise DomainError(f"sigma kind must be one of {SIGMA_KINDS}, got {self.kind!r}")

    @property
    def lipschitz_K(self):
        return 0.0 if self.kind == "constant" else abs(self.lam)

    def __call__(self, u, out=None):
        if out is None:
            out = np.empty_like(u)
        if self.kind == "constant":
            out[...] = self.lam
        elif self.kind == "linear":
            np.multiply(u, self.lam, out=out)
        else:
            np.tanh(u, out=out)
            out *= self.lam
        return out

    def to_dict(self):
        return {"kind": self.kind, "lambda": self.lam}


@dataclass(frozen=True, eq=False)
class SolutionPath:
    u: np.ndarray
    alpha: float
    sigma: SigmaSpec
    seed: int
    replica: int
    grid: GridSpec

    def window_values(self):
        return self.u[:, self.grid.window]

    def metadata(self):
        return {
            "grid": self.grid.to_dict(),
            "sigma": self.sigma.to_dict(),
            "alpha": self.alpha,
            "seed": self.seed,
            "replica": self.replica,
            "solver_version": __version__,
        }


def export_path(path, filename):
    """Binary array file plus a ``.json`` sidecar with the metadata."""
    write_binary(filename, path.u, path.grid, path.seed, path.replica, path.alpha)
    with open(str(filename) + ".json", "w") as fh:
        json.dump(path.metadata(), fh, indent=2, sort_keys=True)


def import_path(filename):
    u, grid, seed, replica, alpha = read_binary(filename)
    with open(str(filename) + ".json") as fh:
        meta = json.load(fh)
    sigma = SigmaSpec(meta["sigma"]["kind"], meta["sigma"]["lambda"])
    return SolutionPath(u, alpha, sigma, seed, replica, grid)


def initial_profile(kind, grid, custom=None):
    if kind == "constant_one":
        return np.ones(grid.n_x)
    if kind == "bump":
        return np.exp(-grid.x**2 / 2.0)
    if kind == "custom":
        v = np.asarray(custom, dtype=float)
        if v.shape != (grid.n_x,):
            raise DomainError(f"custom profile must have length {grid.n_x}, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DomainError("custom profile must be finite")
        return v
    raise DomainError(f"unknown initial profile {kind!r}")


def semigroup_symbol(grid, dt=None):
    return heat_symbol(grid.kappa, grid.dt if dt is None else dt, grid.freqs)


def heat_flow(u, grid, t):
    """Apply S_t to grid vector(s) ``u`` along the last axis."""
    return RealFFT(np.shape(u)).filter(u, semigroup_symbol(grid, t)).copy()


def _check_finite(u, n):
    if not np.all(np.isfinite(u)):
        bad = np.argwhere(~np.isfinite(u))[0]
        raise BlowUpError(f"non-finite value at time step {n}, index {tuple(bad)}", index=(n, int(bad[-1])))


def step(u_now, noise_row, sigma, grid, n=0):
    """One exponential-Euler step; ``n`` labels the step in blow-up errors."""
    with np.errstate(over="ignore", invalid="ignore"):
        v = u_now + sigma(u_now) * noise_row * grid.dt
        out = RealFFT(np.shape(v)).filter(v, semigroup_symbol(grid)).copy()
    _check_finite(out, n + 1)
    return out


@dataclass(frozen=True)
class Recording:
    """Which part of a path to keep: every ``time_stride``-th step from
    ``t_start`` (a step index), every ``space_stride``-th point of the
    observation window. ``None`` keeps the full grid."""

    time_stride: int = 1
    space_stride: int = 1
    t_start: int = 0

    def time_indices(self, grid):
        return np.arange(self.t_start, grid.n_t + 1, self.time_stride)

    def space_indices(self, grid):
        return np.flatnonzero(grid.window)[:: self.space_stride]


def simulate(grid, alphas, sigma, u0, seed, replicas, recording=None, observer=None):
    """Integrate a coupled family for a block of replicas.

    Every replica draws its white rows from its own stream; all ``alphas``
    of a replica color those same rows. Returns an array of shape
    ``(len(replicas), len(alphas), n_rec_t, n_rec_x)``; with
    ``recording=None`` the full ``(n_t + 1, n_x)`` path is kept.

    With ``observer`` nothing is stored: ``observer(slot, values)`` is
    called at each recorded step with the recorded columns, shape
    ``(len(replicas), len(alphas), n_rec_x)``, and None is returned.
    """
    alphas = [validate_alpha(a) for a in alphas]
    replicas = list(replicas)
    B, A = len(replicas), len(alphas)
    gens = [stream_generator(seed, r) for r in replicas]
    scale = white_scale(grid)
    colored = [i for i, a in enumerate(alphas) if a != 1.0]
    white = [i for i, a in enumerate(alphas) if a == 1.0]
    mult = np.stack([multiplier(grid, alphas[i]) for i in colored]) if colored else None
    E = semigroup_symbol(grid)
    dt = grid.dt

    if recording is None:
        t_keep = np.arange(grid.n_t + 1)
        x_keep = slice(None)
        n_rec_x = grid.n_x
    else:
        t_keep = recording.time_indices(grid)
        x_keep = recording.space_indices(grid)
        n_rec_x = len(x_keep)
    slot = np.full(grid.n_t + 1, -1)
    slot[t_keep] = np.arange(len(t_keep))
    out = None if observer is not None else np.empty((B, A, len(t_keep), n_rec_x))

    # u lives in the heat step's output buffer and the update is built in
    # its input buffer, so a step costs no copies.
    fft_u = RealFFT((B, A, grid.n_x), separate_output=True)
    u, tmp = fft_u.output, fft_u.input
    u[...] = np.broadcast_to(np.asarray(u0, dtype=float), u.shape)
    fft_w = RealFFT((B, grid.n_x))
    w = fft_w.input
    fft_c = RealFFT((B, len(colored), grid.n_x)) if colored else None
    cidx = _as_index(colored)

    def emit(n):
        if observer is not None:
            observer(slot[n], u[..., x_keep])
        else:
            out[:, :, slot[n]] = u[..., x_keep]

    if slot[0] >= 0:
        emit(0)
    with np.errstate(over="ignore", invalid="ignore"):
        for n in range(grid.n_t):
            for b, g in enumerate(gens):
                g.standard_normal(out=w[b])
            w *= scale
            # tmp = u + sigma(u) * eta * dt, with eta the colored rows
            sigma(u, out=tmp)
            if colored:
                np.multiply(fft_w.forward()[:, None, :], mult[None], out=fft_c.spectrum)
                tmp[:, cidx] *= fft_c.backward()
            for i in white:
                tmp[:, i] *= w
            tmp *= dt
            tmp += u
            fft_u.filter(symbol=E)
            if not np.isfinite(np.sum(u)):
                b, a_idx, x = np.argwhere(~np.isfinite(u))[0]
                raise BlowUpError(
                    f"non-finite value at step {n + 1}, x index {x}, replica {replicas[b]}, alpha {alphas[a_idx]}",
                    index=(n + 1, int(x)),
                    replica=replicas[b],
                )
            if slot[n + 1] >= 0:
                emit(n + 1)
    return out


def _as_index(idx):
    """A slice when ``idx`` is a contiguous run (so in-place updates need no copy)."""
    if idx and idx == list(range(idx[0], idx[-1] + 1)):
        return slice(idx[0], idx[-1] + 1)
    return idx


def solve_coupled_family(grid, alphas, sigma, init, seed, replica):
    """Paths for every alpha in ``alphas`` driven by one white slab."""
    alphas = [validate_alpha(a) for a in alphas]
    if len(set(alphas)) != len(alphas) and not all(a == 1.0 for a in alphas):
        raise DomainError(f"alphas must be distinct, got {alphas}")
    u0 = initial_profile(init, grid) if isinstance(init, str) else initial_profile("custom", grid, init)
    try:
        u = simulate(grid, alphas, sigma, u0, seed, [replica])[0]
    except BlowUpError as exc:
        exc.replica = replica
        raise
    return [SolutionPath(u[i], a, sigma, seed, replica, grid) for i, a in enumerate(alphas)]


def solve_path(grid, alpha, sigma, init, seed, replica):
    return solve_coupled_family(grid, [alpha], sigma, init, seed, replica)[0]


def stochastic_convolution(grid, integrand, noise):
    """sum_{m < n} S^{n-m} (integrand_m * noise_m * dt) for every n, as rows 0..n_t.

    ``integrand`` and ``noise`` are ``(n_t, n_x)``; row 0 of the result is zero.
    """
    E = semigroup_symbol(grid)
    fft = RealFFT((grid.n_x,))
    out = np.zeros((grid.n_t + 1, grid.n_x))
    for n in range(grid.n_t):
        out[n + 1] = fft.filter(out[n] + integrand[n] * noise[n] * grid.dt, E)
    return out


@dataclass(frozen=True, eq=False)
class PicardResult:
    path: SolutionPath
    iterate_deltas: list
    nonconvergent: bool


def picard_solve(grid, alpha, sigma, init, seed, replica, n_iter):
    """Picard iterates of the discrete mild equation on one colored slab.

    u^(0) is the heat flow of the initial profile; u^(n+1) is that flow plus
    the stochastic convolution of sigma(u^(n)). ``iterate_deltas[n]`` is the
    max-abs change from u^(n) to u^(n+1) on the observation window.
    ``nonconvergent`` flags deltas that stop decreasing after the third
    iterate above the rounding floor.
    """
    if n_iter < 1:
        raise DomainError("n_iter must be >= 1")
    a = validate_alpha(alpha)
    u0 = initial_profile(init, grid) if isinstance(init, str) else initial_profile("custom", grid, init)
    noise = color_slab(sample_white_slab(grid, seed, replica), a).values
    flow = np.empty((grid.n_t + 1, grid.n_x))
    flow[0] = u0
    E = semigroup_symbol(grid)
    fft = RealFFT((grid.n_x,))
    for n in range(grid.n_t):
        flow[n + 1] = fft.filter(flow[n], E)
    win = grid.window
    current = flow
    deltas = []
    for _ in range(n_iter):
        nxt = flow + stochastic_convolution(grid, sigma(current[:-1]), noise)
        _check_finite(nxt, -1)
        deltas.append(float(np.max(np.abs(nxt[:, win] - current[:, win]))))
        current = nxt
    # Deltas at the rounding floor fluctuate and are not a failure to contract.
    floor = 64 * np.finfo(float).eps * float(np.max(np.abs(current[:, win])))
    nonconvergent = any(deltas[i + 1] >= deltas[i] > floor for i in range(2, len(deltas) - 1))
    if nonconvergent:
        warnings.warn("Picard deltas stopped decreasing; gamma/T too aggressive for contraction", RuntimeWarning)
    return PicardResult(SolutionPath(current, a, sigma, seed, replica, grid), deltas, nonconvergent)

"""Monte Carlo estimators over ensembles of recorded paths.

Every estimator is split into a per-batch summary (sums over the replicas
of one batch) and a finalizer that turns a list of summaries into
``EnsembleStats``. ``Ensemble`` methods run both halves in memory; the
harness runs the summaries block by block in worker processes and
finalizes once, in block order, so results do not depend on scheduling.

Standard errors come from nonoverlapping replica batches: with batch means
m_b, sizes n_b and grand mean m over M replicas,
se^2 = nb / (nb - 1) * sum_b (n_b / M)^2 (m_b - m)^2.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import CouplingError, DomainError
from .kernels import validate_alpha
from .noise import discrete_target_covariance, sample_white_slab, color_slab
from .solver import Recording

MIN_BATCH = 20


@dataclass(frozen=True)
class EnsembleStats:
    estimate: float
    std_error: float
    M: int
    definition: str
    params: dict = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class Ensemble:
    """Recorded paths of one (grid, alpha, sigma), shape ``(M, n_rec_t, n_rec_x)``.

    ``t_index``/``x_index`` are the grid indices of the recorded rows and
    columns; ``replicas`` the replica ids, in order.
    """

    values: np.ndarray
    grid: object
    alpha: float
    sigma: object
    seed: int
    replicas: np.ndarray
    t_index: np.ndarray
    x_index: np.ndarray
    batch_size: int = MIN_BATCH

    @property
    def M(self):
        return self.values.shape[0]

    @property
    def times(self):
        return self.grid.dt * self.t_index

    @property
    def xs(self):
        return self.grid.x[self.x_index]

    @classmethod
    def from_paths(cls, paths, recording=None, batch_size=MIN_BATCH):
        paths = list(paths)
        if not paths:
            raise DomainError("empty ensemble")
        p0 = paths[0]
        for p in paths:
            if p.grid != p0.grid or p.alpha != p0.alpha or p.sigma != p0.sigma or p.seed != p0.seed:
                raise CouplingError("paths in an ensemble must share grid, alpha, sigma and seed")
        rec = recording or Recording()
        ti, xi = rec.time_indices(p0.grid), rec.space_indices(p0.grid)
        values = np.stack([p.u[np.ix_(ti, xi)] for p in paths])
        replicas = np.array([p.replica for p in paths])
        return cls(values, p0.grid, p0.alpha, p0.sigma, p0.seed, replicas, ti, xi, batch_size)

    def batch_slices(self):
        return batch_slices(self.M, self.batch_size)


def batch_slices(M, batch_size):
    """Nonoverlapping batches of ``batch_size``; the remainder joins the last."""
    nb = M // batch_size
    if nb < 2:
        raise DomainError(f"M={M} gives fewer than two batches of {batch_size}")
    bounds = [i * batch_size for i in range(nb)] + [M]
    return [slice(bounds[i], bounds[i + 1]) for i in range(nb)]


@dataclass
class BatchSum:
    """Sum of a per-replica statistic over one batch, and the batch size."""

    total: np.ndarray
    count: int


def batch_sum(per_replica):
    per_replica = np.asarray(per_replica, dtype=float)
    return BatchSum(per_replica.sum(axis=0), per_replica.shape[0])


def combine(sums):
    """Grand mean and batch standard error from per-batch sums."""
    totals = np.stack([s.total for s in sums])
    counts = np.array([s.count for s in sums], dtype=float)
    M = counts.sum()
    nb = len(sums)
    if nb < 2:
        raise DomainError("need at least two batches for a standard error")
    mean = totals.sum(axis=0) / M
    shape = (-1,) + (1,) * (totals.ndim - 1)
    bmeans = totals / counts.reshape(shape)
    w = (counts / M).reshape(shape)
    var = nb / (nb - 1) * np.sum(w**2 * (bmeans - mean) ** 2, axis=0)
    return mean, np.sqrt(var), int(M)


def _check_even_k(k):
    if k not in (2, 4, 6):
        raise DomainError(f"k must be an even integer in {{2, 4, 6}}, got {k!r}")


def _recorded_position(index_array, idx, what):
    pos = np.flatnonzero(index_array == idx)
    if pos.size == 0:
        raise DomainError(f"{what} index {idx} was not recorded")
    return int(pos[0])


# -- moments -----------------------------------------------------------------


def moment_summary(values, k, positions):
    """Per-batch sum of |u|^k at recorded ``positions`` (pairs of row, col)."""
    rows = [p[0] for p in positions]
    cols = [p[1] for p in positions]
    return batch_sum(np.abs(values[:, rows, cols]) ** k)


def moment_field(ens, k, points):
    """E|u_t(x)|^k at grid-index points ``(t_idx, x_idx)``."""
    _check_even_k(k)
    if ens.M < 2 * MIN_BATCH:
        raise DomainError(f"moment_field needs M >= {2 * MIN_BATCH}, got {ens.M}")
    win = np.flatnonzero(ens.grid.window)
    positions = []
    for t_idx, x_idx in points:
        if x_idx not in win:
            raise DomainError(f"point x index {x_idx} outside the observation window")
        positions.append((_recorded_position(ens.t_index, t_idx, "time"), _recorded_position(ens.x_index, x_idx, "space")))
    sums = [moment_summary(ens.values[s], k, positions) for s in ens.batch_slices()]
    mean, se, M = combine(sums)
    return [
        EnsembleStats(float(m), float(e), M, f"E|u|^{k}", {"t_index": int(p[0]), "x_index": int(p[1]), "alpha": ens.alpha})
        for m, e, p in zip(mean, se, points)
    ]


# -- N_{gamma,k} ---------------------------------------------------------------


def check_coupled(ensA, ensB):
    if ensA.seed != ensB.seed or not np.array_equal(ensA.replicas, ensB.replicas):
        raise CouplingError("ensembles are not coupled: seeds or replica ids differ")
    if ensA.grid != ensB.grid or ensA.sigma != ensB.sigma:
        raise CouplingError("coupled ensembles must share grid and sigma")
    if not (np.array_equal(ensA.t_index, ensB.t_index) and np.array_equal(ensA.x_index, ensB.x_index)):
        raise CouplingError("coupled ensembles must be recorded on the same points")


def absdiff_summary(valuesA, valuesB, k):
    return batch_sum(np.abs(valuesA - valuesB) ** k)


def n_gamma_k_from_sums(sums, times, gamma, k, params=None):
    """max over recorded (t, x) of exp(-gamma t) (E|d|^k)^(1/k), with se at the argmax."""
    mean, se, M = combine(sums)
    weight = np.exp(-gamma * np.asarray(times))[:, None]
    field_ = weight * mean ** (1.0 / k)
    i, j = np.unravel_index(np.argmax(field_), field_.shape)
    m = mean[i, j]
    est = float(field_[i, j])
    err = 0.0 if m == 0 else float(weight[i, 0] * se[i, j] * m ** (1.0 / k - 1.0) / k)
    params = dict(params or {}, gamma=gamma, k=k, argmax_t=float(times[i]), argmax_pos=int(j))
    return EnsembleStats(est, err, M, f"N_gamma,{k}", params)


def n_gamma_k_norm(ensA, ensB, gamma=1.0, k=2):
    """Coupled estimate of N_{gamma,k}(u_A - u_B) over the recorded grid.

    The sup over space and time becomes a max over recorded window points
    and recorded times, an under-estimate of the continuum sup.
    """
    _check_even_k(k)
    if gamma < 1:
        raise DomainError(f"gamma must be >= 1, got {gamma}")
    check_coupled(ensA, ensB)
    sums = [absdiff_summary(ensA.values[s], ensB.values[s], k) for s in ensA.batch_slices()]
    return n_gamma_k_from_sums(sums, ensA.times, gamma, k, {"alpha_a": ensA.alpha, "alpha_b": ensB.alpha})


# -- structure functions -------------------------------------------------------


def default_lags(grid, recording, n_lags=6):
    """Log-spaced lags (in grid cells / steps) from 4 cells up to 1/8 of the window.

    Spatial lags run to 1/8 of the window width; temporal lags to 1/8 of
    the fit interval [T/2, T]. Both are rounded to recorded strides.
    """
    n_win = int(np.count_nonzero(grid.window))
    sx, st = recording.space_stride, recording.time_stride
    space = _log_lags(max(4, sx), n_win // 8, sx, n_lags)
    time = _log_lags(max(4, st), (grid.n_t // 2) // 8, st, n_lags)
    return space, time


def _log_lags(lo, hi, stride, n):
    raw = np.geomspace(lo, hi, n)
    lags = np.unique(np.maximum(stride, np.round(raw / stride).astype(int) * stride))
    return [int(v) for v in lags]


def _late_rows(ens):
    return np.flatnonzero(ens.t_index >= ens.grid.n_t // 2)


def structure_summary(values, t_index, x_index, late_rows, k, space_lags, time_lags):
    """Per-batch sums of replica-averaged |increment|^k at each lag.

    Spatial increments use rows with t >= T/2 and all base points whose
    shifted point is still recorded; temporal increments use base times
    t >= T/2 with t + lag <= T.
    """
    dx_idx = x_index[1] - x_index[0] if len(x_index) > 1 else 1
    dt_idx = t_index[1] - t_index[0] if len(t_index) > 1 else 1
    late = values[:, late_rows, :]
    sp = []
    for r in space_lags:
        c = r // dx_idx
        sp.append(np.mean(np.abs(late[:, :, c:] - late[:, :, :-c]) ** k, axis=(1, 2)))
    tm = []
    for lag in time_lags:
        c = lag // dt_idx
        tm.append(np.mean(np.abs(late[:, c:, :] - late[:, :-c, :]) ** k, axis=(1, 2)))
    per_replica = np.concatenate([np.stack(sp, axis=1), np.stack(tm, axis=1)], axis=1)
    return batch_sum(per_replica)


@dataclass(frozen=True)
class ExponentFit:
    a_space: float
    a_time: float
    space: dict
    time: dict
    degenerate: bool
    M: int
    k: int


def _fit(lags, values, k):
    x = np.log(np.asarray(lags, dtype=float))
    y = np.log(values)
    A = np.vstack([x, np.ones_like(x)]).T
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (slope * x + intercept)
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 1.0
    return {"slope": float(slope), "exponent": float(slope / k), "intercept": float(intercept), "r2": float(r2), "residuals": resid.tolist()}


def _validate_lags(lags, stride, what):
    if len(lags) < 4:
        raise DomainError(f"need at least 4 {what} lags, got {len(lags)}")
    if any(l <= 0 or l % stride for l in lags):
        raise DomainError(f"{what} lags must be positive multiples of the recorded stride {stride}")
    if max(lags) < 10 * min(lags):
        raise DomainError(f"{what} lags must span at least one decade, got {min(lags)}..{max(lags)}")


def _jackknife_exponent_se(sums, k, space_lags, time_lags):
    """Delete-one-batch jackknife standard errors of the two fitted exponents."""
    totals = np.stack([b.total for b in sums])
    counts = np.array([b.count for b in sums], dtype=float)
    grand, M, nb = totals.sum(axis=0), counts.sum(), len(sums)
    ns = len(space_lags)
    reps = []
    for b in range(nb):
        m = (grand - totals[b]) / (M - counts[b])
        if np.any(m <= 0):
            return float("nan"), float("nan")
        reps.append((_fit(space_lags, m[:ns], k)["exponent"], _fit(time_lags, m[ns:], k)["exponent"]))
    reps = np.array(reps)
    var = (nb - 1) / nb * np.sum((reps - reps.mean(axis=0)) ** 2, axis=0)
    return float(np.sqrt(var[0])), float(np.sqrt(var[1]))


def exponents_from_sums(sums, k, space_lags, time_lags, dx, dt):
    mean, se, M = combine(sums)
    ns = len(space_lags)
    sf_space, sf_time = mean[:ns], mean[ns:]
    degenerate = bool(np.all(mean == 0))
    if degenerate or np.any(mean <= 0):
        nan = float("nan")
        space = {"lags": list(space_lags), "values": sf_space.tolist(), "std_errors": se[:ns].tolist()}
        time = {"lags": list(time_lags), "values": sf_time.tolist(), "std_errors": se[ns:].tolist()}
        return ExponentFit(nan, nan, space, time, True, M, k)
    space = _fit(np.asarray(space_lags) * dx, sf_space, k)
    time = _fit(np.asarray(time_lags) * dt, sf_time, k)
    se_s, se_t = _jackknife_exponent_se(sums, k, np.asarray(space_lags) * dx, np.asarray(time_lags) * dt)
    space.update(lags=list(space_lags), values=sf_space.tolist(), std_errors=se[:ns].tolist(), exponent_se=se_s)
    time.update(lags=list(time_lags), values=sf_time.tolist(), std_errors=se[ns:].tolist(), exponent_se=se_t)
    return ExponentFit(space["exponent"], time["exponent"], space, time, False, M, k)


def structure_function_exponents(ens, k=2, space_lags=None, time_lags=None):
    """Hoelder exponents from log-log slopes of k-th order structure functions.

    Lags are in grid cells (space) and grid steps (time) and must be
    multiples of the recorded strides.
    """
    _check_even_k(k)
    sx = int(ens.x_index[1] - ens.x_index[0])
    st = int(ens.t_index[1] - ens.t_index[0])
    if space_lags is None or time_lags is None:
        ds, dtl = default_lags(ens.grid, Recording(st, sx))
        space_lags = ds if space_lags is None else space_lags
        time_lags = dtl if time_lags is None else time_lags
    _validate_lags(space_lags, sx, "space")
    _validate_lags(time_lags, st, "time")
    late = _late_rows(ens)
    sums = [
        structure_summary(ens.values[s], ens.t_index, ens.x_index, late, k, space_lags, time_lags)
        for s in ens.batch_slices()
    ]
    return exponents_from_sums(sums, k, space_lags, time_lags, ens.grid.dx, ens.grid.dt)


# -- modulus of continuity -------------------------------------------------------


def rho(dt, dx, a):
    return np.abs(dx) ** a + np.abs(dt) ** 0.25


def resolvable(delta, a, dt_rec, dx_rec):
    return delta >= 2.0 * max(dx_rec**a, dt_rec**0.25)


def ball_radius(delta, a, dti, dt_rec, dx_rec):
    """Largest spatial offset (in recorded cells) inside the rho-ball at time offset ``dti``; -1 if none."""
    tau = (dti * dt_rec) ** 0.25
    if tau >= delta:
        return -1
    c = int(math.floor((delta - tau) ** (1.0 / a) / dx_rec))
    while c >= 0 and rho(dti * dt_rec, c * dx_rec, a) >= delta:
        c -= 1
    return c


def sup_increments(values, a, deltas, dt_rec, dx_rec):
    """Per-replica sup |u(s, x) - u(t, y)| over recorded pairs with rho < delta.

    For each time offset the spatial part of the ball is an interval, so the
    sup over it comes from running max/min filters. Edge handling by
    replication only adds pairs that are already in the ball. Returns shape
    ``(M, len(deltas))``.
    """
    M, nt, nx = values.shape
    out = np.zeros((M, len(deltas)))
    for i, d in enumerate(deltas):
        best = np.zeros(M)
        for dti in range(nt):
            c = ball_radius(d, a, dti, dt_rec, dx_rec)
            if c < 0:
                break
            c = min(c, nx - 1)
            if dti == 0 and c == 0:
                continue
            later = values[:, dti:, :]
            base = values[:, : nt - dti, :]
            hi = ndimage.maximum_filter1d(later, 2 * c + 1, axis=-1, mode="nearest")
            lo = ndimage.minimum_filter1d(later, 2 * c + 1, axis=-1, mode="nearest")
            inc = np.maximum(hi - base, base - lo).max(axis=(1, 2))
            np.maximum(best, inc, out=best)
        out[:, i] = best
    return out


@dataclass(frozen=True)
class TailEstimate:
    delta: float
    probability: float
    std_error: float
    M: int
    skipped: str = ""


def tail_from_sups(sups, deltas, epsilon, usable, batch_size=MIN_BATCH):
    """Fraction of replicas whose sup increment exceeds ``epsilon``, per delta.

    ``usable[i]`` is True, or a string giving the reason delta ``i`` is skipped.
    """
    M = sups.shape[0]
    out = []
    slices = batch_slices(M, batch_size)
    for i, d in enumerate(deltas):
        if usable[i] is not True:
            out.append(TailEstimate(d, float("nan"), float("nan"), M, str(usable[i] or "unresolvable")))
            continue
        exceed = (sups[:, i] > epsilon).astype(float)
        mean, se, _ = combine([batch_sum(exceed[s]) for s in slices])
        out.append(TailEstimate(d, float(mean), float(se), M))
    return out


def modulus_tail_probability(ens, a, delta_grid, epsilon):
    """P{ sup_{rho((s,x)-(t,y)) < delta} |u(s,x) - u(t,y)| > epsilon } per delta.

    Pairs range over the recorded window points and times. A delta below
    twice the coarsest recorded step in rho is skipped with a reason.
    """
    if not (0 < a < 0.5):
        raise DomainError(f"a must lie in (0, 1/2), got {a}")
    if epsilon <= 0:
        raise DomainError("epsilon must be positive")
    dt_rec = ens.grid.dt * (ens.t_index[1] - ens.t_index[0])
    dx_rec = ens.grid.dx * (ens.x_index[1] - ens.x_index[0])
    deltas = list(delta_grid)
    ok = [resolvable(d, a, dt_rec, dx_rec) for d in deltas]
    good = [d for d, o in zip(deltas, ok) if o]
    sups = np.zeros((ens.M, len(deltas)))
    if good:
        s = sup_increments(ens.values, a, good, dt_rec, dx_rec)
        sups[:, [i for i, o in enumerate(ok) if o]] = s
    usable = [True if o else f"delta={d:g} below resolution 2*max(dx^a, dt^(1/4))" for d, o in zip(deltas, ok)]
    return tail_from_sups(sups, deltas, epsilon, usable, ens.batch_size)


def field_iqr(values):
    """Interquartile range of all recorded values (replicas, times, points)."""
    q1, q3 = np.percentile(values, [25, 75])
    return float(q3 - q1)


# -- finite-dimensional distributions -------------------------------------------------


def wasserstein1(a, b):
    """W1 between two empirical samples by quantile coupling."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    if a.size == b.size:
        return float(np.mean(np.abs(a - b)))
    from scipy.stats import wasserstein_distance

    return float(wasserstein_distance(a, b))


def fdd_from_samples(samplesA, samplesB, paired, n_boot=200, boot_seed=0, params=None):
    """W1 per point with bootstrap se; ``samples*`` have shape ``(M, n_points)``."""
    MA, MB = samplesA.shape[0], samplesB.shape[0]
    if min(MA, MB) < 500:
        raise DomainError(f"fdd_distance needs M >= 500 per ensemble, got {MA}, {MB}")
    rng = np.random.Generator(np.random.Philox(key=boot_seed))
    out = []
    for j in range(samplesA.shape[1]):
        a, b = samplesA[:, j], samplesB[:, j]
        est = wasserstein1(a, b)
        boots = np.empty(n_boot)
        for i in range(n_boot):
            ia = rng.integers(0, MA, MA)
            ib = ia if paired else rng.integers(0, MB, MB)
            boots[i] = wasserstein1(a[ia], b[ib])
        p = dict(params or {}, point=j)
        out.append(EnsembleStats(est, float(boots.std(ddof=1)), min(MA, MB), "W1", p))
    return out


def fdd_distance(ensA, ensB, points, n_boot=200):
    """Wasserstein-1 distance between marginals at grid-index points ``(t_idx, x_idx)``.

    Coupled ensembles (same seed and replica ids) are bootstrapped in pairs.
    """
    def take(ens):
        pos = [(_recorded_position(ens.t_index, t, "time"), _recorded_position(ens.x_index, x, "space")) for t, x in points]
        return np.stack([ens.values[:, r, c] for r, c in pos], axis=1)

    paired = ensA.seed == ensB.seed and np.array_equal(ensA.replicas, ensB.replicas)
    return fdd_from_samples(take(ensA), take(ensB), paired, n_boot, params={"alpha_a": ensA.alpha, "alpha_b": ensB.alpha})


# -- Ito isometry ------------------------------------------------------------------------


@dataclass(frozen=True)
class IsometryCheck:
    lhs: float
    rhs: float
    se: float

    @property
    def z(self):
        return 0.0 if self.se == 0 else (self.lhs - self.rhs) / self.se


def isometry_rhs(grid, alpha, phi):
    """sum_t sum_{x,z} phi(t,x) C_disc(x - z) phi(t,z) dt dx dx, summed lag by lag."""
    phi = np.broadcast_to(np.asarray(phi, dtype=float), (grid.n_t, grid.n_x))
    lags, C = discrete_target_covariance(grid, alpha, np.arange(grid.n_x))
    if validate_alpha(alpha) == 1.0:
        return float(np.sum(phi**2) * grid.dt * grid.dx)
    total = 0.0
    for r in lags:
        total += C[r] * np.sum(phi * np.roll(phi, -r, axis=1))
    return float(total * grid.dt * grid.dx**2)


def ito_isometry_check(grid, alpha, integrand, M, seed, batch_size=MIN_BATCH):
    """Compare the MC second moment of sum(phi * noise) dt dx with its exact value.

    ``integrand`` is a deterministic array broadcastable to ``(n_t, n_x)``.
    """
    a = validate_alpha(alpha)
    phi = np.broadcast_to(np.asarray(integrand, dtype=float), (grid.n_t, grid.n_x))
    rhs = isometry_rhs(grid, a, phi)
    if not np.any(phi):
        return IsometryCheck(0.0, rhs, 0.0)
    vals = np.empty(M)
    for r in range(M):
        noise = color_slab(sample_white_slab(grid, seed, r), a).values
        vals[r] = np.sum(phi * noise) * grid.dt * grid.dx
    mean, se, _ = combine([batch_sum(vals[s] ** 2) for s in batch_slices(M, batch_size)])
    return IsometryCheck(float(mean), rhs, float(se))

import math
import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import wasserstein_distance

from riesz_she import estimators as E
from riesz_she.errors import CouplingError, DomainError
from riesz_she.kernels import gaussian_test_function, riesz_quadratic_form
from riesz_she.noise import GridSpec
from riesz_she.solver import Recording, SigmaSpec, simulate

import oracles

SMALL = GridSpec(T=0.05, n_t=50, L=4.0, n_x=128, N=2.0)
TANH = SigmaSpec("tanh", 1.0)
ADD = SigmaSpec("constant", 1.0)


def ensembles(grid, alphas, sigma, u0, seed, M, rec=None, block=100):
    """One Ensemble per alpha from a coupled simulation."""
    rec = rec or Recording()
    u0 = np.full(grid.n_x, u0) if np.isscalar(u0) else u0
    parts = [simulate(grid, alphas, sigma, u0, seed, range(b, min(b + block, M)), rec) for b in range(0, M, block)]
    vals = np.concatenate(parts)
    ti, xi = rec.time_indices(grid), rec.space_indices(grid)
    return [
        E.Ensemble(np.ascontiguousarray(vals[:, i]), grid, a, sigma, seed, np.arange(M), ti, xi)
        for i, a in enumerate(alphas)
    ]


def center_index(grid):
    return int(np.argmin(np.abs(grid.x)))


class TestBatching:
    def test_slices_cover(self):
        s = E.batch_slices(65, 20)
        assert [(x.start, x.stop) for x in s] == [(0, 20), (20, 40), (40, 65)]

    def test_too_few(self):
        with pytest.raises(DomainError):
            E.batch_slices(39, 20)

    @given(st.integers(2, 12), st.integers(1, 30), st.integers(0, 2**31))
    @settings(max_examples=40, deadline=None)
    def test_equal_batches_oracle(self, nb, size, seed):
        x = np.random.default_rng(seed).standard_normal(nb * size)
        mean, se, M = E.combine([E.batch_sum(x[i * size : (i + 1) * size]) for i in range(nb)])
        bm = x.reshape(nb, size).mean(axis=1)
        assert M == nb * size
        assert mean == pytest.approx(x.mean(), rel=1e-12, abs=1e-12)
        assert se == pytest.approx(bm.std(ddof=1) / math.sqrt(nb), rel=1e-9, abs=1e-12)

    def test_se_nonnegative_and_zero_for_constant(self):
        mean, se, _ = E.combine([E.batch_sum(np.ones(20)) for _ in range(3)])
        assert mean == 1.0 and se == 0.0


class TestMomentField:
    def test_deterministic_is_one(self):
        (ens,) = ensembles(SMALL, [0.5], SigmaSpec("constant", 0.0), 1.0, 1, 40, Recording(10))
        out = E.moment_field(ens, 4, [(SMALL.n_t, center_index(SMALL))])
        assert out[0].estimate == pytest.approx(1.0, abs=1e-14) and out[0].std_error < 1e-14

    def test_refuses_small_M(self):
        (ens,) = ensembles(SMALL, [0.5], TANH, 1.0, 1, 39, Recording(10))
        with pytest.raises(DomainError):
            E.moment_field(ens, 2, [(SMALL.n_t, center_index(SMALL))])

    def test_refuses_outside_window(self):
        (ens,) = ensembles(SMALL, [0.5], TANH, 1.0, 1, 40, Recording(10))
        with pytest.raises(DomainError):
            E.moment_field(ens, 2, [(SMALL.n_t, 0)])

    @pytest.mark.parametrize("k", [1, 3, 8])
    def test_even_k_only(self, k):
        (ens,) = ensembles(SMALL, [0.5], TANH, 1.0, 1, 40, Recording(10))
        with pytest.raises(DomainError):
            E.moment_field(ens, k, [(SMALL.n_t, center_index(SMALL))])

    @pytest.mark.parametrize("alpha", [1.0, 0.5])
    def test_additive_second_moment_oracle(self, alpha):
        (ens,) = ensembles(SMALL, [alpha], ADD, 1.0, 3, 2000, Recording(25))
        (m,) = E.moment_field(ens, 2, [(SMALL.n_t, center_index(SMALL))])
        target = 1.0 + oracles.additive_variance(SMALL, alpha, 1.0, SMALL.n_t)
        assert abs(m.estimate - target) < 3 * m.std_error

    def test_isserlis(self):
        (ens,) = ensembles(SMALL, [0.5], ADD, 0.0, 4, 2000, Recording(25))
        pts = [(SMALL.n_t, center_index(SMALL))]
        per = [
            (E.moment_field(_sub(ens, keep), 2, pts)[0].estimate, E.moment_field(_sub(ens, keep), 4, pts)[0].estimate)
            for keep in _jackknife_masks(ens.M, 20)
        ]
        m2, m4 = E.moment_field(ens, 2, pts)[0].estimate, E.moment_field(ens, 4, pts)[0].estimate
        g = m4 - 3 * m2**2
        reps = np.array([b - 3 * a**2 for a, b in per])
        se = math.sqrt((len(reps) - 1) / len(reps) * np.sum((reps - reps.mean()) ** 2))
        assert abs(g) < 3 * se

    def test_lyapunov(self):
        (ens,) = ensembles(SMALL, [0.7], TANH, 1.0, 5, 400, Recording(10))
        pts = [(n, center_index(SMALL)) for n in (10, 30, 50)]
        m2, m4 = E.moment_field(ens, 2, pts), E.moment_field(ens, 4, pts)
        for a, b in zip(m2, m4):
            lhs, rhs = math.sqrt(a.estimate), b.estimate ** 0.25
            se = a.std_error / (2 * lhs) + b.std_error / (4 * b.estimate**0.75)
            assert lhs <= rhs + 2 * se


def _jackknife_masks(M, nb):
    size = M // nb
    for b in range(nb):
        keep = np.ones(M, bool)
        keep[b * size : (b + 1) * size] = False
        yield keep


def _sub(ens, keep):
    return E.Ensemble(ens.values[keep], ens.grid, ens.alpha, ens.sigma, ens.seed, ens.replicas[keep], ens.t_index, ens.x_index)


@pytest.fixture(scope="module")
def triple():
    return ensembles(SMALL, [0.5, 0.8, 1.0], TANH, 1.0, 6, 200, Recording(5))


class TestNGammaK:
    def test_self_is_zero(self, triple):
        r = E.n_gamma_k_norm(triple[0], triple[0])
        assert r.estimate == 0.0 and r.std_error == 0.0

    def test_direct_oracle(self, triple):
        A, B = triple[0], triple[2]
        d = np.mean(np.abs(A.values - B.values) ** 4, axis=0) ** 0.25
        expect = np.max(np.exp(-2.0 * A.times)[:, None] * d)
        assert E.n_gamma_k_norm(A, B, gamma=2.0, k=4).estimate == pytest.approx(expect, rel=1e-12)

    @given(st.floats(1, 50), st.floats(0, 50))
    @settings(max_examples=20, deadline=None)
    def test_nonincreasing_in_gamma(self, triple, g, dg):
        a = E.n_gamma_k_norm(triple[0], triple[2], gamma=g).estimate
        b = E.n_gamma_k_norm(triple[0], triple[2], gamma=g + dg).estimate
        assert b <= a

    def test_triangle(self, triple):
        A, B, C = triple
        ac, ab, bc = E.n_gamma_k_norm(A, C), E.n_gamma_k_norm(A, B), E.n_gamma_k_norm(B, C)
        se = math.sqrt(ac.std_error**2 + ab.std_error**2 + bc.std_error**2)
        assert ac.estimate <= ab.estimate + bc.estimate + 3 * se

    def test_nonnegative(self, triple):
        assert all(E.n_gamma_k_norm(a, b).estimate >= 0 for a, b in itertools.permutations(triple, 2))

    def test_uncoupled(self):
        a = ensembles(SMALL, [0.5], TANH, 1.0, 1, 40, Recording(10))[0]
        b = ensembles(SMALL, [1.0], TANH, 1.0, 2, 40, Recording(10))[0]
        with pytest.raises(CouplingError):
            E.n_gamma_k_norm(a, b)

    def test_gamma_below_one(self, triple):
        with pytest.raises(DomainError):
            E.n_gamma_k_norm(triple[0], triple[2], gamma=0.5)

    def test_closer_near_one(self):
        a5, a99, one = ensembles(SMALL, [0.5, 0.99, 1.0], TANH, 1.0, 7, 500, Recording(5))
        far, near = E.n_gamma_k_norm(a5, one), E.n_gamma_k_norm(a99, one)
        assert far.estimate - near.estimate > 2 * math.hypot(far.std_error, near.std_error)


class TestStructureFunctions:
    def test_degenerate(self):
        (ens,) = ensembles(SMALL, [0.5], SigmaSpec("constant", 0.0), 1.0, 1, 40)
        fit = E.structure_function_exponents(ens, 2, [1, 2, 5, 10], [1, 2, 5, 10])
        assert fit.degenerate and math.isnan(fit.a_space)

    @pytest.mark.parametrize(
        "space,time",
        [([1, 2, 4], [1, 2, 5, 10]), ([1, 2, 5, 9], [1, 2, 5, 10]), ([1, 2, 5, 10], [0, 2, 5, 10])],
    )
    def test_lag_validation(self, space, time):
        (ens,) = ensembles(SMALL, [0.5], TANH, 1.0, 1, 40)
        with pytest.raises(DomainError):
            E.structure_function_exponents(ens, 2, space, time)

    def test_stride_validation(self):
        (ens,) = ensembles(SMALL, [0.5], TANH, 1.0, 1, 40, Recording(2, 2))
        with pytest.raises(DomainError):
            E.structure_function_exponents(ens, 2, [2, 4, 10, 21], [2, 4, 10, 20])

    def test_brownian_sheet_oracle(self):
        # u(t, x) = B1(x) + B2(t): E|increment|^2 = lag exactly, exponent 1/2 in both.
        rng = np.random.default_rng(0)
        M, nt, nx = 200, 401, 400
        g = GridSpec(T=1.0, n_t=nt - 1, L=8.0, n_x=1024, N=3.0)
        bx = np.cumsum(rng.standard_normal((M, 1, nx)) * math.sqrt(g.dx), axis=2)
        bt = np.cumsum(rng.standard_normal((M, nt, 1)) * math.sqrt(g.dt), axis=1)
        ens = E.Ensemble(bx + bt, g, 0.5, TANH, 0, np.arange(M), np.arange(nt), np.flatnonzero(g.window)[:nx])
        lags = [2, 4, 8, 16, 32]
        fit = E.structure_function_exponents(ens, 2, lags, [2, 4, 8, 16, 32])
        assert fit.a_space == pytest.approx(0.5, abs=0.02)
        assert fit.a_time == pytest.approx(0.5, abs=0.02)
        np.testing.assert_allclose(fit.space["values"], np.array(lags) * g.dx, rtol=0.05)
        doubled = E.structure_function_exponents(ens, 2, [2 * l for l in lags], [2, 4, 8, 16, 32])
        assert doubled.a_space == pytest.approx(fit.a_space, abs=0.03)
        assert doubled.space["intercept"] != fit.space["intercept"]

    @pytest.mark.parametrize("alpha", [1.0, 0.5])
    def test_additive_oracle(self, alpha):
        g = GridSpec(T=0.1, n_t=100, L=6.0, n_x=256, N=2.5)
        (ens,) = ensembles(g, [alpha], ADD, 0.0, 8, 400)
        sl, tl = [1, 2, 4, 10], [1, 2, 4, 10]
        fit = E.structure_function_exponents(ens, 2, sl, tl)
        n_late = np.arange(g.n_t // 2, g.n_t + 1)
        expect_s = [np.mean([oracles.additive_space_sf(g, alpha, 1.0, n, r) for n in n_late]) for r in sl]
        expect_t = [np.mean([oracles.additive_time_sf(g, alpha, 1.0, n, l) for n in n_late[n_late + l <= g.n_t]]) for l in tl]
        assert np.all(np.abs(np.array(fit.space["values"]) - expect_s) < 3 * np.array(fit.space["std_errors"]))
        assert np.all(np.abs(np.array(fit.time["values"]) - expect_t) < 3 * np.array(fit.time["std_errors"]))
        assert fit.space["exponent_se"] > 0 and fit.time["r2"] > 0.9


def brute_sup(values, a, delta, dt, dx):
    M, nt, nx = values.shape
    best = np.zeros(M)
    for s, t in itertools.product(range(nt), repeat=2):
        for x, y in itertools.product(range(nx), repeat=2):
            if E.rho((s - t) * dt, (x - y) * dx, a) < delta:
                best = np.maximum(best, np.abs(values[:, s, x] - values[:, t, y]))
    return best


@pytest.fixture(scope="module")
def rough():
    g = GridSpec(T=0.05, n_t=50, L=4.0, n_x=128, N=1.0)
    return ensembles(g, [0.7], TANH, 1.0, 9, 60, Recording(2, 2))[0]


class TestModulus:
    @given(st.floats(0.05, 0.49), st.floats(0.3, 3.0), st.integers(0, 1000))
    @settings(max_examples=25, deadline=None)
    def test_matches_brute_force(self, a, delta, seed):
        v = np.random.default_rng(seed).standard_normal((3, 5, 7))
        dt, dx = 0.01, 0.05
        got = E.sup_increments(v, a, [delta], dt, dx)[:, 0]
        np.testing.assert_array_equal(got, brute_sup(v, a, delta, dt, dx))

    def test_huge_epsilon(self, rough):
        out = E.modulus_tail_probability(rough, 0.4, [0.9, 1.0], 1e6)
        assert all(o.probability == 0.0 for o in out)

    def test_tiny_epsilon(self, rough):
        out = E.modulus_tail_probability(rough, 0.4, [1.5], 1e-9)
        assert out[0].probability == 1.0

    def test_monotone(self, rough):
        deltas = [0.9, 1.0, 1.2, 1.5, 2.0]
        eps = 0.5 * E.field_iqr(rough.values)
        p = [o.probability for o in E.modulus_tail_probability(rough, 0.4, deltas, eps)]
        assert all(x <= y for x, y in zip(p, p[1:]))
        q = [o.probability for o in E.modulus_tail_probability(rough, 0.4, deltas, 2 * eps)]
        assert all(y <= x for x, y in zip(p, q))

    def test_unresolvable_skipped(self, rough):
        out = E.modulus_tail_probability(rough, 0.4, [0.01, 1.0], 0.1)
        assert math.isnan(out[0].probability) and "resolution" in out[0].skipped
        assert not math.isnan(out[1].probability)

    @pytest.mark.parametrize("a", [0.0, 0.5, 0.7])
    def test_a_domain(self, rough, a):
        with pytest.raises(DomainError):
            E.modulus_tail_probability(rough, a, [1.0], 0.1)


class TestFdd:
    @given(st.integers(1, 60), st.integers(1, 60), st.integers(0, 1000))
    @settings(max_examples=30, deadline=None)
    def test_wasserstein_oracle(self, n, m, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.standard_normal(n), rng.exponential(size=m)
        assert E.wasserstein1(a, b) == pytest.approx(wasserstein_distance(a, b), rel=1e-9, abs=1e-12)

    def test_same_samples_zero(self):
        x = np.random.default_rng(0).standard_normal((600, 2))
        assert all(r.estimate == 0.0 for r in E.fdd_from_samples(x, x, paired=True, n_boot=20))

    def test_needs_500(self):
        x = np.zeros((499, 1))
        with pytest.raises(DomainError):
            E.fdd_from_samples(x, x, paired=False)

    def test_same_law_near_zero(self):
        g = GridSpec(T=0.02, n_t=20, L=4.0, n_x=128, N=1.0)
        rec = Recording(20, 8, t_start=20)
        a = ensembles(g, [1.0], TANH, 1.0, 10, 600, rec)[0]
        b = ensembles(g, [1.0], TANH, 1.0, 11, 600, rec)[0]
        (r,) = E.fdd_distance(a, b, [(g.n_t, center_index(g))], n_boot=100)
        assert r.estimate < 3 * r.std_error

    def test_coupled_closer_near_one(self):
        rec = Recording(50, 8, t_start=50)
        a5, a99, one = ensembles(SMALL, [0.5, 0.99, 1.0], TANH, 1.0, 12, 600, rec)
        pt = [(SMALL.n_t, center_index(SMALL))]
        (far,), (near,) = E.fdd_distance(a5, one, pt, 100), E.fdd_distance(a99, one, pt, 100)
        assert far.estimate - near.estimate > 2 * math.hypot(far.std_error, near.std_error)


ISO = GridSpec(T=0.01, n_t=4, L=4.0, n_x=256, N=2.0)


def _phi(kind, g):
    x, t = g.x[None, :], g.t[:-1, None]
    if kind == "box":
        return np.broadcast_to(((x >= -0.5) & (x < 0.5)) * ((t >= g.dt) & (t < 3 * g.dt)), (g.n_t, g.n_x)).astype(float)
    if kind == "bump":
        return np.broadcast_to(np.exp(-(x**2) / (2 * 0.3**2)), (g.n_t, g.n_x))
    return np.cos(2 * np.pi * x / 2.0) * np.exp(-(x**2) / 2) * (1 + t / g.T)


class TestIsometry:
    def test_zero(self):
        r = E.ito_isometry_check(ISO, 0.5, 0.0, 40, 0)
        assert (r.lhs, r.rhs) == (0.0, 0.0)

    def test_white_box_rhs(self):
        phi = _phi("box", ISO)
        assert E.isometry_rhs(ISO, 1.0, phi) == pytest.approx(np.count_nonzero(phi) * ISO.dt * ISO.dx, rel=1e-14)

    @pytest.mark.parametrize("alpha", [0.3, 0.8])
    def test_rhs_matrix_oracle(self, alpha):
        g = GridSpec(T=0.01, n_t=2, L=2.0, n_x=32, N=1.0)
        phi = np.random.default_rng(0).standard_normal((g.n_t, g.n_x))
        _, c = E.discrete_target_covariance(g, alpha, np.arange(g.n_x))
        C = c[(np.arange(g.n_x)[:, None] - np.arange(g.n_x)[None, :]) % g.n_x]
        expect = sum(p @ C @ p for p in phi) * g.dt * g.dx**2
        assert E.isometry_rhs(g, alpha, phi) == pytest.approx(expect, rel=1e-11)

    @pytest.mark.parametrize("alpha", [0.5, 0.9, 1.0])
    @pytest.mark.parametrize("kind", ["box", "bump", "wave"])
    def test_case_grid(self, alpha, kind):
        r = E.ito_isometry_check(ISO, alpha, _phi(kind, ISO), 1000, 13)
        assert abs(r.z) <= 3

    def test_bump_against_continuum(self):
        g = GridSpec(T=0.01, n_t=1, L=50.0, n_x=16384, N=10.0)
        w = 0.05
        phi = np.exp(-(g.x**2) / (2 * w * w))
        f, fh = gaussian_test_function(w)
        _, cont = riesz_quadratic_form(f, 0.5, fh, width=w)
        assert E.isometry_rhs(g, 0.5, phi) == pytest.approx(g.T * cont, rel=0.05)

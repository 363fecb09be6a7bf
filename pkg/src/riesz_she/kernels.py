"""Closed-form kernels and constants, with quadrature oracles.

Every closed form here has an independent numerical counterpart so the
pair can be compared (see ``verification_table``). Quadratures of
``|x|^-g`` integrands are split at a length scale and the singular piece
is mapped through ``u = x^(1-g)``, which turns it into a smooth integral.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from .errors import DomainError, PrecisionError, SingularityError
from .fourier import heat_symbol

_QUAD_OPTS = dict(epsabs=0.0, epsrel=1e-13, limit=500)


def validate_alpha(alpha, allow_one=True):
    """Return ``alpha`` as a float after checking ``0 < alpha <= 1``.

    ``alpha == 1`` is the white-noise tag; pass ``allow_one=False`` where
    only the colored range (0, 1) makes sense.
    """
    try:
        a = float(alpha)
    except (TypeError, ValueError) as exc:
        raise DomainError(f"alpha must be a real number, got {alpha!r}") from exc
    upper_ok = a <= 1.0 if allow_one else a < 1.0
    if not (0.0 < a and upper_ok and math.isfinite(a)):
        rng = "(0, 1]" if allow_one else "(0, 1)"
        raise DomainError(f"alpha={alpha!r} outside {rng}")
    return a


def _check_positive(name, value):
    if not (value > 0 and math.isfinite(value)):
        raise DomainError(f"{name} must be positive and finite, got {value!r}")


def riesz_constant(alpha):
    """c_alpha = 2 sin(alpha pi / 2) Gamma(1 - alpha) / (2 pi)^(1 - alpha)."""
    a = validate_alpha(alpha, allow_one=False)
    return 2.0 * math.sin(a * math.pi / 2.0) * special.gamma(1.0 - a) / (2.0 * math.pi) ** (1.0 - a)


@dataclass(frozen=True)
class KernelConstants:
    alpha: float
    c_alpha: float
    c_one_minus_alpha: float


def kernel_constants(alpha):
    a = validate_alpha(alpha, allow_one=False)
    return KernelConstants(a, riesz_constant(a), riesz_constant(1.0 - a))


def riesz_f(alpha, x):
    """Spatial covariance f_alpha(x) = c_{1-alpha} |x|^-alpha.

    ``x`` may be an array; any zero entry raises ``SingularityError``.
    """
    a = validate_alpha(alpha, allow_one=False)
    x = np.asarray(x, dtype=float)
    if np.any(x == 0):
        raise SingularityError("f_alpha(0) = +inf")
    out = riesz_constant(1.0 - a) * np.abs(x) ** (-a)
    return float(out) if out.ndim == 0 else out


def heat_kernel(kappa, t, x):
    """Gaussian density with variance ``kappa * t``."""
    _check_positive("kappa", kappa)
    _check_positive("t", t)
    x = np.asarray(x, dtype=float)
    var = kappa * t
    out = np.exp(-(x**2) / (2.0 * var)) / math.sqrt(2.0 * math.pi * var)
    return float(out) if out.ndim == 0 else out


def heat_kernel_ft(kappa, t, xi):
    _check_positive("kappa", kappa)
    _check_positive("t", t)
    out = heat_symbol(kappa, t, xi)
    return float(out) if out.ndim == 0 else out


def _singular_quad(g, gamma, scale):
    """int_0^inf x^-gamma g(x) dx for smooth, rapidly decaying ``g``."""
    p = 1.0 - gamma
    head, _ = integrate.quad(lambda u: g(u ** (1.0 / p)) / p, 0.0, scale**p, **_QUAD_OPTS)
    tail, _ = integrate.quad(lambda x: x ** (-gamma) * g(x), scale, np.inf, **_QUAD_OPTS)
    return head + tail


def _check_gamma_s(gamma, s):
    if not (0.0 <= gamma < 1.0):
        raise DomainError(f"gamma={gamma!r} outside [0, 1)")
    _check_positive("s", s)


def negative_moment_integral(gamma, s):
    """int |x|^-gamma exp(-4 pi^2 s x^2) dx in closed form."""
    _check_gamma_s(gamma, s)
    return (1.0 / (4.0 * math.pi**2 * s)) ** ((1.0 - gamma) / 2.0) * special.gamma((1.0 - gamma) / 2.0)


def negative_moment_quadrature(gamma, s):
    _check_gamma_s(gamma, s)
    a = 4.0 * math.pi**2 * s
    return 2.0 * _singular_quad(lambda x: math.exp(-a * x * x), gamma, 1.0 / math.sqrt(a))


def f_conv_heat_zero(alpha, s, kappa=1.0):
    """(f_alpha * p_s)(0) = c_{1-alpha} (2 kappa s)^(-alpha/2) Gamma((1-alpha)/2) / sqrt(pi).

    For kappa = 1 this is the Riesz-Gaussian product formula; general kappa
    enters only through the variance, giving the ``(kappa s)^(-alpha/2)``
    scaling.
    """
    a = validate_alpha(alpha, allow_one=False)
    _check_positive("s", s)
    _check_positive("kappa", kappa)
    return f_conv_heat_zero_prefactor(a, kappa) * s ** (-a / 2.0)


def f_conv_heat_zero_prefactor(alpha, kappa=1.0):
    """The s-independent factor: ``f_conv_heat_zero(alpha, s) * s**(alpha/2)``."""
    a = validate_alpha(alpha, allow_one=False)
    return (
        riesz_constant(1.0 - a)
        * (2.0 * kappa) ** (-a / 2.0)
        * special.gamma((1.0 - a) / 2.0)
        / math.sqrt(math.pi)
    )


def f_conv_heat_zero_quadrature(alpha, s, kappa=1.0):
    a = validate_alpha(alpha, allow_one=False)
    _check_positive("s", s)
    _check_positive("kappa", kappa)
    var = kappa * s
    norm = 1.0 / math.sqrt(2.0 * math.pi * var)
    integral = 2.0 * _singular_quad(lambda x: norm * math.exp(-x * x / (2.0 * var)), a, math.sqrt(var))
    return riesz_constant(1.0 - a) * integral


def spatial_l1_heat_diff(t, x, kappa=1.0):
    """int |p_t(y - x) - p_t(y)| dy by quadrature.

    The two densities cross at y = x/2, so the integral is twice the
    one-sided integral of the (signed) difference.
    """
    _check_positive("t", t)
    _check_positive("kappa", kappa)
    x = abs(float(x))
    if x == 0.0:
        return 0.0
    sd = math.sqrt(kappa * t)
    var = sd * sd
    c = 1.0 / math.sqrt(2.0 * math.pi * var)

    def diff(y):
        return c * (math.exp(-y * y / (2.0 * var)) - math.exp(-(y - x) ** 2 / (2.0 * var)))

    lo = min(-40.0 * sd, x / 2.0 - 40.0 * sd)
    opts = dict(_QUAD_OPTS, epsabs=1e-15)
    val, _ = integrate.quad(diff, lo, x / 2.0, points=[0.0] if lo < 0.0 < x / 2.0 else None, **opts)
    return min(2.0 * val, 2.0)


def spatial_l1_closed_form(t, x, kappa=1.0):
    """L1 distance of two Gaussians shifted by ``x``: 2 (2 Phi(|x| / (2 sqrt(kappa t))) - 1)."""
    _check_positive("t", t)
    _check_positive("kappa", kappa)
    return 2.0 * math.erf(abs(x) / (2.0 * math.sqrt(2.0 * kappa * t)))


def spatial_l1_bound_ratio(ts, xs, kappa=1.0):
    """Largest ``spatial_l1_heat_diff / (|x| / sqrt(kappa t) ^ 1)`` over a sweep."""
    worst = 0.0
    for t in ts:
        for x in xs:
            if x == 0:
                continue
            bound = min(abs(x) / math.sqrt(kappa * t), 1.0)
            worst = max(worst, spatial_l1_heat_diff(t, x, kappa) / bound)
    return worst


def _temporal_crossing(t, eps, kappa):
    return math.sqrt(kappa * t * (t + eps) * math.log1p(eps / t) / eps)


def temporal_l1_heat_diff(t, eps, kappa=1.0):
    """int |p_{t+eps}(y) - p_t(y)| dy by quadrature.

    The densities cross at +-y*, with p_t above inside; the integral is
    four times the integral of p_t - p_{t+eps} over [0, y*].
    """
    _check_positive("t", t)
    _check_positive("kappa", kappa)
    if eps < 0:
        raise DomainError(f"eps must be nonnegative, got {eps!r}")
    if eps == 0:
        return 0.0
    ystar = _temporal_crossing(t, eps, kappa)
    v0, v1 = kappa * t, kappa * (t + eps)
    c0, c1 = 1.0 / math.sqrt(2.0 * math.pi * v0), 1.0 / math.sqrt(2.0 * math.pi * v1)

    def diff(y):
        return c0 * math.exp(-y * y / (2.0 * v0)) - c1 * math.exp(-y * y / (2.0 * v1))

    val, _ = integrate.quad(diff, 0.0, ystar, **_QUAD_OPTS)
    return min(4.0 * val, 2.0)


def temporal_l1_closed_form(t, eps, kappa=1.0):
    _check_positive("t", t)
    if eps == 0:
        return 0.0
    ystar = _temporal_crossing(t, eps, kappa)
    return 2.0 * (math.erf(ystar / math.sqrt(2.0 * kappa * t)) - math.erf(ystar / math.sqrt(2.0 * kappa * (t + eps))))


def temporal_l1_bound(t, eps):
    """min(log(t + eps) - log(t), 2)."""
    return min(math.log1p(eps / t), 2.0)


def riesz_quadratic_form(phi, alpha, phi_hat=None, center=0.0, width=1.0, decay_tol=1e-14):
    """Both sides of the Fourier identity for the Riesz quadratic form.

    Returns ``(lhs, rhs)`` where

        lhs = int int phi(x) f_alpha(x - y) phi(y) dx dy
        rhs = int |xi|^-(1-alpha) |F phi(xi)|^2 dxi.

    ``phi`` is a real scalar callable; ``center`` and ``width`` locate its
    bulk and set the quadrature windows. ``phi_hat`` (if given) returns
    ``|F phi|``; otherwise it is computed by quadrature. A ``phi`` that has
    not decayed to ``decay_tol`` of its peak 40 widths from the center
    raises ``PrecisionError``.
    """
    a = validate_alpha(alpha, allow_one=False)
    _check_positive("width", width)
    R = 40.0 * width
    peak = max(abs(phi(center)), abs(phi(center + width)), abs(phi(center - width)))
    edge = max(abs(phi(center - R)), abs(phi(center + R)))
    if peak == 0.0 or edge > decay_tol * peak:
        raise PrecisionError(f"phi does not decay: |phi| at +-{R:g} is {edge:g} vs peak {peak:g}")
    lo, hi = center - R, center + R

    def autocorr(r):
        val, _ = integrate.quad(lambda y: phi(y + r) * phi(y), lo, hi, points=[center, center - r], limit=500, epsabs=0.0, epsrel=1e-13)
        return val

    c = riesz_constant(1.0 - a)
    p = 1.0 - a
    head, _ = integrate.quad(lambda v: autocorr(v ** (1.0 / p)) / p, 0.0, width**p, limit=200, epsabs=0.0, epsrel=1e-11)
    tail, _ = integrate.quad(lambda r: r ** (-a) * autocorr(r), width, 2.0 * R, limit=200, epsabs=1e-14 * head, epsrel=1e-11)
    lhs = 2.0 * c * (head + tail)

    if phi_hat is None:
        # |F phi| is shift invariant, so transform phi(center + y); the
        # absolute floor covers a vanishing sine part.
        mass, _ = integrate.quad(lambda y: abs(phi(center + y)), -R, R, limit=500)
        opts = dict(limit=500, epsabs=1e-13 * mass, epsrel=1e-12)

        def phi_hat(xi):
            w = 2.0 * math.pi * xi
            if w == 0.0:
                return abs(integrate.quad(lambda y: phi(center + y), -R, R, **opts)[0])
            re, _ = integrate.quad(lambda y: phi(center + y), -R, R, weight="cos", wvar=w, **opts)
            im, _ = integrate.quad(lambda y: phi(center + y), -R, R, weight="sin", wvar=w, **opts)
            return math.hypot(re, im)

    # |xi|^(alpha-1) on [0, 1/width] via xi = v^(1/alpha)
    xi0 = 1.0 / width
    head, _ = integrate.quad(lambda v: phi_hat(v ** (1.0 / a)) ** 2 / a, 0.0, xi0**a, limit=200, epsabs=0.0, epsrel=1e-11)
    xi_max = xi0
    floor = 1e-17 * phi_hat(0.0)
    while xi_max < 1e3 * xi0 and phi_hat(xi_max) > floor:
        xi_max *= 1.5
    tail, _ = integrate.quad(lambda xi: xi ** (a - 1.0) * phi_hat(xi) ** 2, xi0, xi_max, limit=200, epsabs=1e-14 * head, epsrel=1e-11)
    rhs = 2.0 * (head + tail)
    return lhs, rhs


def gaussian_test_function(width, shift=0.0, scale=1.0):
    """``(phi, |F phi|)`` for phi(x) = scale * exp(-(x - shift)^2 / (2 width^2))."""

    def phi(x):
        return scale * math.exp(-((x - shift) ** 2) / (2.0 * width * width))

    def phi_hat(xi):
        return abs(scale) * width * math.sqrt(2.0 * math.pi) * math.exp(-2.0 * math.pi**2 * width**2 * xi * xi)

    return phi, phi_hat


def verification_table(tol_overrides=None):
    """Rows ``(quantity, params, closed_form, oracle, rel_err, tol)``.

    Each row pairs a closed form with an independent evaluation: mpmath
    for constants, adaptive quadrature for integrals.
    """
    import mpmath

    tol = {
        "riesz_constant": 1e-12,
        "riesz_f": 1e-12,
        "heat_kernel_mass": 1e-10,
        "negative_moment_integral": 1e-8,
        "f_conv_heat_zero": 1e-6,
        "f_conv_heat_zero_scaling": 1e-10,
        "spatial_l1_heat_diff": 1e-8,
        "temporal_l1_heat_diff": 1e-8,
        "riesz_quadratic_form": 1e-6,
    }
    tol.update(tol_overrides or {})
    mpmath.mp.dps = 40
    rows = []

    def add(name, params, closed, oracle, key=None):
        err = abs(closed - oracle) / abs(oracle) if oracle != 0 else abs(closed - oracle)
        rows.append((name, params, closed, oracle, err, tol[key or name]))

    for a in (0.01, 0.1, 0.25, 0.5, 0.75, 0.9, 0.99):
        ma = mpmath.mpf(a)
        exact = 2 * mpmath.sin(ma * mpmath.pi / 2) * mpmath.gamma(1 - ma) / (2 * mpmath.pi) ** (1 - ma)
        add("riesz_constant", {"alpha": a}, riesz_constant(a), float(exact))
    for a, x in ((0.5, 1.0), (0.75, 2.0), (0.3, -0.7)):
        ma = mpmath.mpf(1) - mpmath.mpf(a)
        c = 2 * mpmath.sin(ma * mpmath.pi / 2) * mpmath.gamma(1 - ma) / (2 * mpmath.pi) ** (1 - ma)
        add("riesz_f", {"alpha": a, "x": x}, riesz_f(a, x), float(c * mpmath.mpf(abs(x)) ** (-a)))
    for kappa, t in ((1.0, 1.0), (0.5, 0.2)):
        sd = math.sqrt(kappa * t)
        mass, _ = integrate.quad(lambda x: heat_kernel(kappa, t, x), -40 * sd, 40 * sd, points=[0.0], **_QUAD_OPTS)
        add("heat_kernel_mass", {"kappa": kappa, "t": t}, 1.0, mass)
    for g in np.linspace(0.0, 0.9, 5):
        for s in np.geomspace(0.01, 10.0, 5):
            g, s = float(g), float(s)
            add("negative_moment_integral", {"gamma": g, "s": s}, negative_moment_integral(g, s), negative_moment_quadrature(g, s))
    for a in (0.25, 0.5, 0.75, 0.9):
        for s in (0.1, 1.0):
            add("f_conv_heat_zero", {"alpha": a, "s": s, "kappa": 1.0}, f_conv_heat_zero(a, s), f_conv_heat_zero_quadrature(a, s))
        add("f_conv_heat_zero_scaling", {"alpha": a, "ratio": "s=4/s=1"}, f_conv_heat_zero(a, 4.0) / f_conv_heat_zero(a, 1.0), 4.0 ** (-a / 2.0))
    for t, x in ((1.0, 1.0), (0.3, 0.05), (2.0, 5.0)):
        add("spatial_l1_heat_diff", {"t": t, "x": x, "kappa": 1.0}, spatial_l1_closed_form(t, x), spatial_l1_heat_diff(t, x))
    for t, e in ((0.5, 0.5), (0.1, 0.01), (1.0, 10.0)):
        add("temporal_l1_heat_diff", {"t": t, "eps": e, "kappa": 1.0}, temporal_l1_closed_form(t, e), temporal_l1_heat_diff(t, e))
    for a in (0.3, 0.5, 0.8):
        for w in (0.5, 1.0, 2.0):
            phi, _ = gaussian_test_function(w)
            lhs, rhs = riesz_quadratic_form(phi, a, width=w)
            add("riesz_quadratic_form", {"alpha": a, "width": w}, lhs, rhs)
    return rows

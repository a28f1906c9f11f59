"""Rician distribution kernels: log-density, sampling and ML fitting.

Everything is evaluated in the log domain.  The density is written as

    ln f(x | nu, phi) = ln x - 2 ln phi - (x - nu)^2 / (2 phi^2) + ln I0e(x nu / phi^2)

where ``I0e(z) = exp(-z) I0(z)``.  This is algebraically the textbook form
but avoids cancelling two huge exponents when ``x nu / phi^2`` is large.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from numpy.polynomial import chebyshev
from scipy import special

from .errors import DomainError, InsufficientDataError, InvalidArgumentError

# Power series below this argument, asymptotic expansion at or above it.
BESSEL_SERIES_LIMIT = 15.0

MIN_FIT_SAMPLES = 8

# Twice the log-likelihood gain a nonzero signal amplitude must buy before it is
# preferred over the Rayleigh (nu = 0) fit: the 95% point of chi-square(1).
RAYLEIGH_LR_THRESHOLD = 3.841458820694124

_LOG_2PI = math.log(2.0 * math.pi)

# Above this SNR the moment-method correction factor is taken as exactly 1.
KOAY_THETA_MAX = 1e3


@dataclass(frozen=True)
class RicianParams:
    """Signal amplitude ``nu`` and scale ``phi`` of a Rician distribution."""

    nu: float
    phi: float

    def __post_init__(self):
        if not (math.isfinite(self.nu) and self.nu >= 0.0):
            raise InvalidArgumentError(f"nu must be finite and >= 0, got {self.nu!r}")
        if not (math.isfinite(self.phi) and self.phi > 0.0):
            raise InvalidArgumentError(f"phi must be finite and > 0, got {self.phi!r}")


@njit(cache=True, nogil=True)
def log_i0e_scalar(z):
    """ln(exp(-z) I0(z)) for z >= 0 (no argument checking)."""
    if z < BESSEL_SERIES_LIMIT:
        q = 0.25 * z * z
        term = 1.0
        total = 1.0
        k = 1.0
        while True:
            term *= q / (k * k)
            total += term
            if term <= 1e-17 * total:
                break
            k += 1.0
        return math.log(total) - z
    inv8z = 0.125 / z
    term = 1.0
    total = 1.0
    for k in range(1, 60):
        nxt = term * (2 * k - 1) * (2 * k - 1) * inv8z / k
        # divergent tail: stop at the smallest term
        if nxt >= term or nxt <= 1e-17 * total:
            break
        term = nxt
        total += term
    return math.log(total) - 0.5 * (_LOG_2PI + math.log(z))


@njit(cache=True, nogil=True)
def _log_i0e_array(z, out):
    for i in range(z.size):
        out[i] = log_i0e_scalar(z[i])


# --------------------------------------------------------------------------
# Fast evaluation for the hot loops: unit-interval polynomial pieces fitted
# to the series/asymptotic reference below FAST_LIMIT, then a fixed-length
# asymptotic sum.  Agrees with log_i0e_scalar to ~1e-13.
# --------------------------------------------------------------------------

FAST_LIMIT = 64
_FAST_DEGREE = 12
_ASYMPTOTIC_TERMS = 12


def _build_fast_table():
    table = np.empty((FAST_LIMIT, _FAST_DEGREE + 1))
    for k in range(FAST_LIMIT):
        def piece(t, k=k):
            out = np.empty(t.size)
            _log_i0e_array(k + 0.5 + 0.5 * np.asarray(t, dtype=np.float64), out)
            return out
        coef = chebyshev.cheb2poly(chebyshev.chebinterpolate(piece, _FAST_DEGREE))
        table[k] = coef[::-1]
    return table


def _build_asymptotic_coefficients():
    coef = np.empty(_ASYMPTOTIC_TERMS)
    coef[0] = 1.0
    for k in range(1, _ASYMPTOTIC_TERMS):
        coef[k] = coef[k - 1] * (2 * k - 1) ** 2 / (8.0 * k)
    return coef[::-1].copy()


@njit(cache=True, nogil=True)
def _log_i0e_fast(z, table, asym):
    if z < FAST_LIMIT:
        k = int(z)
        t = 2.0 * (z - k) - 1.0
        row = table[k]
        acc = row[0]
        for i in range(1, row.size):
            acc = acc * t + row[i]
        return acc
    w = 1.0 / z
    acc = asym[0]
    for i in range(1, asym.size):
        acc = acc * w + asym[i]
    return math.log(acc) - 0.5 * (_LOG_2PI + math.log(z))


FAST_TABLE = _build_fast_table()
ASYMPTOTIC_COEF = _build_asymptotic_coefficients()


@njit(cache=True, nogil=True)
def log_i0e_fast(z):
    return _log_i0e_fast(z, FAST_TABLE, ASYMPTOTIC_COEF)


@njit(cache=True, nogil=True)
def rician_logpdf_scalar(x, nu, phi):
    """Log-density for x > 0, nu >= 0, phi > 0 (no argument checking)."""
    inv_phi2 = 1.0 / (phi * phi)
    d = x - nu
    return (math.log(x) - 2.0 * math.log(phi) - 0.5 * d * d * inv_phi2
            + log_i0e_scalar(x * nu * inv_phi2))


@njit(cache=True, nogil=True)
def _rician_logpdf_array(x, nu, phi, out):
    for i in range(x.size):
        out[i] = rician_logpdf_scalar(x[i], nu, phi)


@njit(cache=True, nogil=True)
def _loglik(xs, nu, phi):
    inv_phi2 = 1.0 / (phi * phi)
    total = 0.0
    for i in range(xs.size):
        x = xs[i]
        d = x - nu
        total += math.log(x) - 0.5 * d * d * inv_phi2 + log_i0e_fast(x * nu * inv_phi2)
    return total - 2.0 * xs.size * math.log(phi)


def _as_float_array(z):
    return np.array(z, dtype=np.float64, order="C", copy=True)


def log_i0e(z):
    """Return ``ln(exp(-z) I0(z))``, the log of the exponentially scaled Bessel I0."""
    arr = _as_float_array(z)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise InvalidArgumentError("log_i0e requires finite, non-negative arguments")
    out = np.empty(arr.size)
    _log_i0e_array(arr.ravel(), out)
    out = out.reshape(arr.shape)
    return float(out) if out.ndim == 0 else out


def log_bessel_i0(z):
    """Natural log of the modified Bessel function of the first kind, order 0.

    Parameters
    ----------
    z : float or array_like
        Non-negative, finite argument(s).

    Returns
    -------
    float or ndarray
        ``ln I0(z)``.  Safe for arguments far beyond the range where ``I0``
        itself overflows a double.
    """
    arr = _as_float_array(z)
    return log_i0e(arr) + (float(arr) if arr.ndim == 0 else arr)


def rician_log_pdf(x, params: RicianParams):
    """Log-density of the Rician distribution at ``x`` (scalar or array, all > 0)."""
    arr = _as_float_array(x)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise DomainError("the Rician density is defined for x > 0 only")
    out = np.empty(arr.size)
    _rician_logpdf_array(arr.ravel(), float(params.nu), float(params.phi), out)
    out = out.reshape(arr.shape)
    return float(out) if out.ndim == 0 else out


def sample_rician(params: RicianParams, rng: np.random.Generator, size=None):
    """Draw ``|nu + a + i b|`` with ``a, b ~ N(0, phi^2)`` independent.

    Returns a float when ``size`` is None, otherwise an array of that shape.
    """
    a = rng.standard_normal(size)
    b = rng.standard_normal(size)
    re = params.nu + params.phi * a
    im = params.phi * b
    out = np.hypot(re, im)
    return float(out) if size is None else out


def log_likelihood(samples, params: RicianParams) -> float:
    xs = _as_float_array(samples).ravel()
    return float(_loglik(xs, float(params.nu), float(params.phi)))


# --------------------------------------------------------------------------
# Maximum-likelihood fitting
# --------------------------------------------------------------------------

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


@njit(cache=True, nogil=True)
def _objective(xs, m2, mode, p, fixed):
    # mode 0: p = ln(phi) on the stationarity curve nu^2 = m2 - 2 phi^2
    # mode 1: p = nu, phi = fixed
    # mode 2: p = ln(phi), nu = fixed
    if mode == 0:
        phi = math.exp(p)
        nu2 = m2 - 2.0 * phi * phi
        nu = math.sqrt(nu2) if nu2 > 0.0 else 0.0
        return _loglik(xs, nu, phi)
    if mode == 1:
        return _loglik(xs, p, fixed)
    return _loglik(xs, fixed, math.exp(p))


@njit(cache=True, nogil=True)
def _golden_max(xs, m2, mode, fixed, lo, hi, tol):
    a = lo
    b = hi
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc = _objective(xs, m2, mode, c, fixed)
    fd = _objective(xs, m2, mode, d, fixed)
    while b - a > tol:
        if fc >= fd:
            b = d
            d = c
            fd = fc
            c = b - _INVPHI * (b - a)
            fc = _objective(xs, m2, mode, c, fixed)
        else:
            a = c
            c = d
            fc = fd
            d = a + _INVPHI * (b - a)
            fd = _objective(xs, m2, mode, d, fixed)
    if fc >= fd:
        return c, fc
    return d, fd


@njit(cache=True, nogil=True)
def _fit_ml(xs, tol, n_grid, sweeps):
    m2 = 0.0
    for i in range(xs.size):
        m2 += xs[i] * xs[i]
    m2 /= xs.size
    # On the ML optimum the scale satisfies phi^2 = (m2 - nu^2) / 2, so a
    # one-dimensional search along that curve finds the joint maximum.
    hi = 0.5 * math.log(0.5 * m2)
    lo = hi - 30.0 * math.log(10.0)
    best_i = 0
    best_f = -np.inf
    step = (hi - lo) / (n_grid - 1)
    for i in range(n_grid):
        f = _objective(xs, m2, 0, lo + i * step, 0.0)
        if f > best_f:
            best_f = f
            best_i = i
    a = lo + max(best_i - 1, 0) * step
    b = lo + min(best_i + 1, n_grid - 1) * step
    t, f = _golden_max(xs, m2, 0, 0.0, a, b, tol)
    if best_i == n_grid - 1 and _objective(xs, m2, 0, hi, 0.0) >= f:
        t = hi
        f = _objective(xs, m2, 0, hi, 0.0)
    phi = math.exp(t)
    nu2 = m2 - 2.0 * phi * phi
    nu = math.sqrt(nu2) if nu2 > 0.0 else 0.0

    # coordinate-wise golden-section polish
    for _ in range(sweeps):
        moved = False
        w = 0.1 * phi + 1e-12 * (nu + phi)
        new_nu, f_nu = _golden_max(xs, m2, 1, phi, max(nu - w, 0.0), nu + w, tol * (nu + phi))
        if f_nu > f:
            moved = abs(new_nu - nu) > tol * (nu + phi)
            nu = new_nu
            f = f_nu
        lp = math.log(phi)
        new_lp, f_phi = _golden_max(xs, m2, 2, nu, lp - 0.1, lp + 0.1, tol)
        if f_phi > f:
            moved = moved or abs(new_lp - lp) > tol
            phi = math.exp(new_lp)
            f = f_phi
        if not moved:
            break
    return nu, phi, f


def _koay_xi(theta):
    theta = np.asarray(theta, dtype=np.float64)
    t2 = theta * theta
    y = t2 / 4.0
    # exp(-t2/2) [.. I_k(t2/4) ..]^2 == [.. I_ke(t2/4) ..]^2
    bracket = (2.0 + t2) * special.i0e(y) + t2 * special.i1e(y)
    xi = 2.0 + t2 - (np.pi / 8.0) * bracket * bracket
    # xi = 1 - O(theta^-2); the closed form above cancels away every digit long before that
    return np.where(theta > KOAY_THETA_MAX, 1.0, xi)


def _moment_arrays(m1, var):
    """Koay-Basser moment estimates for arrays of sample means and variances."""
    m1 = np.asarray(m1, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    degenerate = var <= 0.0
    safe_var = np.where(degenerate, 1.0, var)
    r = m1 / np.sqrt(safe_var)
    rayleigh_r = math.sqrt(math.pi / (4.0 - math.pi))
    theta = np.where(r > rayleigh_r, r - rayleigh_r, 0.0)
    active = (r > rayleigh_r) & ~degenerate
    for _ in range(500):
        if not active.any():
            break
        nxt = np.sqrt(np.maximum(_koay_xi(theta[active]) * (1.0 + r[active] ** 2) - 2.0, 0.0))
        old = theta[active]
        theta[active] = nxt
        done = np.abs(nxt - old) < 1e-12 * np.maximum(old, 1.0)
        idx = np.flatnonzero(active)
        active[idx[done]] = False
    xi = _koay_xi(theta)
    phi2 = safe_var / xi
    nu = np.sqrt(np.maximum(m1 * m1 + (xi - 2.0) * phi2, 0.0))
    phi = np.sqrt(phi2)
    nu = np.where(degenerate, m1, nu)
    phi = np.where(degenerate, np.maximum(1e-12 * m1, np.finfo(float).tiny), phi)
    return nu, phi


def moment_estimate(samples) -> RicianParams:
    """Method-of-moments Rician estimate from the sample mean and variance.

    Solves the Koay-Basser fixed point for the SNR ``theta = nu / phi`` and
    maps it back through the Rician variance correction factor.  Returns the
    Rayleigh moment estimate when the mean-to-spread ratio is below the
    Rayleigh value.
    """
    xs = _as_float_array(samples).ravel()
    nu, phi = _moment_arrays([xs.mean()], [xs.var()])
    return RicianParams(nu=float(nu[0]), phi=float(phi[0]))


@njit(cache=True, nogil=True)
def _fit_one(xs, tol, init_nu, init_phi):
    nu, phi, ll = _fit_ml(xs, tol, 64, 8)
    ll_init = _loglik(xs, init_nu, init_phi)
    if ll_init > ll:
        nu, phi, ll = init_nu, init_phi, ll_init
    m2 = 0.0
    for i in range(xs.size):
        m2 += xs[i] * xs[i]
    phi_rayleigh = math.sqrt(0.5 * (m2 / xs.size))
    ll_rayleigh = _loglik(xs, 0.0, phi_rayleigh)
    if nu == 0.0 or 2.0 * (ll - ll_rayleigh) < RAYLEIGH_LR_THRESHOLD:
        return 0.0, phi_rayleigh
    return nu, phi


@njit(cache=True, nogil=True)
def _fit_batch(flat, starts, tol, init_nu, init_phi, out_nu, out_phi):
    for k in range(starts.size - 1):
        out_nu[k], out_phi[k] = _fit_one(flat[starts[k]:starts[k + 1]], tol,
                                         init_nu[k], init_phi[k])


def _check_fit_samples(xs):
    if xs.size < MIN_FIT_SAMPLES:
        raise InsufficientDataError(
            f"need at least {MIN_FIT_SAMPLES} samples for a Rician fit, got {xs.size}")
    if not np.all(np.isfinite(xs)) or np.any(xs <= 0):
        raise DomainError("Rician samples must be finite and strictly positive")


def fit_rician_ml(samples, tol: float = 1e-8) -> RicianParams:
    """Maximum-likelihood Rician fit.

    The search runs along the curve ``phi^2 = (m2 - nu^2) / 2`` that every
    stationary point satisfies, followed by coordinate-wise golden-section
    refinement.  A nonzero ``nu`` is only reported when it raises the
    log-likelihood over the Rayleigh fit by more than half the 95% chi-square
    critical value; otherwise the Rayleigh closed form ``phi^2 = mean(x^2)/2``
    is returned.  Whenever a nonzero ``nu`` is reported, its likelihood is at
    least that of the method-of-moments starting point.

    Raises
    ------
    InsufficientDataError
        Fewer than 8 samples.
    DomainError
        Any sample is not strictly positive.
    """
    xs = _as_float_array(samples).ravel()
    _check_fit_samples(xs)
    init = moment_estimate(xs)
    nu, phi = _fit_one(xs, tol, init.nu, init.phi)
    return RicianParams(nu=float(nu), phi=float(phi))


def fit_rician_ml_many(sample_sets, tol: float = 1e-8) -> tuple[np.ndarray, np.ndarray]:
    """``fit_rician_ml`` over many sample sets in one compiled loop.

    Returns ``(nu, phi)`` arrays; entry ``k`` equals
    ``fit_rician_ml(sample_sets[k], tol)`` exactly.
    """
    sets = [_as_float_array(x).ravel() for x in sample_sets]
    for xs in sets:
        _check_fit_samples(xs)
    starts = np.zeros(len(sets) + 1, dtype=np.int64)
    starts[1:] = np.cumsum([xs.size for xs in sets])
    flat = np.concatenate(sets) if sets else np.zeros(0)
    init_nu, init_phi = _moment_arrays([xs.mean() for xs in sets], [xs.var() for xs in sets])
    nu = np.empty(len(sets))
    phi = np.empty(len(sets))
    _fit_batch(flat, starts, tol, init_nu, init_phi, nu, phi)
    return nu, phi

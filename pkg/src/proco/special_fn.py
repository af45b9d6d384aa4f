"""Modified Bessel functions of the first kind, evaluated in log space.

Only integer orders are supported. Three regimes are used:

* power series for ``kappa <= max(10, nu / 2)``,
* Miller backward recurrence anchored on ``I_0`` for the middle range,
* the Hankel large-argument expansion when ``kappa > 1000``,
  ``kappa > 100 * nu`` and ``kappa > nu**2``.

Every public function accepts a scalar or an array of arguments and returns
the same shape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

ArrayLike = float | np.ndarray

SERIES_FLOOR = 10.0
ASYMPTOTIC_KAPPA = 1000.0
ASYMPTOTIC_RATIO = 100.0
RESCALE_THRESHOLD = 1e250
# I_0 switches from its series to its Hankel expansion here
I0_SWITCH = 50.0

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class MillerConfig:
    """Start order and rescaling threshold for the backward recurrence.

    ``depth=None`` picks the start order from the argument, see
    :func:`miller_depth`.
    """

    depth: int | None = None
    rescale_threshold: float = RESCALE_THRESHOLD


def _check_order(nu: int) -> int:
    if int(nu) != nu or nu < 0:
        raise ValueError(f"order must be a non-negative integer, got {nu!r}")
    return int(nu)


def _as_kappa(kappa: ArrayLike) -> tuple[np.ndarray, bool]:
    arr = np.asarray(kappa, dtype=float)
    if np.any(np.isnan(arr)):
        raise ValueError("kappa contains NaN")
    if np.any(arr < 0):
        raise ValueError("kappa must be non-negative")
    return np.atleast_1d(arr), arr.ndim == 0


def _restore(out: np.ndarray, scalar: bool) -> ArrayLike:
    return float(out[0]) if scalar else out


def miller_depth(nu: int, kappa_max: float) -> int:
    """Start order M for the backward recurrence.

    The trial solution picks up a K-type component whose relative size at
    order ``nu`` is roughly ``exp(-((M + 1)^2 - nu^2) / kappa)`` when kappa is
    large, so M grows like ``sqrt(40 kappa)``.
    """
    return int(max(nu + 20, math.ceil(math.sqrt(nu * nu + 40.0 * kappa_max)) + 10))


# ---------------------------------------------------------------------------
# regime kernels; each returns log(I_nu(k) / k**nu) for k > 0


def _series_rest(nu: int, k: np.ndarray) -> np.ndarray:
    """Power-series sum for I_nu(k) (k/2)^-nu nu!, minus its leading 1."""
    q = 0.25 * k * k
    term = np.ones_like(k)
    rest = np.zeros_like(k)
    j = 0
    while True:
        j += 1
        term = term * q / (j * (nu + j))
        rest = rest + term
        if np.all(term <= 1e-17 * (1.0 + rest)):
            break
    return rest


def _scaled_series(nu: int, k: np.ndarray) -> np.ndarray:
    """Power series, log(I_nu(k) / k^nu). Exact at k = 0."""
    # the leading 1 is kept apart so log1p stays accurate for tiny k
    return np.log1p(_series_rest(nu, k)) - nu * math.log(2.0) - math.lgamma(nu + 1)


def _log_i0_hankel(k: np.ndarray) -> np.ndarray:
    # all coefficients are positive for nu = 0
    term = np.ones_like(k)
    total = np.ones_like(k)
    for j in range(1, 200):
        term = term * (2 * j - 1) ** 2 / (8.0 * j * k)
        total = total + term
        if np.all(term <= 1e-17 * total):
            break
    return k - 0.5 * np.log(2.0 * np.pi * k) + np.log(total)


def _log_i0(k: np.ndarray) -> np.ndarray:
    out = np.empty_like(k)
    small = k <= I0_SWITCH
    if np.any(small):
        out[small] = _scaled_series(0, k[small])
    if np.any(~small):
        out[~small] = _log_i0_hankel(k[~small])
    return out


def _hankel_sum(nu: int, k: np.ndarray) -> np.ndarray:
    """Sum of the large-argument expansion; I_nu(k) = e^k (2 pi k)^-1/2 times this."""
    mu = 4.0 * nu * nu
    term = np.ones_like(k)
    total = np.ones_like(k)
    prev = np.full_like(k, np.inf)
    active = np.ones(k.shape, dtype=bool)
    for j in range(1, 400):
        term = np.where(active, -term * (mu - (2 * j - 1) ** 2) / (8.0 * j * k), 0.0)
        mag = np.abs(term)
        # stop before the asymptotic series starts to diverge
        active &= mag < prev
        total = total + np.where(active, term, 0.0)
        prev = mag
        active &= mag > 1e-17 * np.abs(total)
        if not np.any(active):
            break
    return total


def _log_hankel(nu: int, k: np.ndarray) -> np.ndarray:
    """Large-argument expansion of log I_nu(k); valid for k >> nu^2."""
    return k - 0.5 * np.log(2.0 * np.pi * k) + np.log(_hankel_sum(nu, k))


def _miller(nu: int, k: np.ndarray, config: MillerConfig) -> tuple[np.ndarray, np.ndarray]:
    """Backward recurrence; returns (log I_nu, I_nu+1 / I_nu)."""
    depth = config.depth if config.depth is not None else miller_depth(nu, float(k.max()))
    if depth < nu + 2:
        raise ValueError(f"Miller depth {depth} too small for order {nu}")
    y_next = np.zeros_like(k)  # order M + 1
    y = np.ones_like(k)  # order M
    log_off = np.zeros_like(k)
    log_nu = ratio = None
    for n in range(depth, 0, -1):
        if n == nu:
            log_nu = np.log(y) + log_off
            # both orders carry the same scale here, so the ratio is exact
            ratio = y_next / y
        y_prev = (2.0 * n / k) * y + y_next
        y_next, y = y, y_prev
        big = y > config.rescale_threshold
        if np.any(big):
            scale = np.where(big, y, 1.0)
            y = y / scale
            y_next = y_next / scale
            log_off = log_off + np.log(scale)
    if nu == 0:
        log_nu = np.log(y) + log_off
        ratio = y_next / y
    log_tilde0 = np.log(y) + log_off
    # difference first: the unnormalized logs can be huge
    return _log_i0(k) + (log_nu - log_tilde0), ratio


def _regimes(nu: int, k: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    series = k <= max(SERIES_FLOOR, nu / 2.0)
    # kappa > nu^2 keeps the leading Hankel coefficients below 1/2
    asym = (k > ASYMPTOTIC_KAPPA) & (k > ASYMPTOTIC_RATIO * nu) & (k > nu * nu) & ~series
    miller = ~series & ~asym
    return series, miller, asym


def _scaled(nu: int, k: np.ndarray, config: MillerConfig) -> np.ndarray:
    out = np.empty_like(k)
    series, miller, asym = _regimes(nu, k)
    if np.any(series):
        out[series] = _scaled_series(nu, k[series])
    if np.any(miller):
        km = k[miller]
        out[miller] = _miller(nu, km, config)[0] - nu * np.log(km)
    if np.any(asym):
        ka = k[asym]
        out[asym] = _log_hankel(nu, ka) - nu * np.log(ka)
    return out


# ---------------------------------------------------------------------------
# public surface


def log_bessel_scaled(nu: int, kappa: ArrayLike, config: MillerConfig = MillerConfig()) -> ArrayLike:
    """``log(I_nu(kappa) / kappa**nu)``, finite at ``kappa = 0``.

    At zero this equals ``-nu*log(2) - lgamma(nu + 1)``.
    """
    nu = _check_order(nu)
    k, scalar = _as_kappa(kappa)
    return _restore(_scaled(nu, k, config), scalar)


def log_bessel_i(nu: int, kappa: ArrayLike, config: MillerConfig = MillerConfig()) -> ArrayLike:
    """Natural log of the modified Bessel function ``I_nu(kappa)``.

    Parameters
    ----------
    nu : int
        Non-negative integer order.
    kappa : float or ndarray
        Non-negative argument.

    Returns
    -------
    float or ndarray
        ``log I_nu(kappa)``. For ``kappa == 0`` this is 0 when ``nu == 0``
        and ``-inf`` otherwise.

    Raises
    ------
    ValueError
        If ``kappa`` is negative or ``nu`` is not a non-negative integer.
    """
    nu = _check_order(nu)
    k, scalar = _as_kappa(kappa)
    out = np.empty_like(k)
    zero = k == 0
    if np.any(zero):
        out[zero] = 0.0 if nu == 0 else -np.inf
    pos = ~zero
    if np.any(pos):
        kp = k[pos]
        out[pos] = _scaled(nu, kp, config) + nu * np.log(kp)
    return _restore(out, scalar)


REGIMES = ("series", "miller", "hankel")


def log_bessel_i_regime(nu: int, kappa: ArrayLike, regime: str, config: MillerConfig = MillerConfig()) -> ArrayLike:
    """``log I_nu(kappa)`` from one named regime, ignoring the usual switch.

    Meant for cross-checks; each regime is only accurate in its own range
    (the Hankel expansion in particular needs ``kappa >> nu**2``).
    """
    nu = _check_order(nu)
    k, scalar = _as_kappa(kappa)
    if np.any(k == 0):
        raise ValueError("regime evaluation needs a positive argument")
    if regime == "series":
        out = _scaled_series(nu, k) + nu * np.log(k)
    elif regime == "miller":
        out = _miller(nu, k, config)[0]
    elif regime == "hankel":
        out = _log_hankel(nu, k)
    else:
        raise ValueError(f"unknown regime {regime!r}; expected one of {REGIMES}")
    return _restore(out, scalar)


def log_bessel_ratio(nu: int, kappa_num: ArrayLike, kappa_den: ArrayLike) -> ArrayLike:
    """``log I_nu(kappa_num) - log I_nu(kappa_den)`` without forming either value."""
    if np.any(np.asarray(kappa_den) <= 0):
        raise ValueError("kappa_den must be positive")
    num = log_bessel_i(nu, kappa_num)
    den = log_bessel_i(nu, kappa_den)
    return num - den


def _bessel_ratio(nu: int, k: np.ndarray) -> np.ndarray:
    """``I_{nu+1}(k) / I_nu(k)`` for k > 0, formed without taking logs."""
    out = np.empty_like(k)
    series, miller, asym = _regimes(nu, k)
    # the expansion for order nu + 1 needs its own validity check
    asym &= _regimes(nu + 1, k)[2]
    miller |= ~series & ~asym
    if np.any(series):
        ks = k[series]
        out[series] = (0.5 * ks / (nu + 1)) * (1.0 + _series_rest(nu + 1, ks)) / (1.0 + _series_rest(nu, ks))
    if np.any(miller):
        out[miller] = _miller(nu, k[miller], MillerConfig())[1]
    if np.any(asym):
        ka = k[asym]
        out[asym] = _hankel_sum(nu + 1, ka) / _hankel_sum(nu, ka)
    return out


def mean_resultant(p: int, kappa: ArrayLike) -> ArrayLike:
    """``A_p(kappa) = I_{p/2}(kappa) / I_{p/2-1}(kappa)``, in ``[0, 1)``.

    This is the expected cosine between a vMF draw and its mean direction.
    """
    nu = _order_for_dim(p)
    k, scalar = _as_kappa(kappa)
    out = np.zeros_like(k)
    pos = k > 0
    if np.any(pos):
        out[pos] = _bessel_ratio(nu, k[pos])
    return _restore(np.minimum(out, np.nextafter(1.0, 0.0)), scalar)


def _order_for_dim(p: int) -> int:
    if int(p) != p or p < 2 or p % 2:
        raise ValueError(f"dimension must be an even integer >= 2, got {p!r}")
    return int(p) // 2 - 1


def log_vmf_normalizer(p: int, kappa: ArrayLike) -> ArrayLike:
    """``log C_p(kappa)`` with ``C_p = (2 pi)^{p/2} I_{p/2-1}(kappa) / kappa^{p/2-1}``.

    ``kappa = 0`` gives the log surface area of the unit sphere in R^p.
    """
    nu = _order_for_dim(p)
    return 0.5 * p * _LOG_2PI + log_bessel_scaled(nu, kappa)

"""Photon-count statistics of a blinking emitter and joint rate estimation.

The photon count in a window of length T is Poisson conditioned on the bright
occupation time A: n | A ~ Poisson(gamma_bright*A + gamma_dark*(T - A)). The
distribution of A for the two-state switching process has two point masses
(paths with no switch, weighted by the survival probabilities) plus a smooth
density expressible with modified Bessel functions. The count distribution is
evaluated as an adaptive quadrature mixture over that density, and rates are
extracted by joint maximum likelihood over histograms at several counting
times.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.optimize import minimize
from scipy.special import gammaln, ive

from .errors import (
    ConvergenceError,
    InsufficientEventsError,
    InvalidParameterError,
    QuadratureError,
    RebinningError,
    TruncationError,
)
from .telegraph import ChargeState, TelegraphParams, TimeTrace, stationary_population

_QUAD_LEVELS = (64, 128, 256, 512, 1024)


@lru_cache(maxsize=64)
def _leggauss(n: int):
    return leggauss(n)


@dataclass(frozen=True, eq=False)
class CountHistogram:
    """Occurrences of each photon number among windows of a fixed counting time."""

    counting_time: float
    bin_counts: dict

    def __post_init__(self):
        if not np.isfinite(self.counting_time) or self.counting_time <= 0.0:
            raise InvalidParameterError(f"counting_time must be > 0, got {self.counting_time!r}")
        clean = {}
        for n, occ in self.bin_counts.items():
            if int(n) != n or n < 0 or int(occ) != occ or occ < 0:
                raise InvalidParameterError(f"invalid histogram entry {n!r}: {occ!r}")
            if occ > 0:
                clean[int(n)] = int(occ)
        if sum(clean.values()) < 1:
            raise InvalidParameterError("histogram must contain at least one occurrence")
        object.__setattr__(self, "bin_counts", clean)

    @property
    def values(self) -> np.ndarray:
        return np.array(sorted(self.bin_counts), dtype=np.int64)

    @property
    def occurrences(self) -> np.ndarray:
        return np.array([self.bin_counts[n] for n in sorted(self.bin_counts)], dtype=np.int64)

    @property
    def n_windows(self) -> int:
        return int(sum(self.bin_counts.values()))

    @classmethod
    def from_window_counts(cls, window_counts, counting_time: float) -> "CountHistogram":
        values, occ = np.unique(np.asarray(window_counts, dtype=np.int64), return_counts=True)
        return cls(counting_time, dict(zip(values.tolist(), occ.tolist())))

    def to_csv(self, path) -> None:
        lines = [f"# counting_time_s={self.counting_time:.17g}", "photon_count,occurrences"]
        lines.extend(f"{n:d},{self.bin_counts[n]:d}" for n in sorted(self.bin_counts))
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path) -> "CountHistogram":
        counting_time = None
        counts = {}
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line.lstrip("#").strip()
                if body.startswith("counting_time_s="):
                    counting_time = float(body.split("=", 1)[1])
                continue
            if line.startswith("photon_count"):
                continue
            parts = line.split(",")
            try:
                counts[int(parts[0])] = int(parts[1])
            except (ValueError, IndexError) as exc:
                raise InvalidParameterError(f"{path}: malformed row at line {lineno}: {raw!r}") from exc
        if counting_time is None:
            raise InvalidParameterError(f"{path}: missing '# counting_time_s=' comment")
        return cls(counting_time, counts)


# ---------------------------------------------------------------------------
# Occupation-time distribution of the switching process
# ---------------------------------------------------------------------------

def bright_time_atoms(params: TelegraphParams, counting_time: float, initial=None):
    """Point masses of the bright occupation time at 0 and T (no-switch paths).

    Returns (weight_at_zero, weight_at_T): the probabilities that the window is
    spent entirely dark or entirely bright, weighted by the initial-state law.
    """
    T = counting_time
    p_bright, p_dark = _initial_weights(params, initial)
    w_full = p_bright * math.exp(-params.k_ion * T)
    w_zero = p_dark * math.exp(-params.k_rec * T)
    return w_zero, w_full


def bright_time_density(params: TelegraphParams, counting_time: float, a, initial=None) -> np.ndarray:
    """Continuous density of the bright occupation time on (0, T).

    For a start in the bright state the density of spending a of T seconds
    bright (b = T - a dark) is

        exp(-k_ion*a - k_rec*b) * [k_ion*I0(z) + sqrt(k_ion*k_rec*a/b)*I1(z)]

    with z = 2*sqrt(k_ion*k_rec*a*b); the start-dark form swaps the roles of
    the two states. Exponentially scaled Bessel functions keep the evaluation
    stable at large rate-time products.
    """
    T = counting_time
    a = np.asarray(a, dtype=float)
    if np.any((a <= 0.0) | (a >= T)):
        raise InvalidParameterError("density is defined on the open interval (0, T)")
    k1, k2 = params.k_ion, params.k_rec
    b = T - a
    p_bright, p_dark = _initial_weights(params, initial)

    x = k1 * a
    y = k2 * b
    z = 2.0 * np.sqrt(x * y)
    damp = np.exp(-((np.sqrt(x) - np.sqrt(y)) ** 2))
    i0 = ive(0, z)
    i1 = ive(1, z)
    root = np.sqrt(k1 * k2)
    f_bright = damp * (k1 * i0 + root * np.sqrt(a / b) * i1)
    f_dark = damp * (k2 * i0 + root * np.sqrt(b / a) * i1)
    return p_bright * f_bright + p_dark * f_dark


def _initial_weights(params: TelegraphParams, initial):
    if initial is None or initial == "stationary":
        p_bright = stationary_population(params.k_ion, params.k_rec)
        return p_bright, 1.0 - p_bright
    if isinstance(initial, ChargeState):
        return (1.0, 0.0) if initial is ChargeState.NV_MINUS else (0.0, 1.0)
    raise InvalidParameterError(f"initial must be a ChargeState, 'stationary' or None, got {initial!r}")


def _occupation_nodes(params: TelegraphParams, T: float, n_base: int):
    """Gauss-Legendre nodes/weights on (0, T), concentrated near the occupancy
    peak when switching is fast enough that the density is sharply localized."""
    k1, k2 = params.k_ion, params.k_rec
    ktot = k1 + k2
    edges = [0.0, T]
    if ktot > 0.0 and ktot * T > 50.0 and k1 > 0.0 and k2 > 0.0:
        a_star = (k2 / ktot) * T
        sigma = math.sqrt(2.0 * k1 * k2 * T / ktot**3)
        lo = max(0.0, a_star - 12.0 * sigma)
        hi = min(T, a_star + 12.0 * sigma)
        if hi - lo < 0.9 * T:
            edges = sorted({0.0, lo, hi, T})
    nodes_list, weights_list = [], []
    for left, right in zip(edges[:-1], edges[1:]):
        if right - left <= 0.0:
            continue
        is_peak_panel = len(edges) == 2 or (left > 0.0 and right < T)
        n = n_base if is_peak_panel else max(n_base // 2, 16)
        x, w = _leggauss(n)
        half = 0.5 * (right - left)
        nodes_list.append(left + half * (x + 1.0))
        weights_list.append(half * w)
    return np.concatenate(nodes_list), np.concatenate(weights_list)


def _poisson_pmf_matrix(n: np.ndarray, mu: np.ndarray, lgam=None) -> np.ndarray:
    """Poisson pmf P(n_i; mu_j) as an (len(n), len(mu)) matrix.

    `lgam` may carry a precomputed gammaln(n + 1) column to spare the hot path.
    """
    n = n[:, None].astype(float)
    mu = np.asarray(mu, dtype=float)[None, :]
    if lgam is None:
        lgam = gammaln(n + 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        logp = n * np.log(mu) - mu - lgam
    # mu == 0: pmf is 1 at n == 0, else 0
    zero = mu == 0.0
    if np.any(zero):
        logp = np.where(zero & (n == 0.0), 0.0, logp)
        logp = np.where(zero & (n > 0.0), -np.inf, logp)
    return np.exp(logp)


def _mixture_probabilities(params: TelegraphParams, T: float, n: np.ndarray, initial,
                           n_base: int, lgam=None):
    """Unnormalized P(n) over the occupation-time mixture plus the total mass."""
    w_zero, w_full = bright_time_atoms(params, T, initial)
    gb, gd = params.gamma_bright, params.gamma_dark
    if lgam is None:
        lgam = gammaln(n[:, None].astype(float) + 1.0)
    probs = np.zeros(n.size)
    if w_zero > 0.0:
        probs += w_zero * _poisson_pmf_matrix(n, np.array([gd * T]), lgam)[:, 0]
    if w_full > 0.0:
        probs += w_full * _poisson_pmf_matrix(n, np.array([gb * T]), lgam)[:, 0]
    mass = w_zero + w_full
    if params.k_ion > 0.0 or params.k_rec > 0.0:
        a, w = _occupation_nodes(params, T, n_base)
        dens = bright_time_density(params, T, a, initial)
        eff = w * dens
        keep = eff > 0.0
        if np.any(keep):
            mu = gb * a[keep] + gd * (T - a[keep])
            probs += _poisson_pmf_matrix(n, mu, lgam) @ eff[keep]
        mass += float(eff.sum())
    return probs, mass


def count_probabilities(params: TelegraphParams, counting_time: float, n, initial=None,
                        rtol: float = 1e-8) -> np.ndarray:
    """Probability of observing each photon number in `n` within one window.

    Evaluates the occupation-time mixture at the requested counts only, which
    stays cheap at large mean counts; the result is normalized by the total
    mixture mass so it is a proper probability.
    """
    if not np.isfinite(counting_time) or counting_time <= 0.0:
        raise InvalidParameterError(f"counting_time must be > 0, got {counting_time!r}")
    n = np.atleast_1d(np.asarray(n, dtype=np.int64))
    if np.any(n < 0):
        raise InvalidParameterError("photon numbers must be >= 0")
    prev = None
    for n_base in _QUAD_LEVELS:
        probs, mass = _mixture_probabilities(params, counting_time, n, initial, n_base)
        probs = probs / mass
        if prev is not None:
            err = float(np.max(np.abs(probs - prev)))
            if err <= rtol * max(float(probs.max(initial=0.0)), 1e-12) + 1e-15:
                return probs
        prev = probs
    raise QuadratureError("count probability quadrature did not converge", achieved_tol=err)


def count_distribution(params: TelegraphParams, counting_time: float, initial=None,
                       tail_tol: float = 1e-6, rtol: float = 1e-9,
                       max_support: int = 200_000) -> np.ndarray:
    """Full photon-count pmf over 0..n_cap for one counting window.

    The support is truncated at mean + 12*sqrt(mean) of the larger state rate
    and extended until the missing tail mass is below `tail_tol`; the returned
    array is then normalized to sum to one.

    Raises
    ------
    TruncationError
        If the tail mass still exceeds `tail_tol` at `max_support` entries.
    """
    if not np.isfinite(counting_time) or counting_time <= 0.0:
        raise InvalidParameterError(f"counting_time must be > 0, got {counting_time!r}")
    T = counting_time
    mu_hi = max(params.gamma_bright, params.gamma_dark) * T
    cap = int(mu_hi + 12.0 * math.sqrt(mu_hi) + 25.0)
    while True:
        if cap > max_support:
            raise TruncationError(
                f"support cap {cap} exceeds max_support={max_support}", tail_mass=None)
        n = np.arange(cap + 1, dtype=np.int64)
        prev = None
        err = np.inf
        for n_base in _QUAD_LEVELS:
            probs, mass = _mixture_probabilities(params, T, n, initial, n_base)
            if prev is not None:
                err = float(np.max(np.abs(probs - prev)))
                if err <= rtol * max(float(probs.max(initial=0.0)), 1e-12) + 1e-15:
                    break
            prev = probs
        else:
            raise QuadratureError("count distribution quadrature did not converge", achieved_tol=err)
        tail = mass - float(probs.sum())
        if tail <= tail_tol:
            pmf = np.clip(probs, 0.0, None)
            return pmf / pmf.sum()
        cap = int(cap * 1.5) + 50


def count_distribution_mean(params: TelegraphParams, counting_time: float) -> float:
    """Analytic first moment for a stationary start."""
    p = stationary_population(params.k_ion, params.k_rec)
    return counting_time * (p * params.gamma_bright + (1.0 - p) * params.gamma_dark)


# ---------------------------------------------------------------------------
# Histograms from traces
# ---------------------------------------------------------------------------

def _window_size(trace: TimeTrace, counting_time: float) -> int:
    ratio = counting_time / trace.bin_width
    window = round(ratio)
    if window < 1 or abs(ratio - window) > 1e-6 * max(ratio, 1.0):
        raise RebinningError(
            f"counting_time {counting_time!r} is not an integer multiple of bin_width {trace.bin_width!r}"
        )
    return int(window)


def histograms_from_trace(trace: TimeTrace, counting_times) -> list[CountHistogram]:
    """Histogram the trace into non-overlapping windows at each counting time.

    Every counting time consumes the full trace; a leftover tail shorter than
    the window is dropped. Windows at different counting times therefore reuse
    the same data (see `partitioned_histograms` for a disjoint split).
    """
    out = []
    for ct in counting_times:
        window = _window_size(trace, ct)
        n_windows = trace.n_bins // window
        if n_windows < 1:
            raise RebinningError(f"trace shorter than one window of {ct!r} s")
        sums = trace.counts[: n_windows * window].reshape(n_windows, window).sum(axis=1)
        out.append(CountHistogram.from_window_counts(sums, window * trace.bin_width))
    return out


def partitioned_histograms(trace: TimeTrace, counting_times) -> list[CountHistogram]:
    """Histogram disjoint contiguous slices of the trace, one per counting time.

    Unlike `histograms_from_trace`, no photon is used in more than one window,
    so the joint likelihood over the returned histograms does not double-count
    data and its information matrix yields honest uncertainties.
    """
    counting_times = list(counting_times)
    if not counting_times:
        return []
    share = trace.n_bins // len(counting_times)
    out = []
    start = 0
    for i, ct in enumerate(counting_times):
        window = _window_size(trace, ct)
        stop = trace.n_bins if i == len(counting_times) - 1 else start + share
        n_windows = (stop - start) // window
        if n_windows < 1:
            raise RebinningError(f"trace slice shorter than one window of {ct!r} s")
        segment = trace.counts[start : start + n_windows * window]
        sums = segment.reshape(n_windows, window).sum(axis=1)
        out.append(CountHistogram.from_window_counts(sums, window * trace.bin_width))
        start = stop
    return out


# ---------------------------------------------------------------------------
# Joint maximum-likelihood fit
# ---------------------------------------------------------------------------

_PARAM_NAMES = ("k_ion", "k_rec", "gamma_bright", "gamma_dark")
_DEFAULT_BOUNDS = {
    "k_ion": (1e-6, 1e5),
    "k_rec": (1e-6, 1e5),
    "gamma_bright": (1e-3, 1e12),
    "gamma_dark": (1e-3, 1e12),
}
# deterministic multiplicative perturbations of the initial guess, one per restart
_RESTART_FACTORS = (
    (1.0, 1.0, 1.0, 1.0),
    (0.3, 3.0, 1.0, 1.0),
    (3.0, 0.3, 1.0, 1.0),
    (0.1, 0.1, 1.5, 0.5),
)


@dataclass(frozen=True)
class RateFit:
    """Joint MLE of switching and photon rates over a set of histograms."""

    params: TelegraphParams
    sigma: dict
    loglik: float
    n_histograms: int
    converged: bool = True
    unidentifiable: bool = False

    def to_dict(self) -> dict:
        return {
            "k_ion": self.params.k_ion,
            "k_rec": self.params.k_rec,
            "gamma_bright": self.params.gamma_bright,
            "gamma_dark": self.params.gamma_dark,
            "sigma": dict(self.sigma),
            "loglik": self.loglik,
            "n_histograms": self.n_histograms,
            "converged": self.converged,
            "unidentifiable": self.unidentifiable,
        }


def loglikelihood(histograms, params: TelegraphParams, initial=None) -> float:
    """Joint log-likelihood of the histograms under shared telegraph parameters."""
    total = 0.0
    for hist in histograms:
        probs = count_probabilities(params, hist.counting_time, hist.values, initial)
        total += float(np.dot(hist.occurrences, np.log(np.clip(probs, 1e-300, None))))
    return total


def _raw_loglik(theta: np.ndarray, histograms, levels=_QUAD_LEVELS) -> float:
    k_ion, k_rec, gb, gd = (float(v) for v in theta)
    total = 0.0
    for T, n_vals, lgam, occ in histograms:
        probs = _probs_raw(k_ion, k_rec, gb, gd, T, n_vals, lgam, levels)
        total += float(np.dot(occ, np.log(np.clip(probs, 1e-300, None))))
    return total


def _probs_raw(k_ion, k_rec, gb, gd, T, n_vals, lgam=None, levels=_QUAD_LEVELS, rtol=1e-8):
    """count_probabilities for raw floats, without TelegraphParams ordering checks.

    With a single entry in `levels` the quadrature order is fixed (fast path
    for the optimizer); otherwise orders are doubled until converged.
    """
    params = _UncheckedParams(k_ion, k_rec, gb, gd)
    prev = None
    for n_base in levels:
        probs, mass = _mixture_probabilities(params, T, n_vals, None, n_base, lgam)
        probs = probs / mass
        if len(levels) == 1:
            return probs
        if prev is not None:
            err = float(np.max(np.abs(probs - prev)))
            if err <= rtol * max(float(probs.max(initial=0.0)), 1e-12) + 1e-15:
                return probs
        prev = probs
    return prev


class _UncheckedParams:
    """Parameter bag with the TelegraphParams field layout but no invariants,
    used while the optimizer explores (it may transiently order the rates
    arbitrarily)."""

    __slots__ = ("k_ion", "k_rec", "gamma_bright", "gamma_dark")

    def __init__(self, k_ion, k_rec, gamma_bright, gamma_dark):
        self.k_ion = k_ion
        self.k_rec = k_rec
        self.gamma_bright = gamma_bright
        self.gamma_dark = gamma_dark


def _observed_information(theta: np.ndarray, histograms) -> np.ndarray:
    """Hessian of -loglik at theta by central differences with relative steps."""
    n = theta.size
    h = np.maximum(1e-4 * np.abs(theta), 1e-12)
    hess = np.empty((n, n))

    def f(t):
        return -_raw_loglik(t, histograms)

    f0 = f(theta)
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = h[i]
        fpp = f(theta + ei)
        fmm = f(theta - ei)
        hess[i, i] = (fpp - 2.0 * f0 + fmm) / h[i] ** 2
        for j in range(i + 1, n):
            ej = np.zeros(n)
            ej[j] = h[j]
            fpj = f(theta + ei + ej)
            fmj = f(theta + ei - ej)
            fjp = f(theta - ei + ej)
            fjm = f(theta - ei - ej)
            hess[i, j] = hess[j, i] = (fpj - fmj - fjp + fjm) / (4.0 * h[i] * h[j])
    return hess


def fit_histograms(histograms, init: TelegraphParams, bounds=None, n_restarts: int = 3) -> RateFit:
    """Maximize the summed log-likelihood over all histograms jointly.

    The four parameters are shared across histograms and optimized in log
    space with bounded L-BFGS-B (finite-difference gradients) and a fixed set
    of deterministic restarts. Uncertainties come from the inverse of the
    observed-information matrix at the optimum.

    Raises
    ------
    ConvergenceError
        If no restart converges; carries the best fit found so far.
    """
    histograms = list(histograms)
    if len(histograms) < 1:
        raise InvalidParameterError("need at least one histogram")
    merged_bounds = dict(_DEFAULT_BOUNDS)
    if bounds:
        merged_bounds.update(bounds)
    lo = np.array([merged_bounds[k][0] for k in _PARAM_NAMES])
    hi = np.array([merged_bounds[k][1] for k in _PARAM_NAMES])
    if np.any(lo <= 0.0) or np.any(hi <= lo):
        raise InvalidParameterError("bounds must satisfy 0 < lower < upper")
    x_init = np.array([init.k_ion, init.k_rec, init.gamma_bright, init.gamma_dark])
    if np.any(x_init < lo) or np.any(x_init > hi):
        raise InvalidParameterError("initial guess must lie within the bounds")

    cache = []
    for h in histograms:
        n_vals = h.values
        cache.append((h.counting_time, n_vals, gammaln(n_vals[:, None].astype(float) + 1.0),
                      h.occurrences))
    log_bounds = list(zip(np.log(lo), np.log(hi)))

    def negloglik_log(x):
        try:
            return -_raw_loglik(np.exp(x), cache, levels=(96,))
        except QuadratureError:
            return 1e300

    best = None
    for attempt in range(max(1, n_restarts + 1)):
        factors = np.array(_RESTART_FACTORS[attempt % len(_RESTART_FACTORS)])
        x0 = np.log(np.clip(x_init * factors, lo, hi))
        res = minimize(negloglik_log, x0, method="L-BFGS-B", bounds=log_bounds,
                       options={"maxiter": 300})
        if res.success and np.isfinite(res.fun):
            best = res
            break
        if best is None or res.fun < best.fun:
            best = res

    theta = np.exp(best.x)
    # relabel states if the optimizer settled on gamma_bright < gamma_dark
    if theta[2] < theta[3]:
        theta = np.array([theta[1], theta[0], theta[3], theta[2]])
    loglik = _raw_loglik(theta, cache)

    hess = _observed_information(theta, cache)
    sigma = np.full(4, np.nan)
    try:
        cov = np.linalg.inv(hess)
        diag = np.diag(cov)
        if np.all(np.isfinite(diag)):
            sigma = np.sqrt(np.clip(diag, 0.0, None))
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(hess)
        sigma = np.sqrt(np.clip(np.diag(cov), 0.0, None))

    gb, gd = theta[2], theta[3]
    unidentifiable = (gb - gd) <= 0.05 * max(gb, 1e-300)
    fit = RateFit(
        params=TelegraphParams(*theta),
        sigma={name: float(s) for name, s in zip(_PARAM_NAMES, sigma)},
        loglik=float(loglik),
        n_histograms=len(histograms),
        converged=bool(best.success),
        unidentifiable=bool(unidentifiable),
    )
    if not best.success or not np.isfinite(loglik):
        raise ConvergenceError("joint likelihood fit did not converge", best_so_far=fit,
                               diagnostics={"status": best.message})
    return fit


def initial_guess_from_trace(trace: TimeTrace) -> TelegraphParams:
    """Data-driven starting point for `fit_histograms` from a raw trace.

    Splits the counts at the midpoint of their observed range (which falls
    between well-separated bright and dark modes), reads the photon rates off
    the two cluster means and seeds the switching rates from the threshold
    dwell estimator when it resolves enough events.
    """
    counts = trace.counts
    w = trace.bin_width
    mid = 0.5 * (float(counts.min()) + float(counts.max()))
    low_side = counts[counts < mid]
    high_side = counts[counts >= mid]
    if low_side.size == 0 or high_side.size == 0:
        mean_rate = counts.mean() / w
        gamma_dark = max(0.5 * mean_rate, 1e-2)
        gamma_bright = max(mean_rate, gamma_dark * 1.001 + 1e-2)
    else:
        gamma_dark = max(float(low_side.mean()) / w, 1e-2)
        gamma_bright = max(float(high_side.mean()) / w, gamma_dark * 1.001 + 1e-2)
    try:
        est = threshold_dwell_estimate(trace, mid)
    except (InsufficientEventsError, InvalidParameterError):
        est = None
    if est is not None and est.valid:
        k_ion, k_rec = max(est.k_ion, 1e-4), max(est.k_rec, 1e-4)
    else:
        k_ion = max(1.0 / trace.duration, 1e-4)
        k_rec = max(10.0 / trace.duration, 1e-3)
    return TelegraphParams(k_ion, k_rec, gamma_bright, gamma_dark)


# ---------------------------------------------------------------------------
# Threshold cross-check estimator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ThresholdDwellEstimate:
    """Rates from thresholded dwell durations, with a validity flag.

    Dwells shorter than one bin are unresolvable, so both rates are biased low
    once k*bin_width is not small; use only as a cross-check.
    """

    k_ion: float
    k_rec: float
    n_switches: int
    valid: bool
    note: str = ""


def threshold_dwell_estimate(trace: TimeTrace, threshold: float) -> ThresholdDwellEstimate:
    """Estimate (k_ion, k_rec) by thresholding the binned trace.

    Bins with counts >= threshold are classified bright. Contiguous runs give
    dwell durations; the first and last (censored) runs are dropped and the
    rates are the reciprocal mean dwells.

    Raises
    ------
    InsufficientEventsError
        If fewer than 5 switching events are present (and the count histogram
        does not look bimodal, which would instead flag a misplaced threshold).
    """
    counts = trace.counts
    bright = counts >= threshold
    flips = np.nonzero(np.diff(bright))[0]
    n_switches = flips.size

    mean = counts.mean()
    fano = counts.var() / mean if mean > 0 else 0.0
    if n_switches < 5:
        if bright.all() or (~bright).all():
            if fano > 3.0:
                return ThresholdDwellEstimate(
                    np.nan, np.nan, n_switches, False,
                    "threshold outside the two count modes; no switching resolved")
        raise InsufficientEventsError(
            f"only {n_switches} switching events; need at least 5")

    # run-length encode, dropping the censored first and last runs
    boundaries = np.concatenate(([0], flips + 1, [counts.size]))
    run_lengths = np.diff(boundaries)
    run_states = bright[boundaries[:-1]]
    run_lengths = run_lengths[1:-1]
    run_states = run_states[1:-1]
    bright_dwells = run_lengths[run_states] * trace.bin_width
    dark_dwells = run_lengths[~run_states] * trace.bin_width
    if bright_dwells.size == 0 or dark_dwells.size == 0:
        raise InsufficientEventsError("no complete dwell in one of the states")
    return ThresholdDwellEstimate(
        k_ion=1.0 / float(bright_dwells.mean()),
        k_rec=1.0 / float(dark_dwells.mean()),
        n_switches=n_switches,
        valid=True,
    )

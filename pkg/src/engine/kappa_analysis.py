"""
Quantitative continuity analysis in kappa.

Driver distances, the hyperbolic-distance step, the closeness bound for backward flows
with shifted starting points, the Psi/Phi error terms, derivative-exponent estimation,
rate fitting, mesh selection and the coupled continuity experiment.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .conformal_maps import PointLike, as_complex, backward_flow
from .driver_paths import (
    BrownianSample,
    DriverKind,
    DriverPath,
    sample_brownian,
    scale_driver,
    sqrt_interpolate,
)
from .errors import InvalidArgumentError, LabError, MeshMismatchError
from .settings import LabSettings, resolve_settings
from .trace_engine import build_trace, chain_at_times, default_eval_times, sup_distance

logger = logging.getLogger(__name__)

KAPPA_CRITICAL = 8.0 / 3.0


def check_kappa_regime(kappa: float) -> None:
    """Refuse kappa outside (0, 8/3)."""
    if not 0.0 < kappa < KAPPA_CRITICAL:
        raise InvalidArgumentError(
            f"kappa={kappa} is outside (0, 8/3), where the continuity results hold"
        )


# --- driver distance -----------------------------------------------------------------------


@dataclass(frozen=True)
class DriverDistance:
    """sup |d1 - d2| on the mesh, with the interpolation / kappa-gap split when available."""
    epsilon: float
    interpolation_part: Optional[float] = None
    kappa_part: Optional[float] = None

    @property
    def split_bound(self) -> Optional[float]:
        if self.interpolation_part is None or self.kappa_part is None:
            return None
        return self.interpolation_part + self.kappa_part


def driver_distance(d1: DriverPath, d2: DriverPath) -> DriverDistance:
    """
    Discrete sup distance between two drivers on the same mesh.

    When one driver is the square-root interpolation of sqrt(kappa2) B and the other is
    sqrt(kappa1) B for the same seed, the distance is also split into the interpolation
    error sup |lambda^n_kappa2 - sqrt(kappa2) B| and the gap |sqrt(kappa1) - sqrt(kappa2)| sup |B|.
    """
    if d1.times.shape != d2.times.shape or not np.allclose(d1.times, d2.times, rtol=0, atol=1e-12):
        raise MeshMismatchError("drivers live on different meshes")
    epsilon = float(np.max(np.abs(d1.values - d2.values)))

    kinds = {d1.kind, d2.kind}
    if kinds != {DriverKind.SQRT_INTERPOLATED, DriverKind.RAW_BROWNIAN} or d1.seed != d2.seed:
        return DriverDistance(epsilon)
    interp, raw = (d1, d2) if d1.kind is DriverKind.SQRT_INTERPOLATED else (d2, d1)
    if raw.kappa == 0:
        return DriverDistance(epsilon)

    brownian = raw.values / math.sqrt(raw.kappa)
    source = math.sqrt(interp.kappa) * brownian
    interpolation_part = float(np.max(np.abs(interp.values - source)))
    kappa_part = abs(math.sqrt(raw.kappa) - math.sqrt(interp.kappa)) * float(np.max(np.abs(brownian)))
    return DriverDistance(epsilon, interpolation_part, kappa_part)


# --- hyperbolic geometry -------------------------------------------------------------------


def hyperbolic_distance(z: PointLike, w: PointLike) -> float:
    """
    Hyperbolic distance in the upper half-plane.

    arccosh(1 + |z - w|^2 / (2 Im z Im w)), evaluated as 2 asinh(|z - w| / (2 sqrt(Im z Im w)))
    which keeps precision for nearby points.
    """
    a, b = as_complex(z), as_complex(w)
    if not (a.imag > 0 and b.imag > 0):
        raise InvalidArgumentError("hyperbolic distance needs points strictly inside the half-plane")
    return 2.0 * math.asinh(abs(a - b) / (2.0 * math.sqrt(a.imag * b.imag)))


def hyperbolic_step_bound(z: PointLike, w: PointLike, deriv: complex) -> float:
    """Bound 2 Im z |f'(z)| exp(4 d_hyp(z, w)) on |f(z) - f(w)| for conformal f on the half-plane."""
    a = as_complex(z)
    return 2.0 * a.imag * abs(deriv) * math.exp(4.0 * hyperbolic_distance(z, w))


# --- closeness of backward flows ------------------------------------------------------------


def lemma23_bound(
    eps: float, T: float, y: float, re_offset: float, deriv1: float, deriv2: float
) -> float:
    """
    Closeness bound for two backward flows started at the same height.

    |re_offset| I/y + eps exp[1/2 sqrt(L1 L2) + log log(I/y)] with I = sqrt(4T + y^2),
    L_k = max(log(I |deriv_k| / y), 1) and the inner log of the log-log term clamped at e.

    Args:
        eps: sup distance between the two drivers on [0, T]
        T: Flow time
        y: Common imaginary part of the starting points
        re_offset: Difference of the starting points' real parts
        deriv1: |h'^(1)_T(u1)|
        deriv2: |h'^(2)_T(u2)|
    """
    if not y > 0:
        raise InvalidArgumentError(f"height must be > 0, got {y}")
    if T < 0 or eps < 0:
        raise InvalidArgumentError("T and eps must be >= 0")
    if not (abs(deriv1) > 0 and abs(deriv2) > 0):
        raise InvalidArgumentError("derivative magnitudes must be > 0")

    ratio = math.sqrt(4.0 * T + y * y) / y
    l1 = max(math.log(ratio * abs(deriv1)), 1.0)
    l2 = max(math.log(ratio * abs(deriv2)), 1.0)
    loglog = math.log(max(math.log(ratio), 1.0))
    return abs(re_offset) * ratio + eps * math.exp(0.5 * math.sqrt(l1 * l2) + loglog)


@dataclass(frozen=True)
class LemmaCheck:
    """Measured distance of two backward flows next to the closeness bound."""
    measured: float
    bound: float
    eps: float
    re_offset: float
    deriv1: float
    deriv2: float

    @property
    def holds(self) -> bool:
        return self.measured <= self.bound


def lemma23_check(
    d1: DriverPath,
    d2: DriverPath,
    u1: PointLike,
    u2: PointLike,
    T: float,
    settings: Optional[LabSettings] = None,
) -> LemmaCheck:
    """
    Run both backward flows to time T and evaluate the closeness bound.

    Raises:
        InvalidArgumentError: The starting points have different heights
    """
    a, b = as_complex(u1), as_complex(u2)
    if not math.isclose(a.imag, b.imag, rel_tol=1e-12, abs_tol=1e-15):
        raise InvalidArgumentError("starting points must share their imaginary part")
    if d1.times.shape != d2.times.shape:
        raise MeshMismatchError("drivers live on different meshes")

    window = d1.times <= T * (1 + 1e-12)
    eps = float(np.max(np.abs(d1.values[window] - d2.values[window])))

    flow1 = backward_flow(d1, a, T, settings, derivative=True, dense=False)
    flow2 = backward_flow(d2, b, T, settings, derivative=True, dense=False)
    measured = abs(complex(flow1.h[-1]) - complex(flow2.h[-1]))
    deriv1 = abs(complex(flow1.derivative[-1]))
    deriv2 = abs(complex(flow2.derivative[-1]))
    bound = lemma23_bound(eps, T, a.imag, a.real - b.real, deriv1, deriv2)
    return LemmaCheck(measured, bound, eps, a.real - b.real, deriv1, deriv2)


# --- error terms ---------------------------------------------------------------------------


def psi_phi_terms(
    kappa1: float,
    kappa2: float,
    n: int,
    beta1: float,
    phi: Callable[[float], float] = math.log,
    c_hat: float = 1.0,
    c: float = 1.0,
) -> Tuple[float, float]:
    """
    The two kappa-gap error terms at resolution n.

    Psi = |sqrt(k1) - sqrt(k2)| c_hat 2 sqrt(2) sqrt(n) phi(n)
    Phi = c |sqrt(k1) - sqrt(k2)| exp[sqrt((1 + beta1)/2) log(c phi(n) sqrt(n))
                                      + log log(2 sqrt(2n) phi(n))]
    """
    if n < 2:
        raise InvalidArgumentError(f"n must be >= 2, got {n}")
    gap = abs(math.sqrt(kappa1) - math.sqrt(kappa2))
    phi_n = phi(n)
    psi = gap * c_hat * 2.0 * math.sqrt(2.0) * math.sqrt(n) * phi_n
    exponent = (
        math.sqrt((1.0 + beta1) / 2.0) * math.log(c * phi_n * math.sqrt(n))
        + math.log(math.log(2.0 * math.sqrt(2.0 * n) * phi_n))
    )
    return psi, c * gap * math.exp(exponent)


# --- derivative exponent ------------------------------------------------------------------


@dataclass(frozen=True)
class BetaEstimate:
    """Fit of sup |f'_t(iy)| <= c0 y^-beta over a height grid."""
    beta: float
    c0: float
    y_min: float
    y_max: float
    residual: float
    ys: np.ndarray = field(repr=False)
    sups: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "beta": self.beta,
            "c0": self.c0,
            "y_min": self.y_min,
            "y_max": self.y_max,
            "residual": self.residual,
            "ys": [float(v) for v in self.ys],
            "sups": [float(v) for v in self.sups],
        }


def fit_derivative_exponent(ys: Sequence[float], sups: Sequence[float]) -> BetaEstimate:
    """Least-squares slope of log sup against log(1/y)."""
    ys_arr = np.asarray(ys, dtype=float)
    sups_arr = np.asarray(sups, dtype=float)
    if np.unique(ys_arr).size < 2:
        raise InvalidArgumentError("derivative fit needs at least two distinct heights")
    x = np.log(1.0 / ys_arr)
    coeffs, residuals, *_ = np.polyfit(x, np.log(sups_arr), 1, full=True)
    beta, log_c0 = coeffs
    return BetaEstimate(
        beta=float(beta),
        c0=float(math.exp(log_c0)),
        y_min=float(ys_arr.min()),
        y_max=float(ys_arr.max()),
        residual=float(residuals[0]) if residuals.size else 0.0,
        ys=ys_arr,
        sups=sups_arr,
    )


def estimate_beta(
    b: BrownianSample,
    kappa_range: Sequence[float],
    t_grid: Sequence[float],
    y_grid: Sequence[float],
    n: int = 256,
) -> BetaEstimate:
    """
    Estimate the derivative exponent from sup over (t, kappa) of |f'_t(iy)|.

    f_t(w) = g_t^{-1}(w + lambda(t)) for the square-root interpolation at resolution n.

    Args:
        b: Brownian sample shared by all kappa
        kappa_range: kappa values inside (0, 8/3)
        t_grid: Times in [0, T]
        y_grid: Heights in (0, 1]
        n: Interpolation resolution
    """
    ys = np.asarray(y_grid, dtype=float)
    if np.unique(ys).size < 2:
        raise InvalidArgumentError("y grid needs at least two distinct heights")
    if np.any(ys <= 0) or np.any(ys > 1):
        raise InvalidArgumentError("heights must lie in (0, 1]")
    for kappa in kappa_range:
        check_kappa_regime(kappa)

    t_arr = np.asarray(t_grid, dtype=float)
    sups = np.zeros_like(ys)
    for kappa in kappa_range:
        d = sqrt_interpolate(scale_driver(b, kappa), n)
        for i, y in enumerate(ys):
            _, deriv = chain_at_times(d, t_arr, y, derivative=True)
            sups[i] = max(sups[i], float(np.max(np.abs(deriv))))
    estimate = fit_derivative_exponent(ys, sups)
    logger.info("beta estimate %.4f (c0=%.3g) over kappa in %s", estimate.beta, estimate.c0, list(kappa_range))
    return estimate


# --- rates ---------------------------------------------------------------------------------


def theoretical_rate(beta: float) -> float:
    """Decay exponent 1/2 (1 - sqrt((1 + beta)/2)) of the trace approximation error."""
    return 0.5 * (1.0 - math.sqrt((1.0 + beta) / 2.0))


@dataclass(frozen=True)
class RateFit:
    """Log-log fit of distances against resolution."""
    slope: float
    intercept: float
    ns: np.ndarray
    dists: np.ndarray
    excluded: List[int]
    theoretical: Optional[float] = None   # -theoretical_rate(beta), for display only


def rate_fit(ns: Sequence[int], dists: Sequence[float], beta: Optional[float] = None) -> RateFit:
    """
    Fit log dist = slope log n + intercept.

    Points with nonpositive distance are excluded and listed in the result.

    Raises:
        InvalidArgumentError: Fewer than four usable points
    """
    ns_arr = np.asarray(ns, dtype=float)
    d_arr = np.asarray(dists, dtype=float)
    if ns_arr.shape != d_arr.shape:
        raise InvalidArgumentError("resolutions and distances differ in length")
    keep = d_arr > 0
    excluded = [int(v) for v in ns_arr[~keep]]
    if excluded:
        logger.warning("rate fit excludes resolutions with zero distance: %s", excluded)
    if int(keep.sum()) < 4:
        raise InvalidArgumentError("rate fit needs at least four resolutions with positive distance")
    slope, intercept = np.polyfit(np.log(ns_arr[keep]), np.log(d_arr[keep]), 1)
    return RateFit(
        slope=float(slope),
        intercept=float(intercept),
        ns=ns_arr[keep],
        dists=d_arr[keep],
        excluded=excluded,
        theoretical=None if beta is None else -theoretical_rate(beta),
    )


@dataclass(frozen=True)
class RefinementStudy:
    """sup_t |gamma^{2n} - gamma^n| over a ladder of resolutions."""
    kappa: float
    seed: int
    ns: List[int]
    dists: List[float]
    fit: Optional[RateFit]


def refinement_study(
    b: BrownianSample,
    kappa: float,
    ns: Sequence[int],
    settings: Optional[LabSettings] = None,
    beta: Optional[float] = None,
) -> RefinementStudy:
    """
    Compare each approximate trace with the one at twice the resolution.

    Both traces are evaluated on the knots and midpoints of the coarser one.
    """
    settings = resolve_settings(settings)
    base = scale_driver(b, kappa)
    dists: List[float] = []
    for n in ns:
        times = default_eval_times(n, b.T)
        coarse = build_trace(sqrt_interpolate(base, n), settings=settings, eval_times=times)
        fine = build_trace(sqrt_interpolate(base, 2 * n), settings=settings, eval_times=times)
        dists.append(sup_distance(coarse, fine))
        logger.info("refinement n=%d: sup distance %.4g", n, dists[-1])
    fit = rate_fit(ns, dists, beta) if len(ns) >= 4 else None
    return RefinementStudy(kappa=kappa, seed=b.seed, ns=list(ns), dists=dists, fit=fit)


# --- mesh choice and the continuity experiment ---------------------------------------------


def choose_mesh(gap_s: float, n_min: int = 32, n_max: int = 2 ** 14) -> int:
    """
    Resolution for a driver gap |sqrt(kappa) - sqrt(kappa_j)|.

    n = clamp(2^ceil(1.5 log2(1/gap_s)), n_min, n_max), so n = o(gap_s^-2) and
    gap_s sqrt(n) log n -> 0. A zero gap returns n_max.
    """
    if gap_s < 0:
        raise InvalidArgumentError(f"gap must be >= 0, got {gap_s}")
    if gap_s == 0:
        return n_max
    exponent = math.ceil(1.5 * math.log2(1.0 / gap_s) - 1e-12)
    return int(min(max(2 ** max(exponent, 0), n_min), n_max))


@dataclass(frozen=True)
class ContinuityRow:
    """One leg kappa_j of the continuity experiment."""
    j: int
    kappa_j: float
    n_j: int
    sup_dist: Optional[float]
    approx_sup_dist: Optional[float]
    eps: Optional[float]
    psi: Optional[float]
    phi: Optional[float]
    n_ref: int = 0
    error: str = ""


CONTINUITY_HEADER = [
    "j", "kappa_j", "n_j", "sup_dist", "approx_sup_dist", "eps", "psi", "phi", "n_ref", "error",
]


@dataclass(frozen=True)
class ContinuityReport:
    """Trace distances along a sequence kappa_j -> kappa for one coupled Brownian sample."""
    kappa: float
    kappa_seq: List[float]
    rows: List[ContinuityRow]
    seed: int
    beta: float
    c_hat: float
    c: float

    @property
    def sup_dists(self) -> List[Optional[float]]:
        return [row.sup_dist for row in self.rows]

    @property
    def approx_sup_dists(self) -> List[Optional[float]]:
        return [row.approx_sup_dist for row in self.rows]

    @property
    def n_schedule(self) -> List[int]:
        return [row.n_j for row in self.rows]

    def table(self) -> List[list]:
        return [
            [r.j, r.kappa_j, r.n_j, r.sup_dist, r.approx_sup_dist, r.eps, r.psi, r.phi, r.n_ref, r.error]
            for r in self.rows
        ]


def _continuity_leg(
    b: BrownianSample,
    kappa: float,
    j: int,
    kappa_j: float,
    n_j: int,
    settings: LabSettings,
    beta: float,
    c_hat: float,
    c: float,
) -> ContinuityRow:
    n_ref = min(settings.reference_factor * n_j, b.n)
    try:
        if b.n % n_j != 0:
            raise MeshMismatchError(f"n_j={n_j} does not divide the Brownian resolution {b.n}")
        if n_ref < 16 * n_j:
            logger.warning(
                "leg j=%d: reference resolution %d is below 16 x %d (fine mesh cap)", j, n_ref, n_j
            )
        times = default_eval_times(n_j, b.T)
        base = scale_driver(b, kappa)
        base_j = scale_driver(b, kappa_j)

        approx = build_trace(sqrt_interpolate(base, n_j), settings=settings, eval_times=times)
        approx_j = build_trace(sqrt_interpolate(base_j, n_j), settings=settings, eval_times=times)
        ref = build_trace(sqrt_interpolate(base, n_ref), settings=settings, eval_times=times)
        ref_j = build_trace(sqrt_interpolate(base_j, n_ref), settings=settings, eval_times=times)

        eps = driver_distance(sqrt_interpolate(base_j, n_j), base).epsilon
        psi, phi = psi_phi_terms(kappa, kappa_j, max(n_j, 2), beta, settings.phi, c_hat, c)
        row = ContinuityRow(
            j=j,
            kappa_j=kappa_j,
            n_j=n_j,
            sup_dist=sup_distance(ref, ref_j),
            approx_sup_dist=sup_distance(approx, approx_j),
            eps=eps,
            psi=psi,
            phi=phi,
            n_ref=n_ref,
        )
        logger.info(
            "leg j=%d kappa_j=%g n=%d: sup=%.4g approx=%.4g", j, kappa_j, n_j, row.sup_dist, row.approx_sup_dist
        )
        return row
    except LabError as e:
        logger.error("leg j=%d kappa_j=%g failed: %s", j, kappa_j, e)
        return ContinuityRow(j, kappa_j, n_j, None, None, None, None, None, n_ref, str(e))


def continuity_experiment(
    seed: int,
    kappa: float,
    kappa_seq: Sequence[float],
    schedule: Optional[Sequence[int]] = None,
    settings: Optional[LabSettings] = None,
    beta: Optional[float] = None,
    workers: int = 1,
    brownian: Optional[BrownianSample] = None,
) -> ContinuityReport:
    """
    Coupled kappa-continuity experiment for traces.

    For each kappa_j the drivers sqrt(kappa) B and sqrt(kappa_j) B share one Brownian sample.
    The report holds the reference-trace distance and the distance of the approximate
    traces at n_j, next to eps, Psi and Phi.

    Args:
        seed: Brownian seed
        kappa: Target diffusivity in (0, 8/3)
        kappa_seq: Sequence kappa_j in (0, 8/3)
        schedule: Resolution per leg; chosen with `choose_mesh` when omitted
        settings: Preset (fine resolution, reference factor, constants)
        beta: Exponent used in Phi; defaults to the preset's beta_default
        workers: Legs evaluated concurrently
        brownian: Pre-sampled path to reuse instead of sampling from `seed`

    Returns:
        ContinuityReport; failed legs carry their error message
    """
    settings = resolve_settings(settings)
    check_kappa_regime(kappa)
    if len(kappa_seq) == 0:
        raise InvalidArgumentError("kappa sequence is empty")
    for kappa_j in kappa_seq:
        check_kappa_regime(kappa_j)
    if schedule is not None and len(schedule) != len(kappa_seq):
        raise InvalidArgumentError("schedule and kappa sequence differ in length")

    b = brownian if brownian is not None else sample_brownian(seed, settings.fine_resolution, settings.horizon)
    beta = settings.beta_default if beta is None else beta
    n_max = min(settings.n_max, b.n)
    ns = [
        schedule[i] if schedule is not None
        else choose_mesh(abs(math.sqrt(kappa) - math.sqrt(kappa_j)), settings.n_min, n_max)
        for i, kappa_j in enumerate(kappa_seq)
    ]

    def leg(i: int) -> ContinuityRow:
        return _continuity_leg(
            b, kappa, i + 1, kappa_seq[i], ns[i], settings, beta, settings.c_hat, settings.c_abs
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(leg, range(len(kappa_seq))))
    else:
        rows = [leg(i) for i in range(len(kappa_seq))]

    return ContinuityReport(
        kappa=kappa,
        kappa_seq=list(kappa_seq),
        rows=rows,
        seed=b.seed,
        beta=beta,
        c_hat=settings.c_hat,
        c=settings.c_abs,
    )

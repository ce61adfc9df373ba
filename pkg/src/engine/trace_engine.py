"""
Approximate Loewner traces from square-root chains.
Builds the traces, high-resolution reference traces and the near-tip box diagnostics.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from utils.csv_io import write_csv, write_json

from .conformal_maps import HalfPlanePoint, MapChain, block_map
from .driver_paths import BrownianSample, DriverPath, scale_driver, sqrt_interpolate
from .errors import InvalidArgumentError, MeshMismatchError, NumericalFailure, SingularInputError
from .settings import LabSettings, resolve_settings

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TraceCurve:
    """A time-indexed trace in the closed upper half-plane."""
    times: np.ndarray = field(repr=False)
    points: np.ndarray = field(repr=False)   # complex
    kappa: float
    n: int
    seed: int
    y_tip: float
    chain: Optional[MapChain] = field(default=None, repr=False)
    driver: Optional[DriverPath] = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.times.shape != self.points.shape:
            raise InvalidArgumentError("trace times and points differ in length")
        if not np.all(np.isfinite(self.points)):
            raise NumericalFailure("trace has non-finite points", stage="build_trace")

    def __len__(self) -> int:
        return self.times.size

    def point(self, i: int) -> HalfPlanePoint:
        return HalfPlanePoint.from_complex(complex(self.points[i]))

    def manifest(self) -> Dict[str, object]:
        return {
            "kappa": self.kappa,
            "n": self.n,
            "seed": self.seed,
            "y_tip": self.y_tip,
            "points": int(self.times.size),
        }

    def save(self, csv_path: Path, json_path: Optional[Path] = None) -> None:
        """Write the trace as CSV (t, re, im) and optionally its JSON metadata."""
        write_csv(csv_path, ["t", "re", "im"], zip(self.times, self.points.real, self.points.imag))
        if json_path is not None:
            write_json(json_path, self.manifest())


def default_eval_times(n: int, T: float = 1.0) -> np.ndarray:
    """Coarse knots t_k plus the interval midpoints."""
    return np.linspace(0.0, T, 2 * n + 1)


def sup_distance(a: TraceCurve, b: TraceCurve) -> float:
    """sup_t |a(t) - b(t)| over the common evaluation mesh."""
    if a.times.shape != b.times.shape or not np.allclose(a.times, b.times, rtol=0, atol=1e-12):
        raise MeshMismatchError("traces are evaluated on different meshes")
    return float(np.max(np.abs(a.points - b.points)))


def chain_at_times(
    d: DriverPath,
    times: np.ndarray,
    heights,
    derivative: bool = False,
    start_block: int = 0,
):
    """
    Evaluate g_t^{-1}(lambda(t) + i*height) for many t at once.

    The point at time t in block k passes through the partial block (c_k, t - t_k) and
    then through full blocks k-1, ..., start_block. Times are processed sorted, so each
    full block acts on a contiguous tail of the points.

    Args:
        d: Square-root interpolated driver
        times: Evaluation times in [t_{start_block}, T]
        heights: Tip height(s), broadcast against `times`
        derivative: Also return the chain-rule derivative
        start_block: First block of the composition (later blocks only)

    Returns:
        Complex values in the order of `times`, plus derivatives if requested
    """
    if d.coarse_n is None:
        raise InvalidArgumentError("traces are built from square-root interpolated drivers")
    n = d.coarse_n
    h = d.T / n
    knots = d.knot_values()
    c = np.diff(knots) / math.sqrt(h)

    times = np.asarray(times, dtype=float)
    heights = np.broadcast_to(np.asarray(heights, dtype=float), times.shape)
    order = np.argsort(times, kind="stable")
    t_sorted = times[order]
    y_sorted = heights[order]

    k = np.clip(np.floor(t_sorted / h + 1e-9).astype(int), start_block, n - 1)
    s = np.clip(t_sorted - k * h, 0.0, h)
    tip = knots[k] + c[k] * np.sqrt(s) + 1j * y_sorted

    z, dz = block_map(tip, c[k], s, knots[k])
    for j in range(n - 2, start_block - 1, -1):
        first = int(np.searchsorted(k, j, side="right"))
        if first >= z.size:
            continue
        try:
            z_tail, df = block_map(z[first:], c[j], h, knots[j])
        except SingularInputError as e:
            raise SingularInputError(str(e), stage=j) from e
        z[first:] = z_tail
        if derivative:
            dz[first:] = dz[first:] * df

    out = np.empty_like(z)
    out[order] = z
    if derivative:
        d_out = np.empty_like(dz)
        d_out[order] = dz
        return out, d_out
    return out


def build_trace(
    d: DriverPath,
    y_tip: Optional[float] = None,
    settings: Optional[LabSettings] = None,
    eval_times: Optional[Sequence[float]] = None,
) -> TraceCurve:
    """
    Approximate trace of a square-root interpolated driver.

    Args:
        d: Driver with square-root blocks
        y_tip: Tip height; defaults to y_tip_scale / sqrt(n)
        settings: Retry count and tip scale
        eval_times: Times to evaluate; defaults to knots plus midpoints

    Returns:
        TraceCurve carrying its chain and driver

    Raises:
        NumericalFailure: Evaluation stayed singular after doubling y_tip on every retry
    """
    settings = resolve_settings(settings)
    if d.coarse_n is None:
        raise InvalidArgumentError(
            f"driver of kind {d.kind.value} must be square-root interpolated first"
        )
    n = d.coarse_n
    if y_tip is None:
        y_tip = settings.y_tip_scale / math.sqrt(n)
    if not y_tip > 0:
        raise InvalidArgumentError(f"tip height must be > 0, got {y_tip}")
    times = default_eval_times(n, d.T) if eval_times is None else np.asarray(eval_times, dtype=float)

    y = y_tip
    last_error: Optional[Exception] = None
    for attempt in range(settings.tip_retries + 1):
        try:
            points = chain_at_times(d, times, y)
            if np.all(np.isfinite(points)):
                break
            last_error = NumericalFailure("non-finite trace point")
        except SingularInputError as e:
            last_error = e
        logger.warning("trace evaluation failed at y_tip=%.3g (%s); retrying", y, last_error)
        y *= 2.0
    else:
        raise NumericalFailure(
            f"trace still singular after {settings.tip_retries} retries: {last_error}",
            stage="build_trace",
        )

    logger.debug("built trace n=%d kappa=%g over %d times", n, d.kappa, times.size)
    return TraceCurve(
        times=times,
        points=points,
        kappa=d.kappa,
        n=n,
        seed=d.seed,
        y_tip=y,
        chain=MapChain.from_driver(d),
        driver=d,
    )


def reference_trace(
    b: BrownianSample,
    kappa: float,
    n_ref: int,
    y_tip: Optional[float] = None,
    settings: Optional[LabSettings] = None,
    eval_times: Optional[Sequence[float]] = None,
    comparison_n: Optional[int] = None,
) -> TraceCurve:
    """
    High-resolution stand-in for the true trace of sqrt(kappa) B.

    This is the same pipeline at resolution n_ref, a proxy rather than the exact trace.

    Args:
        comparison_n: Resolution the reference will be compared with; n_ref must be at
            least 16 times larger
    """
    if comparison_n is not None and n_ref < 16 * comparison_n:
        raise InvalidArgumentError(
            f"reference resolution {n_ref} is below 16 x {comparison_n}"
        )
    d = sqrt_interpolate(scale_driver(b, kappa), n_ref)
    return build_trace(d, y_tip=y_tip, settings=settings, eval_times=eval_times)


def trace_angle(trace: TraceCurve) -> float:
    """
    Angle (radians) of the best straight line through the trace's base point.

    The direction is the principal axis of the points relative to lambda(0).
    """
    base = trace.driver.value_at(0.0) if trace.driver is not None else trace.points[0].real
    rel = trace.points - base
    xy = np.column_stack((rel.real, rel.imag))
    _, _, vt = np.linalg.svd(xy, full_matrices=False)
    direction = vt[0]
    if direction[1] < 0:
        direction = -direction
    return float(math.atan2(direction[1], direction[0]))


@dataclass(frozen=True)
class TipBox:
    """The box A = {|x| <= phi/sqrt(n), 1/(sqrt(n) phi) <= y <= c/sqrt(n)}."""
    n: int
    c: float
    phi_n: float

    @property
    def half_width(self) -> float:
        return self.phi_n / math.sqrt(self.n)

    @property
    def y_low(self) -> float:
        return 1.0 / (math.sqrt(self.n) * self.phi_n)

    @property
    def y_high(self) -> float:
        return self.c / math.sqrt(self.n)

    @property
    def degenerate(self) -> bool:
        """Empty when phi(n) < 1/c."""
        return self.y_low > self.y_high

    def contains(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=complex)
        return (
            (np.abs(z.real) <= self.half_width)
            & (z.imag >= self.y_low)
            & (z.imag <= self.y_high)
        )


@dataclass(frozen=True)
class TipBoxReport:
    """Result of a box membership check around knot k."""
    k: int
    n: int
    degenerate: bool
    found: bool
    witness_s: Optional[float]
    all_in_window: bool
    s_values: np.ndarray = field(repr=False)
    points: np.ndarray = field(repr=False)


def tip_box_check(
    trace: TraceCurve, k: int, box: TipBox, samples: int = 64
) -> TipBoxReport:
    """
    Check the mapped-forward curve gamma_k(s) = g_{t_k}(gamma(t_k + s)) - lambda(t_k) against a box.

    The window s in [0, 2T/n] is sampled on `samples` + 1 points. The report records the
    first s landing in the box and whether every sampled r in [T/n, 2T/n] does.
    """
    if trace.driver is None or trace.driver.coarse_n is None:
        raise InvalidArgumentError("box checks need a trace built from a square-root driver")
    if not 0 <= k <= box.n - 2:
        raise InvalidArgumentError(f"knot index {k} outside [0, {box.n - 2}]")
    d = trace.driver
    if d.coarse_n % box.n != 0:
        raise MeshMismatchError(f"trace resolution {d.coarse_n} is not a multiple of box scale {box.n}")

    T = d.T
    t_k = k * T / box.n
    s_values = np.linspace(0.0, 2.0 * T / box.n, samples + 1)
    start_block = k * (d.coarse_n // box.n)
    mapped = chain_at_times(d, t_k + s_values, trace.y_tip, start_block=start_block)
    points = mapped - d.value_at(t_k)

    if box.degenerate:
        logger.info("box n=%d c=%g phi=%g is empty", box.n, box.c, box.phi_n)
        return TipBoxReport(k, box.n, True, False, None, False, s_values, points)

    inside = box.contains(points)
    window = s_values >= T / box.n - 1e-15
    hits = np.flatnonzero(inside)
    witness = float(s_values[hits[0]]) if hits.size else None
    return TipBoxReport(
        k=k,
        n=box.n,
        degenerate=False,
        found=witness is not None,
        witness_s=witness,
        all_in_window=bool(np.all(inside[window])),
        s_values=s_values,
        points=points,
    )


@dataclass(frozen=True)
class ModulusScan:
    """Empirical modulus sup_{|t-s| <= y^2} |gamma(t) - gamma(s)| against y."""
    ys: np.ndarray
    sups: np.ndarray
    exponent: float      # fitted slope of log sup against log y
    beta: float
    C: float             # smallest C with sup <= C y^(1 - beta) on the scan


def modulus_scan(trace: TraceCurve, ys: Sequence[float], beta: float = 0.0) -> ModulusScan:
    """
    Scan the trace's modulus of continuity at time separations y^2.

    Args:
        trace: Trace on a uniform time mesh
        ys: Heights; each y^2 must cover at least one mesh step
        beta: Exponent in the bound C y^(1 - beta)
    """
    ys_arr = np.asarray(ys, dtype=float)
    if ys_arr.size < 2:
        raise InvalidArgumentError("modulus scan needs at least two heights")
    dt = float(trace.times[1] - trace.times[0])
    sups = np.empty_like(ys_arr)
    for i, y in enumerate(ys_arr):
        lag = int(math.floor(y * y / dt + 1e-9))
        if lag < 1:
            raise InvalidArgumentError(f"y={y} resolves no mesh step (dt={dt:.3g})")
        lag = min(lag, trace.times.size - 1)
        best = 0.0
        for offset in range(1, lag + 1):
            diff = np.abs(trace.points[offset:] - trace.points[:-offset])
            best = max(best, float(diff.max()))
        sups[i] = best
    slope, _ = np.polyfit(np.log(ys_arr), np.log(sups), 1)
    C = float(np.max(sups / ys_arr ** (1.0 - beta)))
    return ModulusScan(ys=ys_arr, sups=sups, exponent=float(slope), beta=beta, C=C)


def trace_lengths(trace: TraceCurve) -> Tuple[np.ndarray, np.ndarray]:
    """Distances |gamma(t) - lambda(0)| for t > 0, paired with t."""
    base = trace.driver.value_at(0.0) if trace.driver is not None else 0.0
    mask = trace.times > 0
    return trace.times[mask], np.abs(trace.points[mask] - base)

"""
Driving functions for the Loewner laboratory.
Samples Brownian paths coupled across kappa, builds square-root interpolations and
measures moduli of continuity.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, Optional, Union

import numpy as np
from scipy.ndimage import maximum_filter1d, minimum_filter1d

from utils.csv_io import write_csv, write_json

from .errors import InvalidArgumentError, MeshMismatchError

logger = logging.getLogger(__name__)

ArrayOrFloat = Union[float, np.ndarray]


class DriverKind(Enum):
    """How a driver's values were produced."""
    RAW_BROWNIAN = "raw-brownian"
    SQRT_INTERPOLATED = "sqrt-interpolated"
    ANALYTIC = "analytic"


def _frozen(values: np.ndarray) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class BrownianSample:
    """
    Standard Brownian motion on a uniform mesh of [0, T].

    The increments come from numpy's PCG64 generator and its ziggurat normal sampler, so
    the same seed reproduces the same path bit for bit on every platform.
    """
    seed: int
    T: float
    n: int
    increments: np.ndarray = field(repr=False)

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n + 1)

    @property
    def values(self) -> np.ndarray:
        """Path values B_{t_k}, k = 0..n, with B_0 = 0."""
        return np.concatenate(([0.0], np.cumsum(self.increments)))

    @property
    def dt(self) -> float:
        return self.T / self.n


@dataclass(frozen=True)
class DriverPath:
    """
    A real driver sampled on the uniform mesh t_k = k T / n.

    `coarse_n` is set for square-root interpolated drivers: between the coarse knots the
    driver follows the square-root formula exactly, which is what `value_at` evaluates.
    """
    times: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    seed: int
    kappa: float
    kind: DriverKind
    coarse_n: Optional[int] = None

    def __post_init__(self) -> None:
        times = _frozen(self.times)
        values = _frozen(self.values)
        if times.ndim != 1 or times.size < 2:
            raise InvalidArgumentError("a driver needs at least two mesh points")
        if values.shape != times.shape:
            raise InvalidArgumentError(
                f"values ({values.size}) and times ({times.size}) differ in length"
            )
        steps = np.diff(times)
        if np.any(steps <= 0):
            raise InvalidArgumentError("driver times must be strictly increasing")
        if not np.allclose(steps, steps[0], rtol=1e-9, atol=0.0):
            raise InvalidArgumentError("driver times must be uniformly spaced")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        """Fine resolution (number of mesh intervals)."""
        return self.times.size - 1

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def dt(self) -> float:
        return self.T / self.n

    def knot_values(self) -> np.ndarray:
        """Driver values at the coarse knots (all mesh points if not interpolated)."""
        if self.coarse_n is None:
            return self.values
        return self.values[:: self.n // self.coarse_n]

    def value_at(self, t: ArrayOrFloat) -> ArrayOrFloat:
        """
        Evaluate the driver between mesh points.

        Square-root interpolated and analytic c*sqrt(t) drivers use the exact
        square-root formula between knots; raw drivers are linearly interpolated.
        """
        t_arr = np.clip(np.asarray(t, dtype=float), 0.0, self.T)
        if self.coarse_n is None:
            out = np.interp(t_arr, self.times, self.values)
        else:
            knots = self.knot_values()
            h = self.T / self.coarse_n
            k = np.minimum(np.floor(t_arr / h).astype(int), self.coarse_n - 1)
            s = np.maximum(t_arr - k * h, 0.0)
            c = (knots[k + 1] - knots[k]) / math.sqrt(h)
            out = c * np.sqrt(s) + knots[k]
        return float(out) if np.ndim(out) == 0 else out

    def manifest(self) -> Dict[str, object]:
        """Provenance record written next to the CSV."""
        return {
            "seed": self.seed,
            "kappa": self.kappa,
            "n": self.n,
            "T": self.T,
            "kind": self.kind.value,
            "coarse_n": self.coarse_n,
        }

    def save(self, csv_path: Path, json_path: Path) -> None:
        """Write the driver as CSV (t, value) and its JSON manifest."""
        write_csv(csv_path, ["t", "value"], zip(self.times, self.values))
        write_json(json_path, self.manifest())


def sample_brownian(seed: int, n: int, T: float = 1.0) -> BrownianSample:
    """
    Sample a standard Brownian path on n uniform steps of [0, T].

    Args:
        seed: Generator seed; equal seeds give bit-identical increments
        n: Number of increments (>= 1)
        T: Time horizon (> 0)

    Returns:
        BrownianSample with N(0, T/n) increments
    """
    if n < 1:
        raise InvalidArgumentError(f"resolution must be >= 1, got {n}")
    if not T > 0:
        raise InvalidArgumentError(f"horizon must be > 0, got {T}")

    rng = np.random.Generator(np.random.PCG64(seed))
    increments = rng.standard_normal(n) * math.sqrt(T / n)
    increments.setflags(write=False)
    logger.debug("sampled Brownian path seed=%d n=%d T=%g", seed, n, T)
    return BrownianSample(seed=seed, T=T, n=n, increments=increments)


def scale_driver(b: BrownianSample, kappa: float) -> DriverPath:
    """Return the coupled driver sqrt(kappa) * B on the sample's mesh."""
    if kappa < 0:
        raise InvalidArgumentError(f"kappa must be >= 0, got {kappa}")
    return DriverPath(
        times=b.times,
        values=math.sqrt(kappa) * b.values,
        seed=b.seed,
        kappa=kappa,
        kind=DriverKind.RAW_BROWNIAN,
    )


def analytic_driver(
    func: Callable[[np.ndarray], np.ndarray], n: int, T: float = 1.0, kappa: float = 0.0
) -> DriverPath:
    """Sample a deterministic driver on n uniform steps (linear between mesh points)."""
    if n < 1:
        raise InvalidArgumentError(f"resolution must be >= 1, got {n}")
    times = np.linspace(0.0, T, n + 1)
    return DriverPath(
        times=times,
        values=np.asarray(func(times), dtype=float),
        seed=0,
        kappa=kappa,
        kind=DriverKind.ANALYTIC,
    )


def sqrt_driver(c: float, n: int = 1024, T: float = 1.0, shift: float = 0.0) -> DriverPath:
    """
    The driver shift + c*sqrt(t) sampled on n steps.

    It is its own square-root interpolation with a single block, so `value_at` is exact
    at every t.
    """
    d = analytic_driver(lambda t: shift + c * np.sqrt(t), n, T)
    return DriverPath(
        times=d.times,
        values=d.values,
        seed=0,
        kappa=0.0,
        kind=DriverKind.ANALYTIC,
        coarse_n=1,
    )


def sqrt_interpolate(d: DriverPath, n: int) -> DriverPath:
    """
    Piecewise square-root interpolation of a driver through n coarse knots.

    On [t_k, t_{k+1}] the output is sqrt(n/T) (d(t_{k+1}) - d(t_k)) sqrt(t - t_k) + d(t_k),
    sampled on the fine mesh of `d`.

    Args:
        d: Source driver
        n: Number of coarse intervals; must divide d's resolution

    Returns:
        DriverPath of kind sqrt-interpolated agreeing with d at every knot
    """
    if n < 1:
        raise InvalidArgumentError(f"coarse resolution must be >= 1, got {n}")
    if d.n % n != 0:
        raise MeshMismatchError(f"coarse resolution {n} does not divide fine resolution {d.n}")

    r = d.n // n
    knots = d.values[::r]
    h = d.T / n
    c = (knots[1:] - knots[:-1]) / math.sqrt(h)

    # offsets s = t - t_k of the fine points inside each block, block-major
    s = d.times[:r][None, :] - d.times[0]
    block = c[:, None] * np.sqrt(s) + knots[:-1, None]
    values = np.concatenate((block.ravel(), knots[-1:]))
    values[::r] = knots

    return DriverPath(
        times=d.times,
        values=values,
        seed=d.seed,
        kappa=d.kappa,
        kind=DriverKind.SQRT_INTERPOLATED,
        coarse_n=n,
    )


def _lag(d: DriverPath, delta: float) -> int:
    return int(math.floor(delta / d.dt + 1e-9))


def osc(d: DriverPath, delta: float) -> float:
    """
    Discrete oscillation sup{|d(t) - d(s)| : |t - s| <= delta} over mesh pairs.

    Computed as the largest range over sliding windows of delta/dt + 1 mesh points.
    """
    if not delta > 0:
        raise InvalidArgumentError(f"delta must be > 0, got {delta}")

    lag = _lag(d, delta)
    if lag <= 0:
        return 0.0
    if lag >= d.n:
        return float(np.max(d.values) - np.min(d.values))

    size = lag + 1
    highs = maximum_filter1d(d.values, size=size, mode="nearest")
    lows = minimum_filter1d(d.values, size=size, mode="nearest")
    return float(np.max(highs - lows))


def osc_ratio(d: DriverPath, delta: float) -> float:
    """osc(d, delta) / sqrt(delta log(1/delta)), the Brownian oscillation calibration."""
    if not 0 < delta < 1:
        raise InvalidArgumentError(f"delta must lie in (0, 1), got {delta}")
    return osc(d, delta) / math.sqrt(delta * math.log(1.0 / delta))


def subpower(n: float, q: float = 1.0) -> float:
    """The default subpower function phi(n) = (log n)^q."""
    return math.log(n) ** q

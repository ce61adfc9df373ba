"""
Explicit slit maps and Loewner ODE integrators.

A square-root driver shift + c*sqrt(s) on [0, tau] grows a straight slit from `shift` at
angle alpha*pi. Its inverse map is

    f(w) = shift + (z - x1)^(1 - alpha) * (z - x2)^alpha,   z = w - shift,

with branch points x1 = -2 sqrt(tau alpha / (1 - alpha)) and x2 = 2 sqrt(tau (1 - alpha) / alpha).
Then f(w) = w - 2 tau / (w - shift) + O(w^-2) at infinity, and the slit tip is the image of
shift + c sqrt(tau). The ODE integrators below are the independent oracles for these maps.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.integrate import solve_ivp

from .driver_paths import DriverPath, sqrt_driver
from .errors import (
    InvalidArgumentError,
    MeshMismatchError,
    NumericalFailure,
    SingularInputError,
    SwallowedPointError,
)
from .settings import LabSettings, resolve_settings

logger = logging.getLogger(__name__)

# Imaginary parts above -IM_SLACK are treated as roundoff and clamped to the real axis.
IM_SLACK = 1e-12


@dataclass(frozen=True)
class HalfPlanePoint:
    """A point of the closed upper half-plane."""
    re: float
    im: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.re) and math.isfinite(self.im)):
            raise InvalidArgumentError(f"non-finite point ({self.re}, {self.im})")
        if self.im < 0:
            if self.im < -IM_SLACK:
                raise InvalidArgumentError(f"point {self.re}{self.im:+}i is below the real axis")
            object.__setattr__(self, "im", 0.0)

    @classmethod
    def from_complex(cls, z: complex) -> "HalfPlanePoint":
        return cls(float(z.real), float(z.imag))

    def to_complex(self) -> complex:
        return complex(self.re, self.im)

    def __complex__(self) -> complex:
        return self.to_complex()


PointLike = Union[HalfPlanePoint, complex, float]


def as_complex(w: PointLike) -> complex:
    """Coerce a point argument to a Python complex."""
    if isinstance(w, HalfPlanePoint):
        return w.to_complex()
    return complex(w)


def slit_angle(c: float) -> float:
    """
    Slit angle (in units of pi) grown by the driver c*sqrt(t).

    Args:
        c: Square-root coefficient

    Returns:
        alpha = 1/2 - (c/2) / sqrt(16 + c^2), in (0, 1)
    """
    return 0.5 - 0.5 * c / math.sqrt(16.0 + c * c)


@dataclass(frozen=True)
class SlitMapParams:
    """One square-root block: driver shift + c*sqrt(s) for s in [0, tau]."""
    c: float
    tau: float
    shift: float = 0.0

    def __post_init__(self) -> None:
        if not self.tau >= 0:
            raise InvalidArgumentError(f"block duration must be >= 0, got {self.tau}")

    @property
    def alpha(self) -> float:
        return slit_angle(self.c)

    @property
    def capacity(self) -> float:
        return 2.0 * self.tau

    def branch_points(self) -> Tuple[float, float]:
        """Real preimages x1 < 0 < x2 of the slit base, relative to `shift`."""
        x1, x2 = _branch_points(self.alpha, self.tau)
        return float(x1), float(x2)

    def tip_preimage(self) -> float:
        """Point of the real axis mapped to the slit tip (the driver value at tau)."""
        return self.shift + self.c * math.sqrt(self.tau)

    def to_dict(self) -> Dict[str, float]:
        return {"c": self.c, "tau": self.tau, "shift": self.shift}

    @classmethod
    def from_dict(cls, data: Dict[str, float]) -> "SlitMapParams":
        return cls(c=float(data["c"]), tau=float(data["tau"]), shift=float(data.get("shift", 0.0)))


def _branch_points(alpha, tau):
    x1 = -2.0 * np.sqrt(np.multiply(tau, alpha) / (1.0 - alpha))
    x2 = 2.0 * np.sqrt(np.multiply(tau, 1.0 - alpha) / alpha)
    return x1, x2


def _upper(z: np.ndarray) -> np.ndarray:
    """Force signed zeros of the imaginary part to +0 so the principal logs take arg in [0, pi]."""
    return z.real + 1j * np.abs(z.imag)


def block_map(w, c, tau, shift) -> Tuple[np.ndarray, np.ndarray]:
    """
    Vectorised inverse block map and its derivative.

    All arguments broadcast against each other, so every point may carry its own block.

    Returns:
        (f(w), f'(w)) as complex arrays

    Raises:
        SingularInputError: A point sits on a branch point of its block
    """
    w = np.asarray(w, dtype=complex)
    c = np.asarray(c, dtype=float)
    tau = np.asarray(tau, dtype=float)
    shift = np.asarray(shift, dtype=float)

    alpha = 0.5 - 0.5 * c / np.sqrt(16.0 + c * c)
    x1, x2 = _branch_points(alpha, tau)
    z = _upper(w - shift)
    a = z - x1
    b = z - x2

    empty = tau == 0
    hit = ((a == 0) | (b == 0)) & ~empty
    if np.any(hit):
        bad = complex(np.broadcast_to(w, hit.shape)[hit].ravel()[0])
        raise SingularInputError(f"evaluation at a branch point ({bad})")

    with np.errstate(divide="ignore", invalid="ignore"):
        f = np.exp((1.0 - alpha) * np.log(a) + alpha * np.log(b))
        df = f * ((1.0 - alpha) / a + alpha / b)
    f = np.where(empty, z, f)
    df = np.where(empty, 1.0 + 0j, df)

    out = f + shift
    out = out.real + 1j * np.maximum(out.imag, 0.0)
    return out, df


def slit_map_inverse(p: SlitMapParams, w: PointLike) -> HalfPlanePoint:
    """
    Evaluate g_tau^{-1} for one square-root block.

    Args:
        p: Block parameters
        w: Point of the closed upper half-plane, off the branch points

    Returns:
        Image point on the half-plane minus the slit
    """
    z = as_complex(w)
    if z.imag < 0:
        raise InvalidArgumentError(f"point {z} is below the real axis")
    value, _ = block_map(z, p.c, p.tau, p.shift)
    return HalfPlanePoint.from_complex(complex(value))


@dataclass(frozen=True)
class MapChain:
    """
    Blocks of consecutive square-root driver pieces, in time order.

    g_t^{-1} is the composition of the block inverses applied last block first.
    """
    blocks: Tuple[SlitMapParams, ...] = ()

    def __len__(self) -> int:
        return len(self.blocks)

    @property
    def duration(self) -> float:
        return float(sum(b.tau for b in self.blocks))

    @property
    def capacity(self) -> float:
        return 2.0 * self.duration

    def arrays(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Block parameters as (c, tau, shift) arrays."""
        if not self.blocks:
            empty = np.zeros(0)
            return empty, empty, empty
        c, tau, shift = zip(*((b.c, b.tau, b.shift) for b in self.blocks))
        return np.array(c), np.array(tau), np.array(shift)

    def prefix(self, k: int) -> "MapChain":
        """Chain of the first k blocks."""
        return MapChain(self.blocks[:k])

    def suffix(self, k: int) -> "MapChain":
        """Chain of the blocks from index k on."""
        return MapChain(self.blocks[k:])

    def to_json(self) -> List[Dict[str, float]]:
        return [b.to_dict() for b in self.blocks]

    @classmethod
    def from_json(cls, data: Iterable[Dict[str, float]]) -> "MapChain":
        return cls(tuple(SlitMapParams.from_dict(item) for item in data))

    @classmethod
    def from_driver(cls, d: DriverPath) -> "MapChain":
        """
        Chain of a square-root interpolated driver, one block per coarse interval.

        Raises:
            MeshMismatchError: The driver is not square-root interpolated
        """
        if d.coarse_n is None:
            raise MeshMismatchError(
                f"driver of kind {d.kind.value} has no square-root blocks; interpolate it first"
            )
        knots = d.knot_values()
        h = d.T / d.coarse_n
        c = np.diff(knots) / math.sqrt(h)
        return cls(tuple(SlitMapParams(float(ck), h, float(sk)) for ck, sk in zip(c, knots[:-1])))


def evaluate_chain(chain: MapChain, w, derivative: bool = False):
    """
    Vectorised composition of a chain over an array of points.

    Args:
        chain: Blocks to compose
        w: Points (any shape)
        derivative: Also return the chain-rule derivative

    Returns:
        Mapped points, or (points, derivatives) if `derivative` is set

    Raises:
        SingularInputError: Annotated with the failing block index
    """
    z = np.asarray(w, dtype=complex).copy()
    dz = np.ones_like(z)
    for index in range(len(chain) - 1, -1, -1):
        block = chain.blocks[index]
        try:
            z, df = block_map(z, block.c, block.tau, block.shift)
        except SingularInputError as e:
            raise SingularInputError(str(e), stage=index) from e
        if derivative:
            dz = dz * df
    if not np.all(np.isfinite(z)):
        raise SingularInputError("non-finite value in composition")
    if derivative:
        return z, dz
    return z


def compose_chain(chain: MapChain, w: PointLike) -> HalfPlanePoint:
    """Apply the chain's inverse maps to one point, last block first."""
    z = as_complex(w)
    if z.imag < 0:
        raise InvalidArgumentError(f"point {z} is below the real axis")
    return HalfPlanePoint.from_complex(complex(evaluate_chain(chain, z)))


def map_derivative(chain: MapChain, w: PointLike) -> complex:
    """
    Derivative of the composed inverse map at an interior point.

    Raises:
        InvalidArgumentError: w is not strictly inside the half-plane
    """
    z = as_complex(w)
    if not z.imag > 0:
        raise InvalidArgumentError(f"derivative needs Im w > 0, got {z}")
    _, dz = evaluate_chain(chain, z, derivative=True)
    return complex(dz)


# --- ODE oracles ---------------------------------------------------------------------------


def _breakpoints(d: DriverPath, t: float) -> np.ndarray:
    """Integration segment ends on [0, t]: the coarse knots for square-root drivers."""
    if d.coarse_n is None:
        return np.array([0.0, t])
    knots = np.linspace(0.0, d.T, d.coarse_n + 1)
    inside = knots[(knots > 0.0) & (knots < t)]
    return np.concatenate(([0.0], inside, [t]))


def _max_step(d: DriverPath) -> float:
    return d.dt if d.coarse_n is None else np.inf


def _check_time(d: DriverPath, t: float) -> None:
    if t < 0:
        raise InvalidArgumentError(f"time must be >= 0, got {t}")
    if t > d.T * (1 + 1e-12):
        raise InvalidArgumentError(f"time {t} exceeds the driver horizon {d.T}")


def _integrate(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    y0: np.ndarray,
    breakpoints: Sequence[float],
    settings: LabSettings,
    max_step: float,
    stage: str,
    events: Optional[Callable] = None,
    dense: bool = False,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Run RK45 segment by segment between breakpoints.

    Returns:
        (times, states) with states of shape (len(y0), len(times))
    """
    times: List[np.ndarray] = [np.array([breakpoints[0]])]
    states: List[np.ndarray] = [np.asarray(y0, dtype=complex).reshape(-1, 1)]
    y = np.asarray(y0, dtype=complex)
    for a, b in zip(breakpoints[:-1], breakpoints[1:]):
        if b <= a:
            continue
        sol = solve_ivp(
            rhs, (a, b), y,
            method="RK45",
            rtol=settings.ode_rtol,
            atol=settings.ode_atol,
            max_step=max_step,
            events=events,
        )
        if sol.status == 1:
            t_hit = float(sol.t_events[0][0]) if events is not None else float(sol.t[-1])
            raise SwallowedPointError("trajectory reached the driver", t_hit)
        if sol.status != 0:
            raise NumericalFailure(sol.message, stage=stage)
        y = sol.y[:, -1]
        if dense:
            times.append(sol.t[1:])
            states.append(sol.y[:, 1:])
        else:
            times.append(sol.t[-1:])
            states.append(sol.y[:, -1:])
    return np.concatenate(times), np.concatenate(states, axis=1)


def _swallow_event(driver: Callable[[float], float], radius: float):
    def event(s: float, y: np.ndarray) -> float:
        return abs(y[0] - driver(s)) - radius

    event.terminal = True
    event.direction = -1
    return event


def forward_ode(
    d: DriverPath, z: PointLike, t: float, settings: Optional[LabSettings] = None
) -> HalfPlanePoint:
    """
    Integrate the forward Loewner equation dg/dt = 2 / (g - lambda(t)) from g_0 = z.

    Args:
        d: Driver (square-root blocks are integrated block by block with the exact formula)
        z: Starting point
        t: End time
        settings: Tolerances and swallow radius

    Returns:
        g_t(z)

    Raises:
        SwallowedPointError: The trajectory came within the swallow radius of the driver
    """
    settings = resolve_settings(settings)
    _check_time(d, t)
    z0 = as_complex(z)
    if z0.imag < 0:
        raise InvalidArgumentError(f"point {z0} is below the real axis")
    if t == 0:
        return HalfPlanePoint.from_complex(z0)
    if abs(z0 - d.value_at(0.0)) <= settings.swallow_radius:
        raise SwallowedPointError("starting point lies on the driver", 0.0)

    def rhs(s: float, y: np.ndarray) -> np.ndarray:
        return 2.0 / (y - d.value_at(s))

    _, states = _integrate(
        rhs, np.array([z0]), _breakpoints(d, t), settings, _max_step(d), "forward_ode",
        events=_swallow_event(d.value_at, settings.swallow_radius),
    )
    return HalfPlanePoint.from_complex(complex(states[0, -1]))


@dataclass(frozen=True)
class BackwardFlow:
    """Trajectory of the backward Loewner flow from one starting point."""
    times: np.ndarray
    h: np.ndarray            # h_s(z)
    Z: np.ndarray            # h_s(z) - lambda(s)
    derivative: Optional[np.ndarray] = None  # d h_s / dz


def backward_flow(
    d: DriverPath,
    z: PointLike,
    t: float,
    settings: Optional[LabSettings] = None,
    derivative: bool = False,
    dense: bool = True,
) -> BackwardFlow:
    """
    Integrate the backward Loewner equation dh/dt = -2 / (h - lambda(t)) from h_0 = z.

    With `derivative` the variational equation d(h')/dt = 2 h' / (h - lambda)^2 is
    carried along, giving the spatial derivative of h_t at z.

    Raises:
        InvalidArgumentError: z starts on the driver or below the real axis
    """
    settings = resolve_settings(settings)
    _check_time(d, t)
    z0 = as_complex(z)
    if z0.imag < 0:
        raise InvalidArgumentError(f"point {z0} is below the real axis")
    if z0.imag == 0 and abs(z0.real - d.value_at(0.0)) <= settings.swallow_radius:
        raise InvalidArgumentError("backward flow cannot start at the driver's singularity")

    y0 = np.array([z0, 1.0 + 0j]) if derivative else np.array([z0])

    def rhs(s: float, y: np.ndarray) -> np.ndarray:
        gap = y[0] - d.value_at(s)
        if derivative:
            return np.array([-2.0 / gap, 2.0 * y[1] / (gap * gap)])
        return np.array([-2.0 / gap])

    if t == 0:
        times, states = np.array([0.0]), y0.reshape(-1, 1)
    else:
        times, states = _integrate(
            rhs, y0, _breakpoints(d, t), settings, _max_step(d), "backward_ode",
            events=_swallow_event(d.value_at, settings.swallow_radius),
            dense=dense,
        )
    h = states[0]
    Z = h - np.asarray(d.value_at(times))
    return BackwardFlow(
        times=times,
        h=h,
        Z=Z,
        derivative=states[1] if derivative else None,
    )


def backward_ode(
    d: DriverPath, z: PointLike, t: float, settings: Optional[LabSettings] = None
) -> HalfPlanePoint:
    """Endpoint h_t(z) of the backward Loewner flow."""
    flow = backward_flow(d, z, t, settings, dense=False)
    return HalfPlanePoint.from_complex(complex(flow.h[-1]))


def loewner_ode_inverse(
    d: DriverPath, w, t: float, settings: Optional[LabSettings] = None
) -> np.ndarray:
    """
    g_t^{-1}(w) by integrating the backward equation with the time-reversed driver.

    The flow h_s driven by s -> lambda(t - s) satisfies h_t = g_t^{-1}, so all points are
    integrated together as one vector system.

    Args:
        d: Forward driver
        w: Array of points with Im w > 0 (real points off the slit also work)
        t: Time at which g_t^{-1} is wanted

    Returns:
        Complex array of the same shape as w
    """
    settings = resolve_settings(settings)
    _check_time(d, t)
    w_arr = np.asarray(w, dtype=complex)
    if np.any(w_arr.imag < 0):
        raise InvalidArgumentError("points must lie in the closed upper half-plane")
    if t == 0:
        return w_arr.copy()

    def reversed_driver(s: float) -> float:
        return d.value_at(t - s)

    def rhs(s: float, y: np.ndarray) -> np.ndarray:
        return -2.0 / (y - reversed_driver(s))

    forward_breaks = _breakpoints(d, t)
    breaks = np.sort(t - forward_breaks)
    _, states = _integrate(
        rhs, w_arr.ravel(), breaks, settings, _max_step(d), "loewner_ode_inverse"
    )
    out = states[:, -1].reshape(w_arr.shape)
    if not np.all(np.isfinite(out)):
        raise NumericalFailure("non-finite value in the inverse flow", stage="loewner_ode_inverse")
    return out


def block_oracle_error(
    p: SlitMapParams, w, settings: Optional[LabSettings] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Closed-form block map next to its ODE oracle on a grid of points.

    Returns:
        (closed_form, oracle) complex arrays
    """
    w_arr = np.asarray(w, dtype=complex)
    closed, _ = block_map(w_arr, p.c, p.tau, p.shift)
    if p.tau == 0:
        return closed, w_arr.copy()
    driver = sqrt_driver(p.c, n=1, T=p.tau, shift=p.shift)
    oracle = loewner_ode_inverse(driver, w_arr, p.tau, settings)
    logger.debug(
        "block c=%g tau=%g: max oracle deviation %.3e", p.c, p.tau, float(np.max(np.abs(closed - oracle)))
    )
    return closed, oracle

"""
Level-2 rough paths for the backward Loewner equation.

The 2-D path X_t = (t, W_t) with W = sqrt(kappa) B is lifted canonically: between fine mesh
points it is linear, so its iterated integrals are exact sums over linear pieces. Index 0 of
every level is the time component and index 1 the W component; level2[a, b] is the double
integral of dX^a followed by dX^b.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .conformal_maps import PointLike, as_complex
from .driver_paths import BrownianSample, DriverPath, scale_driver
from .errors import InvalidArgumentError, MeshMismatchError, NumericalFailure

logger = logging.getLogger(__name__)

P_MIN, P_MAX = 2.0, 3.0


def check_rough_p(p: float) -> None:
    """Level-2 rough paths need p in (2, 3]."""
    if not P_MIN < p <= P_MAX:
        raise InvalidArgumentError(f"p must lie in (2, 3], got {p}")


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


# --- p-variation ---------------------------------------------------------------------------


def _pvar_dp(costs, m: int) -> float:
    """
    sup over partitions 0 = i_0 < ... < i_r = m of sum cost(i_{l}, i_{l+1}).

    Args:
        costs: costs(j) returns the array of cost(i, j) for i = 0..j-1
        m: Last index
    """
    best = np.zeros(m + 1)
    for j in range(1, m + 1):
        best[j] = np.max(best[:j] + costs(j))
    return float(best[m])


def p_variation(path, p: float) -> float:
    """
    Discrete p-variation of a sampled path, by dynamic programming over mesh indices.

    Args:
        path: Points of shape (m,) (real or complex) or (m, d)
        p: Exponent >= 1

    Returns:
        (sup over partitions of sum |x_{t_{l+1}} - x_{t_l}|^p)^(1/p)
    """
    if p < 1:
        raise InvalidArgumentError(f"p must be >= 1, got {p}")
    x = np.asarray(path)
    if x.shape[0] < 2:
        raise InvalidArgumentError("p-variation needs at least two points")
    if x.ndim == 1:
        x = x[:, None]

    def costs(j: int) -> np.ndarray:
        diff = np.abs(x[j] - x[:j]) if x.shape[1] == 1 else np.linalg.norm(x[j] - x[:j], axis=1)
        return np.ravel(diff) ** p

    return _pvar_dp(costs, x.shape[0] - 1) ** (1.0 / p)


@dataclass(frozen=True)
class ControlFn:
    """The control omega(s, t) = K (t - s)."""
    K: float

    def __post_init__(self) -> None:
        if not self.K > 0:
            raise InvalidArgumentError(f"control constant must be > 0, got {self.K}")

    def __call__(self, s, t):
        return self.K * (np.asarray(t) - np.asarray(s))

    def superadditivity_gap(self, s: float, t: float, u: float) -> float:
        """omega(s, u) - omega(s, t) - omega(t, u); zero for this family."""
        return float(self(s, u) - self(s, t) - self(t, u))


# --- level-2 lift --------------------------------------------------------------------------


def _piece_signature(dt: np.ndarray, dw: np.ndarray, offsets: np.ndarray):
    """Level 1 and cross integral of consecutive linear pieces (last axis) with start offsets."""
    level1_t = dt.sum(axis=-1)
    level1_w = dw.sum(axis=-1)
    cross = np.sum(offsets * dw + 0.5 * dt * dw, axis=-1)
    return level1_t, level1_w, cross


def _assemble(level1_t, level1_w, cross) -> Tuple[np.ndarray, np.ndarray]:
    level1 = np.stack((level1_t, level1_w), axis=-1)
    level2 = np.empty(level1.shape[:-1] + (2, 2))
    level2[..., 0, 0] = 0.5 * level1_t * level1_t
    level2[..., 1, 1] = 0.5 * level1_w * level1_w
    level2[..., 0, 1] = cross
    level2[..., 1, 0] = level1_t * level1_w - cross
    return level1, level2


@dataclass(frozen=True)
class Level2RoughPath:
    """
    Increments of (t, sqrt(kappa) B) and their level-2 iterated integrals on a dyadic grid.

    The fine piecewise-linear path is kept so that exact lifts of arbitrary sub-intervals
    are available.
    """
    grid: np.ndarray = field(repr=False)
    level1: np.ndarray = field(repr=False)     # (m, 2)
    level2: np.ndarray = field(repr=False)     # (m, 2, 2)
    p: float
    kappa: float
    fine_times: np.ndarray = field(repr=False)
    fine_w: np.ndarray = field(repr=False)

    @property
    def m(self) -> int:
        return self.level1.shape[0]

    def cumulative(self) -> Tuple[np.ndarray, np.ndarray]:
        """Signatures X_{0, t_k} for every grid point, built by Chen's identity."""
        c1 = np.zeros((self.m + 1, 2))
        c1[1:] = np.cumsum(self.level1, axis=0)
        c2 = np.zeros((self.m + 1, 2, 2))
        c2[1:] = np.cumsum(self.level2 + c1[:-1, :, None] * self.level1[:, None, :], axis=0)
        return c1, c2

    def coarsen(self) -> "Level2RoughPath":
        """Merge neighbouring grid intervals pairwise with Chen's identity."""
        if self.m < 2 or self.m % 2:
            raise MeshMismatchError(f"cannot halve a grid of {self.m} intervals")
        a1, b1 = self.level1[0::2], self.level1[1::2]
        a2, b2 = self.level2[0::2], self.level2[1::2]
        return Level2RoughPath(
            grid=self.grid[::2],
            level1=a1 + b1,
            level2=a2 + b2 + a1[:, :, None] * b1[:, None, :],
            p=self.p,
            kappa=self.kappa,
            fine_times=self.fine_times,
            fine_w=self.fine_w,
        )

    def interval_lift(self, t0: float, t1: float) -> Tuple[np.ndarray, np.ndarray]:
        """Exact level-1 and level-2 increments over [t0, t1] of the fine linear path."""
        if not t0 <= t1:
            raise InvalidArgumentError(f"empty interval [{t0}, {t1}]")
        inner = self.fine_times[(self.fine_times > t0) & (self.fine_times < t1)]
        t = np.concatenate(([t0], inner, [t1]))
        w = np.interp(t, self.fine_times, self.fine_w)
        dt, dw = np.diff(t), np.diff(w)
        level1, level2 = _assemble(*_piece_signature(dt, dw, t[:-1] - t0))
        return level1, level2

    def geometric_residual(self) -> float:
        """max |sym(X^2) - 1/2 X^1 (x) X^1| over grid intervals."""
        sym = 0.5 * (self.level2 + np.swapaxes(self.level2, 1, 2))
        square = 0.5 * self.level1[:, :, None] * self.level1[:, None, :]
        return float(np.max(np.abs(sym - square)))

    def ibp_residual(self) -> float:
        """|int t dW + int W dt - T W_T| over the whole horizon."""
        c1, c2 = self.cumulative()
        total_t, total_w = c1[-1]
        return float(abs(c2[-1, 0, 1] + c2[-1, 1, 0] - total_t * total_w))


def lift_level2(d: DriverPath, kappa: float, grid_n: Optional[int] = None, p: float = 2.5) -> Level2RoughPath:
    """
    Canonical geometric lift of (t, sqrt(kappa) B) on a dyadic grid.

    Args:
        d: Brownian driver sqrt(d.kappa) B; rescaled to sqrt(kappa) B
        kappa: Diffusivity of the lifted path
        grid_n: Number of grid intervals (power of two dividing d's resolution);
            defaults to d's resolution
        p: Rough-path exponent in (2, 3]

    Raises:
        MeshMismatchError: Non-dyadic grid or driver mesh
    """
    check_rough_p(p)
    if kappa < 0:
        raise InvalidArgumentError(f"kappa must be >= 0, got {kappa}")
    if not _is_power_of_two(d.n):
        raise MeshMismatchError(f"driver resolution {d.n} is not dyadic")
    grid_n = d.n if grid_n is None else grid_n
    if not _is_power_of_two(grid_n) or grid_n > d.n:
        raise MeshMismatchError(f"grid of {grid_n} intervals is not a dyadic coarsening of {d.n}")

    if d.kappa > 0:
        w = math.sqrt(kappa / d.kappa) * d.values
    elif kappa == 0:
        w = np.zeros_like(d.values)
    else:
        raise InvalidArgumentError("cannot rescale a zero driver to positive kappa")

    r = d.n // grid_n
    dt = np.diff(d.times).reshape(grid_n, r)
    dw = np.diff(w).reshape(grid_n, r)
    offsets = d.times[:-1].reshape(grid_n, r) - d.times[:-1:r][:, None]
    level1, level2 = _assemble(*_piece_signature(dt, dw, offsets))

    fine_w = np.array(w)
    fine_w.setflags(write=False)
    return Level2RoughPath(
        grid=d.times[::r].copy(),
        level1=level1,
        level2=level2,
        p=p,
        kappa=kappa,
        fine_times=d.times,
        fine_w=fine_w,
    )


def chen_residuals(X: Level2RoughPath, d: DriverPath) -> List[Tuple[int, float]]:
    """
    Chen residuals at every dyadic scale.

    Each coarsening of X is compared with the direct lift of the same driver on that
    grid; returns (intervals, max residual over both levels).
    """
    rows: List[Tuple[int, float]] = []
    current = X
    while current.m >= 2:
        merged = current.coarsen()
        direct = lift_level2(d, X.kappa, merged.m, X.p)
        residual = max(
            float(np.max(np.abs(merged.level1 - direct.level1))),
            float(np.max(np.abs(merged.level2 - direct.level2))),
        )
        rows.append((merged.m, residual))
        current = merged
    return rows


def _check_compatible(X: Level2RoughPath, Y: Level2RoughPath) -> None:
    if X.m != Y.m or not np.allclose(X.grid, Y.grid, rtol=0, atol=1e-12):
        raise MeshMismatchError("rough paths live on different grids")
    if X.p != Y.p:
        raise MeshMismatchError(f"rough paths have different p ({X.p} vs {Y.p})")


def dp_distance(X: Level2RoughPath, Y: Level2RoughPath) -> float:
    """
    Discrete inhomogeneous p-variation distance.

    max over levels i of (sup over grid partitions of sum |X^i_{s,t} - Y^i_{s,t}|^(p/i))^(i/p),
    with Euclidean (level 1) and Frobenius (level 2) norms.
    """
    _check_compatible(X, Y)
    p = X.p
    c1x, c2x = X.cumulative()
    c1y, c2y = Y.cumulative()

    def level1_costs(j: int) -> np.ndarray:
        diff = (c1x[j] - c1x[:j]) - (c1y[j] - c1y[:j])
        return np.linalg.norm(diff, axis=1) ** p

    def level2_costs(j: int) -> np.ndarray:
        inc_x = c2x[j] - c2x[:j] - c1x[:j, :, None] * (c1x[j] - c1x[:j])[:, None, :]
        inc_y = c2y[j] - c2y[:j] - c1y[:j, :, None] * (c1y[j] - c1y[:j])[:, None, :]
        return np.linalg.norm((inc_x - inc_y).reshape(j, 4), axis=1) ** (p / 2.0)

    d1 = _pvar_dp(level1_costs, X.m) ** (1.0 / p)
    d2 = _pvar_dp(level2_costs, X.m) ** (2.0 / p)
    return max(d1, d2)


def control_calibration(X: Level2RoughPath, control: Optional[ControlFn] = None) -> float:
    """
    Smallest constant with |X^i_{s,t}|^(p/i) <= C omega(s, t) on every dyadic interval.

    The control defaults to omega(s, t) = sqrt(kappa) (t - s).
    """
    control = control or ControlFn(math.sqrt(X.kappa) if X.kappa > 0 else 1.0)
    worst = 0.0
    current = X
    while True:
        omega = control(current.grid[:-1], current.grid[1:])
        n1 = np.linalg.norm(current.level1, axis=1) ** X.p
        n2 = np.linalg.norm(current.level2.reshape(current.m, 4), axis=1) ** (X.p / 2.0)
        worst = max(worst, float(np.max(n1 / omega)), float(np.max(n2 / omega)))
        if current.m < 2:
            return worst
        current = current.coarsen()


# --- continuity of the lift in kappa ------------------------------------------------------


@dataclass(frozen=True)
class LiftContinuityRow:
    j: int
    kappa_n: float
    a_n: float
    dp: float
    ratio1: float      # max |dX^1| / (|a_n| omega^(1/p)) over dyadic intervals
    ratio2: float      # max |dX^2| / (|a_n| omega^(2/p))


LIFT_CONTINUITY_HEADER = ["j", "kappa_n", "a_n", "dp", "ratio1", "ratio2"]


def lift_gap(kappa: float, kappa_n: float) -> float:
    """a_n = (sqrt(kappa) - sqrt(kappa_n)) / sqrt(kappa)."""
    if not kappa > 0:
        raise InvalidArgumentError(f"kappa must be > 0, got {kappa}")
    return (math.sqrt(kappa) - math.sqrt(kappa_n)) / math.sqrt(kappa)


def _dyadic_ratios(X: Level2RoughPath, Y: Level2RoughPath, scale: float) -> Tuple[float, float]:
    """Worst ratios over dyadic intervals, with the control of the target Y."""
    control = ControlFn(math.sqrt(Y.kappa))
    r1 = r2 = 0.0
    x, y = X, Y
    while True:
        omega = control(x.grid[:-1], x.grid[1:])
        d1 = np.linalg.norm(x.level1 - y.level1, axis=1)
        d2 = np.linalg.norm((x.level2 - y.level2).reshape(x.m, 4), axis=1)
        r1 = max(r1, float(np.max(d1 / (scale * omega ** (1.0 / X.p)))))
        r2 = max(r2, float(np.max(d2 / (scale * omega ** (2.0 / X.p)))))
        if x.m < 2:
            return r1, r2
        x, y = x.coarsen(), y.coarsen()


def kappa_lift_continuity(
    d: DriverPath,
    kappa: float,
    kappa_seq: Sequence[float],
    p: float = 2.5,
    grid_n: Optional[int] = None,
) -> List[LiftContinuityRow]:
    """
    Check |X(kappa_n)^i - X(kappa)^i| <= C a_n omega(s, t)^(i/p) over dyadic intervals.

    Args:
        d: Brownian driver shared by every kappa
        kappa: Target diffusivity (> 0)
        kappa_seq: Sequence kappa_n
        p: Exponent in (2, 3]
        grid_n: Dyadic grid of the lifts
    """
    check_rough_p(p)
    target = lift_level2(d, kappa, grid_n, p)
    rows: List[LiftContinuityRow] = []
    for j, kappa_n in enumerate(kappa_seq, start=1):
        if not kappa_n > 0:
            raise InvalidArgumentError(f"kappa_n must be > 0, got {kappa_n}")
        lifted = lift_level2(d, kappa_n, grid_n, p)
        a_n = lift_gap(kappa, kappa_n)
        if a_n == 0:
            rows.append(LiftContinuityRow(j, kappa_n, 0.0, dp_distance(lifted, target), 0.0, 0.0))
            continue
        ratio1, ratio2 = _dyadic_ratios(lifted, target, abs(a_n))
        rows.append(LiftContinuityRow(j, kappa_n, a_n, dp_distance(lifted, target), ratio1, ratio2))
        logger.info("lift continuity j=%d a_n=%.4g dp=%.4g", j, a_n, rows[-1].dp)
    return rows


# --- the vector field and the RDE -----------------------------------------------------------


@dataclass(frozen=True)
class LipGammaBound:
    """Bound on the derivatives up to order k of the field -2/z on |z| >= delta."""
    delta: float
    k: int
    M: float
    components: Tuple[float, ...]   # 2 j! / delta^(j+1), j = 0..k


def lip_gamma_bound(delta: float, k: int = 4) -> LipGammaBound:
    """
    M = 2 max_{0 <= j <= k} j! / delta^(j+1), using d^j/dz^j (1/z) = (-1)^j j! / z^(j+1).
    """
    if not delta > 0:
        raise InvalidArgumentError(f"delta must be > 0, got {delta}")
    if not 0 <= k <= 4:
        raise InvalidArgumentError(f"order must lie in 0..4, got {k}")
    components = tuple(2.0 * math.factorial(j) / delta ** (j + 1) for j in range(k + 1))
    return LipGammaBound(delta=delta, k=k, M=max(components), components=components)


@dataclass(frozen=True)
class RDETrajectory:
    """Solution Z_t = h_t(z0) - lambda_t on the lift's grid."""
    times: np.ndarray = field(repr=False)
    Z: np.ndarray = field(repr=False)
    kappa: float
    z0: complex
    halvings: int


def _davie_step(Z: complex, level1: np.ndarray, level2: np.ndarray) -> complex:
    """One level-2 step of dZ = -2/Z dt - dW."""
    h, dw = level1
    return Z - 2.0 * h / Z - dw - 2.0 * h * h / Z ** 3 - 2.0 * level2[1, 0] / (Z * Z)


def solve_rde_backward(
    X: Level2RoughPath,
    z0: PointLike,
    delta: Optional[float] = None,
    max_depth: int = 30,
) -> RDETrajectory:
    """
    Solve the backward Loewner equation dZ = -2/Z dt - sqrt(kappa) dB as a rough differential equation.

    Each grid step uses the level-2 increment. When a step would lower Im Z it is split in
    halves with exact sub-interval lifts, down to 2^-max_depth of a grid step.

    Args:
        X: Lift of (t, sqrt(kappa) B)
        z0: Starting point with |z0| >= delta
        delta: Required distance from the origin; defaults to |z0|

    Raises:
        InvalidArgumentError: |z0| < delta or z0 below the real axis
        NumericalFailure: Step floor reached
    """
    z = as_complex(z0)
    delta = abs(z) if delta is None else delta
    if not delta > 0 or abs(z) < delta:
        raise InvalidArgumentError(f"starting point {z} is closer than delta={delta} to the origin")
    if z.imag < 0:
        raise InvalidArgumentError(f"starting point {z} is below the real axis")

    halvings = 0

    def advance(Z: complex, t0: float, t1: float, level1, level2, depth: int) -> complex:
        nonlocal halvings
        candidate = _davie_step(Z, level1, level2)
        if candidate.imag >= Z.imag and np.isfinite(candidate):
            return candidate
        if depth >= max_depth:
            raise NumericalFailure(
                f"step halving reached the floor near t={t0:.6g} (Z={Z:.6g})", stage="solve_rde_backward"
            )
        halvings += 1
        mid = 0.5 * (t0 + t1)
        first = advance(Z, t0, mid, *X.interval_lift(t0, mid), depth + 1)
        return advance(first, mid, t1, *X.interval_lift(mid, t1), depth + 1)

    Z = np.empty(X.m + 1, dtype=complex)
    Z[0] = z
    for k in range(X.m):
        Z[k + 1] = advance(Z[k], X.grid[k], X.grid[k + 1], X.level1[k], X.level2[k], 0)

    if halvings:
        logger.debug("RDE solve used %d step halvings", halvings)
    return RDETrajectory(times=X.grid.copy(), Z=Z, kappa=X.kappa, z0=z, halvings=halvings)


def analytic_backward(z0: PointLike, times: np.ndarray) -> np.ndarray:
    """Z_t = sqrt(z0^2 - 4t) on the branch with Im >= 0, the zero-driver solution."""
    z = as_complex(z0)
    root = np.sqrt(z * z - 4.0 * np.asarray(times, dtype=float) + 0j)
    return np.where(root.imag < 0, -root, root)


def euler_maruyama_backward(b: BrownianSample, kappa: float, z0: PointLike) -> Tuple[np.ndarray, np.ndarray]:
    """
    Ito Euler-Maruyama reference for dZ = -2/Z dt - sqrt(kappa) dB on b's mesh.

    Returns:
        (times, Z)
    """
    if kappa < 0:
        raise InvalidArgumentError(f"kappa must be >= 0, got {kappa}")
    dt = b.dt
    noise = math.sqrt(kappa) * np.asarray(b.increments)
    Z = np.empty(b.n + 1, dtype=complex)
    Z[0] = z = as_complex(z0)
    for k in range(b.n):
        z = z - 2.0 * dt / z - noise[k]
        Z[k + 1] = z
    return b.times, Z


@dataclass(frozen=True)
class RDEContinuityRow:
    j: int
    parameter: complex     # kappa_n, or the perturbed start z0_j
    sup_dist: float
    pvar_dist: float


RDE_CONTINUITY_HEADER = ["j", "parameter_re", "parameter_im", "sup_dist", "pvar_dist"]


def _trajectory_distance(a: RDETrajectory, b: RDETrajectory, p: float) -> Tuple[float, float]:
    diff = a.Z - b.Z
    return float(np.max(np.abs(diff))), p_variation(diff, p)


def rde_kappa_continuity(
    d: DriverPath,
    kappa: float,
    kappa_seq: Sequence[float],
    z0: PointLike,
    p: float = 2.5,
    grid_n: Optional[int] = None,
) -> List[RDEContinuityRow]:
    """Distance between solutions driven by kappa_n and kappa from the same start."""
    check_rough_p(p)
    reference = solve_rde_backward(lift_level2(d, kappa, grid_n, p), z0)
    rows: List[RDEContinuityRow] = []
    for j, kappa_n in enumerate(kappa_seq, start=1):
        solution = solve_rde_backward(lift_level2(d, kappa_n, grid_n, p), z0)
        sup_dist, pvar_dist = _trajectory_distance(solution, reference, p)
        rows.append(RDEContinuityRow(j, complex(kappa_n), sup_dist, pvar_dist))
        logger.info("RDE kappa continuity j=%d kappa_n=%g sup=%.4g", j, kappa_n, sup_dist)
    return rows


def rde_start_continuity(
    d: DriverPath,
    kappa: float,
    z0: PointLike,
    perturbations: Sequence[complex],
    p: float = 2.5,
    grid_n: Optional[int] = None,
) -> List[RDEContinuityRow]:
    """Distance between solutions started at z0 + perturbation_j and at z0."""
    check_rough_p(p)
    X = lift_level2(d, kappa, grid_n, p)
    start = as_complex(z0)
    reference = solve_rde_backward(X, start)
    rows: List[RDEContinuityRow] = []
    for j, eps in enumerate(perturbations, start=1):
        moved = start + complex(eps)
        solution = solve_rde_backward(X, moved, delta=min(abs(moved), abs(start)))
        sup_dist, pvar_dist = _trajectory_distance(solution, reference, p)
        rows.append(RDEContinuityRow(j, moved, sup_dist, pvar_dist))
    return rows


def brownian_driver(b: BrownianSample) -> DriverPath:
    """The unit-diffusivity driver B used as the source of every lift."""
    return scale_driver(b, 1.0)

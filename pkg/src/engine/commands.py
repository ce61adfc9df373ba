"""
Command dispatch for the Loewner laboratory.
Runs one experiment command with a flat flag set, writes its outputs and manifest, and
reports a result code with a one-line message.
"""

import logging
import math
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from utils.csv_io import write_csv, write_json

from .conformal_maps import MapChain, SlitMapParams, block_oracle_error
from .driver_paths import sample_brownian, scale_driver, sqrt_interpolate
from .errors import InvalidArgumentError, LabError, MeshMismatchError
from .kappa_analysis import (
    CONTINUITY_HEADER,
    check_kappa_regime,
    continuity_experiment,
    estimate_beta,
    refinement_study,
)
from .plots import plot_loglog, plot_trace
from .rough_path import (
    LIFT_CONTINUITY_HEADER,
    RDE_CONTINUITY_HEADER,
    analytic_backward,
    brownian_driver,
    chen_residuals,
    check_rough_p,
    control_calibration,
    kappa_lift_continuity,
    lift_level2,
    rde_kappa_continuity,
    rde_start_continuity,
    solve_rde_backward,
)
from .run_manager import RunManager, compare_digests, load_manifest
from .settings import LabSettings, PrecisionLevel, SettingsManager
from .trace_engine import build_trace

logger = logging.getLogger(__name__)


class CommandResult(Enum):
    """Results of command execution."""
    SUCCESS = "success"
    FAILURE = "failure"
    INVALID = "invalid"
    NOT_FOUND = "not_found"


EXIT_CODES: Dict[CommandResult, int] = {
    CommandResult.SUCCESS: 0,
    CommandResult.FAILURE: 1,
    CommandResult.INVALID: 2,
    CommandResult.NOT_FOUND: 2,
}

TRACE_FORMATS = ("csv", "svg", "json")
ROUGH_MODES = ("lift-check", "kappa-continuity", "rde", "rde-continuity")

Outcome = Tuple[CommandResult, str]


def parse_float_list(text: str) -> List[float]:
    """Comma-separated floats."""
    try:
        return [float(item) for item in text.split(",") if item.strip()]
    except ValueError as e:
        raise InvalidArgumentError(f"expected a comma-separated list of numbers, got {text!r}") from e


def parse_int_list(text: str) -> List[int]:
    """Comma-separated integers."""
    try:
        return [int(item) for item in text.split(",") if item.strip()]
    except ValueError as e:
        raise InvalidArgumentError(f"expected a comma-separated list of integers, got {text!r}") from e


def parse_kappa_seq(text: str, kappa: float) -> List[float]:
    """
    Parse a kappa sequence.

    Accepts a comma list ("2.5,2.25,2.125") or a geometric form "geom:J1:J2" giving
    kappa + 2^-j for j = J1..J2 ("geom-:J1:J2" gives kappa - 2^-j).
    """
    text = text.strip()
    if text.startswith("geom"):
        head, _, rest = text.partition(":")
        sign = -1.0 if head == "geom-" else 1.0
        if head not in ("geom", "geom-"):
            raise InvalidArgumentError(f"unknown sequence form {head!r}")
        bounds = parse_int_list(rest.replace(":", ","))
        if len(bounds) != 2 or bounds[0] > bounds[1]:
            raise InvalidArgumentError(f"geometric form needs J1:J2 with J1 <= J2, got {rest!r}")
        return [kappa + sign * 2.0 ** (-j) for j in range(bounds[0], bounds[1] + 1)]
    values = parse_float_list(text)
    if not values:
        raise InvalidArgumentError(f"kappa sequence {text!r} is empty")
    return values


def parse_point(text: str) -> complex:
    """Complex number such as '1j', '0.5+1j' or '0.3+0.2j'."""
    try:
        return complex(str(text).replace(" ", ""))
    except ValueError as e:
        raise InvalidArgumentError(f"cannot parse point {text!r}") from e


class LabCommands:
    """
    Handles command dispatch and output bookkeeping for the laboratory.
    """

    def __init__(self):
        """Initialize the command table and its aliases."""
        self.commands: Dict[str, List[str]] = {
            "trace": ["trace"],
            "compare-kappa": ["compare-kappa", "compare", "continuity"],
            "roughpath": ["roughpath", "rough-path", "rough"],
            "maps": ["maps", "map-grid"],
            "beta": ["beta"],
            "refine": ["refine", "refinement"],
            "replay": ["replay"],
        }
        self.handlers: Dict[str, Callable[[Dict[str, Any], LabSettings, RunManager], Tuple[Outcome, Optional[int]]]] = {
            "trace": self._trace_command,
            "compare-kappa": self._compare_kappa_command,
            "roughpath": self._roughpath_command,
            "maps": self._maps_command,
            "beta": self._beta_command,
            "refine": self._refine_command,
        }

    def normalize_command(self, name: str) -> Optional[str]:
        """
        Normalize a command name to its canonical form.

        Returns:
            Canonical name, or None if not recognized
        """
        name = name.lower().strip()
        for canonical, aliases in self.commands.items():
            if name in aliases:
                return canonical
        return None

    def settings_for(self, flags: Dict[str, Any]) -> LabSettings:
        """Resolve the preset and overrides recorded in a flag set."""
        manager = SettingsManager(PrecisionLevel(flags.get("precision", "standard")))
        manager.apply_overrides(flags.get("overrides") or {})
        return manager.get_current_settings()

    def execute_command(self, name: str, flags: Dict[str, Any]) -> Outcome:
        """
        Execute one command.

        Args:
            name: Command name or alias
            flags: Complete flag set; must include 'out'

        Returns:
            Tuple of (result, message)
        """
        canonical = self.normalize_command(name)
        if canonical is None:
            return CommandResult.INVALID, f"unknown command '{name}'"
        try:
            if canonical == "replay":
                return self._replay_command(flags)
            settings = self.settings_for(flags)
            run = RunManager(Path(flags["out"]))
            outcome, seed = self.handlers[canonical](flags, settings, run)
            if outcome[0] is CommandResult.SUCCESS:
                run.finish(canonical, flags, seed)
            return outcome
        except (InvalidArgumentError, MeshMismatchError) as e:
            return CommandResult.INVALID, str(e)
        except LabError as e:
            logger.error("%s failed: %s", canonical, e)
            return CommandResult.FAILURE, f"numerical failure: {e}"
        except (KeyError, ValueError) as e:
            return CommandResult.INVALID, f"bad flags: {e}"

    # --- handlers --------------------------------------------------------------------------

    def _trace_command(self, flags: Dict[str, Any], settings: LabSettings, run: RunManager):
        """Handle the trace command."""
        formats = [f.strip() for f in str(flags.get("format", "csv,svg,json")).split(",") if f.strip()]
        unknown = [f for f in formats if f not in TRACE_FORMATS]
        if unknown:
            return (CommandResult.INVALID, f"unknown format(s): {', '.join(unknown)}"), None
        kappa = float(flags["kappa"])
        if kappa < 0:
            return (CommandResult.INVALID, f"kappa must be >= 0, got {kappa}"), None
        seed = int(flags["seed"])
        n = int(flags["n"])
        T = float(flags.get("T") or settings.horizon)

        b = sample_brownian(seed, settings.fine_resolution, T)
        driver = sqrt_interpolate(scale_driver(b, kappa), n)
        trace = build_trace(driver, y_tip=flags.get("y_tip"), settings=settings)

        if "csv" in formats:
            trace.save(run.path("trace.csv"))
            driver.save(run.path("driver.csv"), run.path("driver.json"))
        if "svg" in formats:
            plot_trace(trace, run.path("trace.svg"))
        if "json" in formats:
            write_json(run.path("trace.json"), trace.manifest())
            write_json(run.path("chain.json"), trace.chain.to_json())
        tip = trace.points[-1]
        return (CommandResult.SUCCESS, f"trace kappa={kappa:g} n={n}: gamma(T) = {tip.real:.6f}{tip.imag:+.6f}i"), seed

    def _compare_kappa_command(self, flags: Dict[str, Any], settings: LabSettings, run: RunManager):
        """Handle the kappa-continuity experiment."""
        kappa = float(flags["kappa"])
        kappa_seq = parse_kappa_seq(str(flags["kappa_seq"]), kappa)
        for value in [kappa] + kappa_seq:
            try:
                check_kappa_regime(value)
            except InvalidArgumentError as e:
                return (CommandResult.INVALID, f"refused: {e}"), None
        schedule = parse_int_list(flags["schedule"]) if flags.get("schedule") else None
        seed = int(flags["seed"])

        report = continuity_experiment(
            seed, kappa, kappa_seq,
            schedule=schedule,
            settings=settings,
            beta=flags.get("beta"),
            workers=int(flags.get("workers") or 1),
        )
        write_csv(run.path("continuity.csv"), CONTINUITY_HEADER, report.table())
        js = [row.j for row in report.rows]
        plot_loglog(
            js, [report.sup_dists, report.approx_sup_dists], ["reference", "approximate"],
            run.path("continuity.svg"), xlabel="j", title=f"kappa={kappa:g} seed={seed}",
        )
        failed = [row.j for row in report.rows if row.error]
        message = f"{len(report.rows)} legs, last approx distance {report.approx_sup_dists[-1]}"
        if failed:
            message += f" ({len(failed)} failed legs: {failed})"
        return (CommandResult.SUCCESS, message), seed

    def _roughpath_command(self, flags: Dict[str, Any], settings: LabSettings, run: RunManager):
        """Handle the rough-path modes."""
        mode = flags.get("mode", "lift-check")
        if mode not in ROUGH_MODES:
            return (CommandResult.INVALID, f"unknown mode '{mode}'"), None
        p = float(flags.get("p") or settings.rough_p)
        check_rough_p(p)
        kappa = float(flags["kappa"])
        seed = int(flags["seed"])
        grid_n = int(flags.get("grid") or settings.rde_grid)
        b = sample_brownian(seed, settings.fine_resolution, settings.horizon)
        d = brownian_driver(b)

        if mode == "lift-check":
            X = lift_level2(d, kappa, grid_n, p)
            rows = []
            for intervals, residual in chen_residuals(X, d):
                rows.append([intervals, residual])
            write_csv(run.path("lift_check.csv"), ["intervals", "chen_residual"], rows)
            summary = {
                "grid": grid_n,
                "p": p,
                "kappa": kappa,
                "max_chen_residual": max((r[1] for r in rows), default=0.0),
                "geometric_residual": X.geometric_residual(),
                "ibp_residual": X.ibp_residual(),
                "control_calibration": control_calibration(X),
            }
            write_json(run.path("lift_summary.json"), summary)
            return (CommandResult.SUCCESS, f"max Chen residual {summary['max_chen_residual']:.3e}"), seed

        if mode == "kappa-continuity":
            kappa_seq = parse_kappa_seq(str(flags.get("kappa_seq") or "geom-:1:8"), kappa)
            rows = kappa_lift_continuity(d, kappa, kappa_seq, p, grid_n)
            write_csv(
                run.path("lift_continuity.csv"), LIFT_CONTINUITY_HEADER,
                [[r.j, r.kappa_n, r.a_n, r.dp, r.ratio1, r.ratio2] for r in rows],
            )
            return (CommandResult.SUCCESS, f"{len(rows)} rows, last dp {rows[-1].dp:.4g}" if rows else "no rows"), seed

        z0 = parse_point(flags.get("z0") or "1j")
        if mode == "rde":
            trajectory = solve_rde_backward(lift_level2(d, kappa, grid_n, p), z0)
            if kappa == 0:
                deviation = np.abs(trajectory.Z - analytic_backward(z0, trajectory.times))
                write_csv(
                    run.path("rde.csv"), ["t", "re", "im", "deviation"],
                    zip(trajectory.times, trajectory.Z.real, trajectory.Z.imag, deviation),
                )
                message = f"max deviation from the zero-driver solution {float(deviation.max()):.3e}"
            else:
                write_csv(
                    run.path("rde.csv"), ["t", "re", "im"],
                    zip(trajectory.times, trajectory.Z.real, trajectory.Z.imag),
                )
                message = f"Z_T = {complex(trajectory.Z[-1]):.6f} ({trajectory.halvings} step halvings)"
            return (CommandResult.SUCCESS, message), seed

        kappa_seq = parse_kappa_seq(str(flags.get("kappa_seq") or "geom:1:8"), kappa)
        perturb_js = parse_int_list(str(flags.get("perturb_j") or "1,2,3,4,5,6,7,8"))
        kappa_rows = rde_kappa_continuity(d, kappa, kappa_seq, z0, p, grid_n)
        start_rows = rde_start_continuity(d, kappa, z0, [1j * 2.0 ** (-j) for j in perturb_js], p, grid_n)
        for name, rows in (("rde_kappa.csv", kappa_rows), ("rde_start.csv", start_rows)):
            write_csv(
                run.path(name), RDE_CONTINUITY_HEADER,
                [[r.j, r.parameter.real, r.parameter.imag, r.sup_dist, r.pvar_dist] for r in rows],
            )
        return (CommandResult.SUCCESS, f"last kappa sup distance {kappa_rows[-1].sup_dist:.3e}" if kappa_rows else "no rows"), seed

    def _maps_command(self, flags: Dict[str, Any], settings: LabSettings, run: RunManager):
        """Dump a block map next to its ODE oracle on a grid."""
        block = SlitMapParams(float(flags["c"]), float(flags["tau"]), float(flags.get("shift") or 0.0))
        size = int(flags.get("grid_size") or 50)
        side = max(int(math.ceil(math.sqrt(size))), 2)
        xs = np.linspace(-2.0, 2.0, side)
        ys = np.linspace(0.1, 2.0, side)
        w = (xs[None, :] + 1j * ys[:, None]).ravel()[:size] + block.shift
        closed, oracle = block_oracle_error(block, w, settings)
        error = np.abs(closed - oracle)
        write_csv(
            run.path("maps.csv"),
            ["w_re", "w_im", "closed_re", "closed_im", "ode_re", "ode_im", "abs_err"],
            zip(w.real, w.imag, closed.real, closed.imag, oracle.real, oracle.imag, error),
        )
        write_json(run.path("chain.json"), MapChain((block,)).to_json())
        return (CommandResult.SUCCESS, f"{w.size} points, max |closed - ode| = {float(error.max()):.3e}"), None

    def _beta_command(self, flags: Dict[str, Any], settings: LabSettings, run: RunManager):
        """Estimate the derivative exponent."""
        seed = int(flags["seed"])
        kappas = np.linspace(float(flags["kappa_min"]), float(flags["kappa_max"]), int(flags["kappa_count"]))
        ys = np.geomspace(float(flags["y_min"]), float(flags["y_max"]), int(flags["y_count"]))
        times = np.linspace(0.0, settings.horizon, int(flags["t_count"]))
        b = sample_brownian(seed, settings.fine_resolution, settings.horizon)
        estimate = estimate_beta(b, list(kappas), times, ys, n=int(flags["n"]))
        write_json(run.path("beta.json"), estimate.to_dict())
        return (CommandResult.SUCCESS, f"beta = {estimate.beta:.4f}, c0 = {estimate.c0:.4g}"), seed

    def _refine_command(self, flags: Dict[str, Any], settings: LabSettings, run: RunManager):
        """Refinement ladder sup |gamma^{2n} - gamma^n| with a rate fit."""
        seed = int(flags["seed"])
        kappa = float(flags["kappa"])
        ns = parse_int_list(str(flags["ns"]))
        b = sample_brownian(seed, settings.fine_resolution, settings.horizon)
        study = refinement_study(b, kappa, ns, settings, beta=flags.get("beta"))
        write_csv(run.path("refine.csv"), ["n", "sup_dist"], zip(study.ns, study.dists))
        plot_loglog(ns, [study.dists], ["sup |gamma^2n - gamma^n|"], run.path("refine.svg"), xlabel="n")
        fit = study.fit
        if fit is not None:
            write_json(run.path("refine.json"), {
                "slope": fit.slope,
                "intercept": fit.intercept,
                "excluded": fit.excluded,
                "theoretical": fit.theoretical,
            })
        slope = f"{fit.slope:.4f}" if fit is not None else "n/a"
        return (CommandResult.SUCCESS, f"fitted slope {slope}"), seed

    def _replay_command(self, flags: Dict[str, Any]) -> Outcome:
        """Re-run a manifest into a fresh directory and compare digests."""
        manifest = load_manifest(Path(flags["manifest"]))
        if manifest is None:
            return CommandResult.NOT_FOUND, f"no manifest at {flags['manifest']}"
        replay_flags = dict(manifest.flags)
        replay_flags["out"] = str(flags["out"])
        result, message = self.execute_command(manifest.command, replay_flags)
        if result is not CommandResult.SUCCESS:
            return result, f"replay failed: {message}"
        replayed = load_manifest(Path(flags["out"]))
        mismatched = compare_digests(manifest, replayed) if replayed is not None else ["manifest"]
        if mismatched:
            return CommandResult.FAILURE, f"digests differ: {', '.join(mismatched)}"
        return CommandResult.SUCCESS, f"replay reproduced {len(manifest.digests)} files"

"""
Precision presets for the Loewner laboratory.
Manages the numerical tolerances, resolutions and analysis constants used by every run.
"""

import logging
import math
from dataclasses import dataclass, fields, replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

from .errors import InvalidArgumentError

logger = logging.getLogger(__name__)


class PrecisionLevel(Enum):
    """Available precision presets."""
    QUICK = "quick"
    STANDARD = "standard"
    FULL = "full"


@dataclass(frozen=True)
class LabSettings:
    """Settings for a specific precision level."""
    name: str
    description: str
    fine_resolution: int      # Brownian mesh points on [0, T]
    horizon: float            # T
    ode_rtol: float
    ode_atol: float
    swallow_radius: float     # guard distance to the driver in the forward equation
    y_tip_scale: float        # y_tip = y_tip_scale / sqrt(n)
    tip_retries: int
    phi_exponent: float       # subpower phi(n) = (log n) ** q
    c_hat: float              # random constant in Psi
    c_abs: float              # absolute constant in Phi
    beta_default: float       # beta used for Psi/Phi display when none is estimated
    rough_p: float
    rde_grid: int             # lift grid for the RDE solver
    em_resolution: int        # Euler-Maruyama reference resolution
    n_min: int
    n_max: int
    reference_factor: int     # n_ref = reference_factor * n

    def phi(self, n: float) -> float:
        """Subpower function phi(n) = (log n)^q."""
        return math.log(n) ** self.phi_exponent


PRESETS: Dict[PrecisionLevel, LabSettings] = {
    PrecisionLevel.QUICK: LabSettings(
        name="Quick",
        description="Coarse meshes for smoke runs and the unit tests.",
        fine_resolution=2 ** 12,
        horizon=1.0,
        ode_rtol=1e-9,
        ode_atol=1e-9,
        swallow_radius=1e-7,
        y_tip_scale=1e-3,
        tip_retries=3,
        phi_exponent=1.0,
        c_hat=1.0,
        c_abs=1.0,
        beta_default=0.5,
        rough_p=2.5,
        rde_grid=2 ** 10,
        em_resolution=2 ** 14,
        n_min=32,
        n_max=2 ** 8,
        reference_factor=16,
    ),
    PrecisionLevel.STANDARD: LabSettings(
        name="Standard",
        description="Desk-scale defaults: 2^16 Brownian mesh, 2^12 RDE grid.",
        fine_resolution=2 ** 16,
        horizon=1.0,
        ode_rtol=1e-10,
        ode_atol=1e-9,
        swallow_radius=1e-7,
        y_tip_scale=1e-3,
        tip_retries=3,
        phi_exponent=1.0,
        c_hat=1.0,
        c_abs=1.0,
        beta_default=0.5,
        rough_p=2.5,
        rde_grid=2 ** 12,
        em_resolution=2 ** 18,
        n_min=32,
        n_max=2 ** 12,
        reference_factor=16,
    ),
    PrecisionLevel.FULL: LabSettings(
        name="Full",
        description="Full mesh schedule: n up to 2^14, long reference traces.",
        fine_resolution=2 ** 18,
        horizon=1.0,
        ode_rtol=1e-11,
        ode_atol=1e-10,
        swallow_radius=1e-7,
        y_tip_scale=1e-3,
        tip_retries=3,
        phi_exponent=1.0,
        c_hat=1.0,
        c_abs=1.0,
        beta_default=0.5,
        rough_p=2.5,
        rde_grid=2 ** 12,
        em_resolution=2 ** 18,
        n_min=32,
        n_max=2 ** 14,
        reference_factor=16,
    ),
}


def default_settings() -> LabSettings:
    """Settings used when a caller passes none."""
    return PRESETS[PrecisionLevel.STANDARD]


def _coerce(name: str, raw: Any, current: Any) -> Any:
    """Convert a raw override to the type of the field it replaces."""
    try:
        if isinstance(current, bool):
            return str(raw).strip().lower() in ("1", "true", "yes", "on")
        if isinstance(current, int):
            value = float(raw)
            if not value.is_integer():
                raise ValueError("not an integer")
            return int(value)
        if isinstance(current, float):
            return float(raw)
        return str(raw)
    except (TypeError, ValueError) as e:
        raise InvalidArgumentError(f"bad value for setting '{name}': {raw!r}") from e


def parse_config_file(path: Path) -> Dict[str, str]:
    """
    Read a plain-text key=value configuration file.

    Args:
        path: File to read; '#' starts a comment, blank lines are ignored

    Returns:
        Mapping of keys (dashes normalised to underscores) to raw string values
    """
    values: Dict[str, str] = {}
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise InvalidArgumentError(f"cannot read config file {path}: {e}") from e

    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidArgumentError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        values[key.strip().replace("-", "_")] = value.strip()
    return values


class SettingsManager:
    """
    Manages precision presets and user overrides.
    """

    def __init__(self, level: PrecisionLevel = PrecisionLevel.STANDARD):
        """Initialize the manager with the predefined presets."""
        self.presets: Dict[PrecisionLevel, LabSettings] = dict(PRESETS)
        self.current_level = level
        self.overrides: Dict[str, Any] = {}

    def get_current_settings(self) -> LabSettings:
        """Get the current settings with overrides applied."""
        base = self.presets[self.current_level]
        if not self.overrides:
            return base
        return replace(base, **self.overrides)

    def set_level(self, level: PrecisionLevel) -> None:
        """Set the current precision level."""
        self.current_level = level

    def get_level_name(self) -> str:
        """Get the name of the current level."""
        return self.presets[self.current_level].name

    def apply_overrides(self, values: Mapping[str, Any]) -> None:
        """
        Override individual settings.

        Args:
            values: Setting name -> value; None values are skipped

        Raises:
            InvalidArgumentError: Unknown setting name or unparsable value
        """
        base = self.presets[self.current_level]
        known = {f.name for f in fields(LabSettings)}
        for name, raw in values.items():
            if raw is None:
                continue
            if name not in known:
                raise InvalidArgumentError(f"unknown setting '{name}'")
            self.overrides[name] = _coerce(name, raw, getattr(base, name))
            logger.debug("setting override %s=%r", name, self.overrides[name])

    def load_config_file(self, path: Path) -> None:
        """Apply every key=value pair of a config file as a setting override."""
        self.apply_overrides(parse_config_file(path))


def resolve_settings(settings: Optional[LabSettings]) -> LabSettings:
    """Return `settings` or the default preset."""
    return settings if settings is not None else default_settings()

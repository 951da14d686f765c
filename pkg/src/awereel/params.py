"""Physical parameter bundles for the kite, tether, winch and environment.

Defaults follow the 25 m^2 soft-kite ground-generation system used throughout
the package (6 mm tether, 0.3 m drum). All quantities are SI.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field


class ParameterError(ValueError):
    """Raised when a parameter bundle violates its invariants.

    ``path`` names the offending field (``"winch.speed_limits"``) so config
    loaders can report a field-path diagnostic.
    """

    def __init__(self, path: str, msg: str):
        super().__init__(f"{path}: {msg}")
        self.path = path


def _positive(obj, prefix, *names):
    for name in names:
        value = getattr(obj, name)
        if not (math.isfinite(value) and value > 0):
            raise ParameterError(f"{prefix}.{name}", f"must be a positive finite number, got {value!r}")


def tether_linear_density(diameter: float, material_density: float) -> float:
    """Mass per unit length [kg/m] of a solid round line."""
    return math.pi * (0.5 * diameter) ** 2 * material_density


@dataclass(frozen=True)
class KiteParams:
    area: float = 25.0
    mass: float = 10.5
    wingspan: float = 10.0
    lift_coeff: float = 0.95
    lift_to_drag: float = 6.0
    # coefficients at reduced angle of attack, used while reeling in
    depowered_lift_coeff: float = 0.35
    depowered_lift_to_drag: float = 3.5

    def __post_init__(self):
        _positive(self, "kite", "area", "mass", "wingspan", "lift_coeff", "lift_to_drag",
                  "depowered_lift_coeff", "depowered_lift_to_drag")
        if self.lift_to_drag <= 1.0:
            raise ParameterError("kite.lift_to_drag", "must exceed 1")
        if self.depowered_lift_to_drag <= 1.0:
            raise ParameterError("kite.depowered_lift_to_drag", "must exceed 1")


@dataclass(frozen=True)
class TetherParams:
    diameter: float = 0.006
    linear_density: float = tether_linear_density(0.006, 975.0)
    drag_coeff: float = 1.0
    # Elastic limit and matching strain are not part of the published
    # parameter table; these suit a 6 mm UHMWPE line.
    max_elastic_load: float = 27_000.0
    elongation_at_max: float = 0.015
    axial_damping: float = 60.0
    node_count: int = 4

    def __post_init__(self):
        _positive(self, "tether", "diameter", "linear_density", "drag_coeff",
                  "max_elastic_load", "elongation_at_max")
        if not (math.isfinite(self.axial_damping) and self.axial_damping >= 0):
            raise ParameterError("tether.axial_damping", "must be >= 0")
        if int(self.node_count) != self.node_count or self.node_count < 1:
            raise ParameterError("tether.node_count", "must be an integer >= 1")


@dataclass(frozen=True)
class WinchParams:
    """Drum-side winch model.

    Inertia and friction are reflected to the drum shaft. ``max_torque`` is
    the motor-side limit; the gearbox multiplies it at the drum.
    """

    drum_radius: float = 0.3
    inertia: float = 1.7
    viscous_coeff: float = 0.799
    max_torque: float = 1244.0
    gear_ratio: float = 26.0
    speed_limits: tuple[float, float] = (-8.0, 6.0)

    def __post_init__(self):
        _positive(self, "winch", "drum_radius", "inertia", "viscous_coeff", "max_torque", "gear_ratio")
        lo, hi = self.speed_limits
        if not lo < 0.0 < hi:
            raise ParameterError("winch.speed_limits", f"need min < 0 < max, got {self.speed_limits}")

    @property
    def drum_torque_limit(self) -> float:
        return self.max_torque * self.gear_ratio


@dataclass(frozen=True)
class EnvParams:
    air_density: float = 1.2
    gravity: float = 9.81
    wind_speed: float = 9.0
    shear_exponent: float = 0.0
    reference_height: float = 10.0
    wind_direction: tuple[float, float, float] = (1.0, 0.0, 0.0)

    def __post_init__(self):
        _positive(self, "env", "gravity", "reference_height")
        if not (math.isfinite(self.air_density) and self.air_density >= 0):
            raise ParameterError("env.air_density", "must be >= 0")
        if not (math.isfinite(self.wind_speed) and self.wind_speed >= 0):
            raise ParameterError("env.wind_speed", "must be >= 0")
        n = math.sqrt(sum(c * c for c in self.wind_direction))
        if abs(n - 1.0) > 1e-9:
            raise ParameterError("env.wind_direction", "must be a unit vector")


@dataclass(frozen=True)
class PlantParams:
    kite: KiteParams = field(default_factory=KiteParams)
    tether: TetherParams = field(default_factory=TetherParams)
    winch: WinchParams = field(default_factory=WinchParams)
    env: EnvParams = field(default_factory=EnvParams)

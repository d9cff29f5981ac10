"""Configuration schema and loader.

The configuration is a YAML document with five optional sections
(``room``, ``racks``, ``light_units``, ``receivers``, ``simulation``) plus
``link`` and ``wdma`` for the link-budget stage.  Every key has a default, so
an empty document describes the default pod.  Unknown keys are rejected.
"""

from __future__ import annotations

from enum import Enum
from pathlib import Path
from typing import Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator


class Wavelength(str, Enum):
    RED = "red"
    YELLOW = "yellow"
    GREEN = "green"
    BLUE = "blue"

    def __str__(self) -> str:
        return self.value


WAVELENGTHS = (Wavelength.RED, Wavelength.YELLOW, Wavelength.GREEN, Wavelength.BLUE)

# pydantic error types that mean "value out of range" rather than "bad shape"
_RANGE_ERRORS = {
    "greater_than",
    "greater_than_equal",
    "less_than",
    "less_than_equal",
    "value_error",
}


class ConfigError(ValueError):
    """Invalid configuration document.

    ``kind`` is ``"schema"`` for unknown/missing/mistyped keys and ``"range"``
    for values outside their allowed interval.  ``field`` is the dotted path of
    the first offending key.
    """

    def __init__(self, message: str, kind: str = "schema", field: str | None = None):
        super().__init__(message)
        self.kind = kind
        self.field = field


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class RoomConfig(_Section):
    length: float = Field(8.0, gt=0)
    width: float = Field(8.0, gt=0)
    height: float = Field(3.0, gt=0)
    reflectance_walls_ceiling: float = Field(0.8, ge=0, le=1)
    reflectance_floor: float = Field(0.3, ge=0, le=1)
    communication_floor_height: float = Field(0.25, ge=0)


class RacksConfig(_Section):
    # rows run along y; one entry per row giving the row's centre-line x
    row_x: list[float] = [1.8, 4.0, 6.2]
    per_row: int = Field(10, ge=1)
    width: float = Field(0.6, gt=0)  # along the row (y)
    depth: float = Field(1.0, gt=0)  # across the row (x)
    height: float = Field(2.0, gt=0)
    row_start_y: Optional[float] = None  # None centres the row in y


DEFAULT_UNIT_POSITIONS = [
    [1.8, 2.0, 3.0],
    [1.8, 4.0, 3.0],
    [1.8, 6.0, 3.0],
    [4.0, 2.0, 3.0],
    [4.0, 4.0, 3.0],
    [4.0, 6.0, 3.0],
    [6.2, 2.0, 3.0],
    [6.2, 4.0, 3.0],
    [6.2, 6.0, 3.0],
]


class LightUnitsConfig(_Section):
    positions: list[tuple[float, float, float]] = [tuple(p) for p in DEFAULT_UNIT_POSITIONS]
    semi_angle_deg: float = Field(70.0, gt=0, lt=90)
    lds_per_unit: int = Field(16, ge=1)
    # aggregate optical power of one unit on each wavelength, watts
    power_w: dict[Wavelength, float] = {w: 3.0 for w in WAVELENGTHS}

    @model_validator(mode="after")
    def _check_power(self):
        for w, p in self.power_w.items():
            if p < 0:
                raise ValueError(f"power_w.{w.value} must be >= 0")
        return self


class AdrBranchConfig(_Section):
    azimuth_deg: float
    elevation_deg: float = Field(ge=0, le=90)
    filters: list[Wavelength]


class AdrConfig(_Section):
    fov_deg: float = Field(20.0, gt=0, le=90)
    branches: list[AdrBranchConfig] = [
        AdrBranchConfig(azimuth_deg=0, elevation_deg=90, filters=list(WAVELENGTHS)),
        AdrBranchConfig(azimuth_deg=90, elevation_deg=25, filters=[Wavelength.RED, Wavelength.YELLOW, Wavelength.GREEN]),
        AdrBranchConfig(azimuth_deg=270, elevation_deg=25, filters=[Wavelength.RED, Wavelength.YELLOW, Wavelength.GREEN]),
    ]


class ImrConfig(_Section):
    lens_fov_deg: float = Field(65.0, gt=0, lt=90)
    transmission: tuple[float, float, float] = (-0.1982, 0.0425, 0.8778)
    pixel_grid: tuple[int, int] = (2, 5)  # cells along x, cells along y
    pixel_area: float = Field(2.0e-5, gt=0)


class ReceiversConfig(_Section):
    per_row: int = Field(1, ge=1)
    spacing: float = Field(0.1, ge=0)  # along-row spacing when per_row > 1
    height_above_rack: float = 0.0
    detector_area: float = Field(2.0e-5, gt=0)
    adr: AdrConfig = AdrConfig()
    imr: ImrConfig = ImrConfig()


class SimulationConfig(_Section):
    max_order: int = Field(2, ge=0, le=2)
    resolution_first: float = Field(0.05, gt=0)
    resolution_second: float = Field(0.20, gt=0)
    bin_width: float = Field(1.0e-11, gt=0)
    cir_duration: Optional[float] = Field(None, gt=0)  # None: long enough for any path
    occlusion: bool = True


class LinkConfig(_Section):
    responsivity: dict[Wavelength, float] = {
        Wavelength.RED: 0.4,
        Wavelength.YELLOW: 0.35,
        Wavelength.GREEN: 0.3,
        Wavelength.BLUE: 0.2,
    }
    noise_density: float = Field(4.5e-12, ge=0)
    background_current: float = Field(0.0, ge=0)
    sinr_threshold_db: float = 15.6
    rate_step: float = Field(0.5e9, gt=0)
    rate_max: float = Field(8.5e9, gt=0)

    @model_validator(mode="after")
    def _check_responsivity(self):
        for w in WAVELENGTHS:
            if self.responsivity.get(w, 0.0) <= 0:
                raise ValueError(f"responsivity.{w.value} must be > 0")
        return self


class AssignmentEntry(_Section):
    rack: int = Field(ge=1)
    wavelength: Wavelength
    unit: int = Field(ge=1)


class WdmaConfig(_Section):
    assignment: Optional[list[AssignmentEntry]] = None  # None: the default table


class SceneConfig(_Section):
    room: RoomConfig = RoomConfig()
    racks: RacksConfig = RacksConfig()
    light_units: LightUnitsConfig = LightUnitsConfig()
    receivers: ReceiversConfig = ReceiversConfig()
    simulation: SimulationConfig = SimulationConfig()
    link: LinkConfig = LinkConfig()
    wdma: WdmaConfig = WdmaConfig()

    def with_overrides(self, **simulation) -> "SceneConfig":
        """Return a copy with ``simulation`` keys replaced (``None`` values ignored)."""
        updates = {k: v for k, v in simulation.items() if v is not None}
        if not updates:
            return self
        data = self.model_dump(mode="json")
        data["simulation"].update(updates)
        return config_from_dict(data)


def _to_config_error(exc: ValidationError) -> ConfigError:
    err = exc.errors()[0]
    field = ".".join(str(p) for p in err["loc"])
    if err["type"] == "extra_forbidden":
        return ConfigError(f"unknown key {field!r}", kind="schema", field=field)
    kind = "range" if err["type"] in _RANGE_ERRORS else "schema"
    return ConfigError(f"{field}: {err['msg']}", kind=kind, field=field)


def config_from_dict(data: dict | None) -> SceneConfig:
    try:
        return SceneConfig.model_validate(data or {})
    except ValidationError as exc:
        raise _to_config_error(exc) from None


def parse_config(text: str) -> SceneConfig:
    """Parse a YAML configuration document, filling defaults."""
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed document: {exc}") from None
    if data is not None and not isinstance(data, dict):
        raise ConfigError("top level of the configuration must be a mapping")
    return config_from_dict(data)


def load_config(path: str | Path | None) -> SceneConfig:
    if path is None:
        return SceneConfig()
    return parse_config(Path(path).read_text())


def default_config_text() -> str:
    """The commented default pod configuration shipped with the package."""
    return (Path(__file__).parent / "data" / "default_pod.yaml").read_text()

"""Angle-diversity and imaging receivers, and select-best combining.

Both receivers sit at the top middle of a rack row.  The ADR is a set of
branches of narrow-FOV detectors behind ideal wavelength filters; the ImR is
a lens over a grid of pixels, each pixel owning a cell of direction-cosine
space.  Tracing produces per-element impulse responses for every light unit.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .config import SceneConfig, Wavelength
from .raytrace import DetectorElement, ImpulseResponse, Probe, detector_response, trace_geometric
from .scene import LightUnit, Scene

log = logging.getLogger(__name__)


class NoCandidateError(ValueError):
    pass


def orientation_from_az_el(azimuth: float, elevation: float) -> np.ndarray:
    """Unit vector for azimuth (from +x toward +y) and elevation, degrees."""
    if not 0 <= elevation <= 90:
        raise ValueError(f"elevation must lie in [0, 90] degrees, got {elevation}")
    az, el = math.radians(azimuth), math.radians(elevation)
    return np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])


@dataclass(frozen=True)
class AdrBranch:
    azimuth: float
    elevation: float
    filters: tuple[Wavelength, ...]

    @property
    def orientation(self) -> np.ndarray:
        return orientation_from_az_el(self.azimuth, self.elevation)


@dataclass(frozen=True, eq=False)
class AngleDiversityReceiver:
    branches: tuple[AdrBranch, ...]
    fov_half_angle: float = 20.0
    detector_area: float = 2.0e-5

    @property
    def n_slots(self) -> int:
        return len(self.branches)

    def response(self, directions: np.ndarray) -> np.ndarray:
        return np.stack([detector_response(directions, b.orientation, self.detector_area, self.fov_half_angle)
                         for b in self.branches], axis=1)

    def elements(self) -> list[tuple[int, str, int, Wavelength]]:
        """(element id, label, branch slot, filter) for every detector."""
        out = []
        for b, branch in enumerate(self.branches):
            for w in branch.filters:
                out.append((len(out) + 1, f"b{b + 1}-{w.value}", b, w))
        return out

    def detectors(self, position) -> list[DetectorElement]:
        return [DetectorElement(position, self.branches[b].orientation, self.detector_area,
                                self.fov_half_angle, w)
                for _, _, b, w in self.elements()]


@dataclass(frozen=True)
class Lens:
    fov_half_angle: float = 65.0
    coefficients: tuple[float, float, float] = (-0.1982, 0.0425, 0.8778)


def lens_transmission(incidence: float | np.ndarray, lens: Lens = Lens()):
    """Lens transmission factor for incidence angle(s) in radians; zero
    outside the lens field of view."""
    y = np.asarray(incidence, dtype=float)
    a, b, c = lens.coefficients
    tc = np.where(y <= math.radians(lens.fov_half_angle), (a * y + b) * y + c, 0.0)
    return float(tc) if tc.ndim == 0 else tc


@dataclass(frozen=True, eq=False)
class ImagingReceiver:
    """Upward-facing lens over a ``grid[0]`` x ``grid[1]`` pixel array.

    Pixel cells tile the square [-sin(fov), sin(fov)]^2 of direction cosines
    (x, y); ``grid[1]`` cells run along y, the row direction.  The lens
    aperture equals the total pixel area.
    """

    lens: Lens = Lens()
    pixel_area: float = 2.0e-5
    grid: tuple[int, int] = (2, 5)

    @property
    def n_slots(self) -> int:
        return self.grid[0] * self.grid[1]

    @property
    def aperture_area(self) -> float:
        return self.n_slots * self.pixel_area

    def pixel_indices(self, directions: np.ndarray) -> np.ndarray:
        """Zero-based pixel index per direction, -1 outside the lens FOV."""
        d = np.atleast_2d(np.asarray(directions, dtype=float))
        cos_y = np.clip(d[:, 2], -1.0, 1.0)
        inside = (cos_y > 0) & (np.arccos(cos_y) <= math.radians(self.lens.fov_half_angle))
        half = math.sin(math.radians(self.lens.fov_half_angle))
        nx, ny = self.grid
        ix = np.clip(np.floor((d[:, 0] + half) / (2 * half / nx)), 0, nx - 1).astype(np.int64)
        iy = np.clip(np.floor((d[:, 1] + half) / (2 * half / ny)), 0, ny - 1).astype(np.int64)
        return np.where(inside, ix * ny + iy, -1)

    def response(self, directions: np.ndarray) -> np.ndarray:
        d = np.asarray(directions, dtype=float)
        pix = self.pixel_indices(d)
        cos_y = np.clip(d[:, 2], -1.0, 1.0)
        gain = np.where(pix >= 0, self.aperture_area * cos_y * lens_transmission(np.arccos(cos_y), self.lens), 0.0)
        out = np.zeros((len(d), self.n_slots))
        hit = np.flatnonzero(pix >= 0)
        out[hit, pix[hit]] = gain[hit]
        return out

    def elements(self) -> list[tuple[int, str, int, None]]:
        return [(p + 1, f"p{p + 1}", p, None) for p in range(self.n_slots)]


def pixel_for_direction(arrival, imr: ImagingReceiver) -> int | None:
    """1-based pixel hit by light arriving from ``arrival`` (unit vector from
    the receiver toward the source), or None outside the lens FOV."""
    p = int(imr.pixel_indices(np.asarray(arrival, dtype=float)[None, :])[0])
    return None if p < 0 else p + 1


def receivers_from_config(config: SceneConfig) -> tuple[AngleDiversityReceiver, ImagingReceiver]:
    rx = config.receivers
    adr = AngleDiversityReceiver(
        tuple(AdrBranch(b.azimuth_deg, b.elevation_deg, tuple(b.filters)) for b in rx.adr.branches),
        rx.adr.fov_deg, rx.detector_area)
    imr = ImagingReceiver(Lens(rx.imr.lens_fov_deg, tuple(rx.imr.transmission)),
                          rx.imr.pixel_area, tuple(rx.imr.pixel_grid))
    return adr, imr


@dataclass(frozen=True, eq=False)
class ElementSignal:
    """Per-unit impulse responses seen by one receiver element.

    ``geometric`` holds unit-power responses; wavelength enters through the
    unit's emitted power and the element's (ideal) filter.
    """

    element_id: int
    label: str
    receiver: str
    row: int
    wavelength_filter: Wavelength | None
    geometric: dict[int, np.ndarray]
    unit_powers: dict[int, dict[Wavelength, float]]
    bin_width: float

    def passes(self, wavelength) -> bool:
        return self.wavelength_filter is None or self.wavelength_filter == Wavelength(wavelength)

    def cir(self, unit_id: int, wavelength) -> ImpulseResponse:
        h = self.geometric[unit_id]
        if not self.passes(wavelength):
            return ImpulseResponse(self.bin_width, np.zeros_like(h))
        return ImpulseResponse(self.bin_width, h * self.unit_powers[unit_id].get(Wavelength(wavelength), 0.0))

    def power(self, unit_id: int, wavelength) -> float:
        if not self.passes(wavelength):
            return 0.0
        return float(self.geometric[unit_id].sum()) * self.unit_powers[unit_id].get(Wavelength(wavelength), 0.0)


def _collect(scene: Scene, placements: Sequence[tuple[int, str, Sequence[np.ndarray], object]],
             units: Iterable[LightUnit], max_order: int | None, workers: int | None):
    """Trace every unit to every (row, kind, positions, receiver) placement.

    Returns {(row, kind): [ElementSignal, ...]}.  With several receivers per
    row, element ids continue across receivers and labels gain an rxN prefix.
    """
    units = list(units)
    probes, owners = [], []
    for row, kind, positions, rx in placements:
        for k, pos in enumerate(positions):
            probes.append(Probe(np.asarray(pos, dtype=float), rx))
            owners.append((row, kind, k, len(positions), rx))
    per_unit = {}
    for u in units:
        log.info("tracing light unit %d to %d receiver positions", u.id, len(probes))
        e = u.emitter
        per_unit[u.id] = trace_geometric(scene, e.position, e.orientation, e.lambertian_order,
                                         probes, max_order, workers)
    powers = {u.id: dict(u.emitter.power_per_wavelength) for u in units}
    dt = scene.config.simulation.bin_width
    out: dict[tuple[int, str], list[ElementSignal]] = {}
    for p, (row, kind, k, n_rx, rx) in enumerate(owners):
        elems = out.setdefault((row, kind), [])
        n_el = len(rx.elements())
        for eid, label, slot, filt in rx.elements():
            elems.append(ElementSignal(
                element_id=k * n_el + eid,
                label=label if n_rx == 1 else f"rx{k + 1}-{label}",
                receiver=kind, row=row, wavelength_filter=filt,
                geometric={uid: per_unit[uid][p][slot] for uid in per_unit},
                unit_powers=powers, bin_width=dt))
    return out


def collect_pod(scene: Scene, receiver_types: Sequence[str] = ("adr", "imr"),
                max_order: int | None = None, workers: int | None = None) -> dict[tuple[int, str], list[ElementSignal]]:
    """Element signals for every row's receivers, sharing one trace per unit."""
    adr, imr = receivers_from_config(scene.config)
    models = {"adr": adr, "imr": imr}
    placements = []
    for row, positions in enumerate(scene.receiver_positions, start=1):
        for kind in receiver_types:
            placements.append((row, kind, positions, models[kind]))
    return _collect(scene, placements, scene.light_units, max_order, workers)


def adr_collect(scene: Scene, position, units: Iterable[LightUnit] | None = None,
                adr: AngleDiversityReceiver | None = None, max_order: int | None = None,
                workers: int | None = None, row: int = 0) -> list[ElementSignal]:
    """ADR element signals at ``position`` for ``units`` (all units if None)."""
    adr = adr or receivers_from_config(scene.config)[0]
    units = scene.light_units if units is None else units
    return _collect(scene, [(row, "adr", [position], adr)], units, max_order, workers)[(row, "adr")]


def imr_collect(scene: Scene, position, units: Iterable[LightUnit] | None = None,
                imr: ImagingReceiver | None = None, max_order: int | None = None,
                workers: int | None = None, row: int = 0) -> list[ElementSignal]:
    """ImR pixel signals at ``position``; every arrival is weighted by the
    lens transmission and lands on exactly one pixel."""
    imr = imr or receivers_from_config(scene.config)[1]
    units = scene.light_units if units is None else units
    return _collect(scene, [(row, "imr", [position], imr)], units, max_order, workers)[(row, "imr")]


def _element_id(element) -> int:
    return element if isinstance(element, int) else element.element_id


def select_best(candidates):
    """Element with the highest SINR; ties go to the lowest element id."""
    if not candidates:
        raise NoCandidateError("select_best needs at least one candidate")
    return max(candidates, key=lambda c: (c[1], -_element_id(c[0])))

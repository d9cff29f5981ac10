"""Binned channel impulse responses: line of sight plus first- and
second-order diffuse reflections off the room's patch grids."""

from __future__ import annotations

import csv
import math
import weakref
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numba
import numpy as np

from . import _kernels
from ._kernels import C_LIGHT, lambertian_intensity, reemitted_intensity, segments_blocked
from .config import Wavelength
from .scene import Emitter, LightUnit, Scene, unit

__all__ = [
    "C_LIGHT", "DetectorElement", "ImpulseResponse", "Probe", "UnsupportedOrderError",
    "lambertian_intensity", "reemitted_intensity", "radiant_intensity", "los_gain",
    "occlusion_test", "incident_on_patches", "trace_cir", "trace_geometric", "received_power", "n_bins_for",
]

N_CHUNKS = 32


class UnsupportedOrderError(ValueError):
    pass


class DegenerateGeometryError(ValueError):
    pass


@dataclass(frozen=True)
class ImpulseResponse:
    bin_width: float
    bins: np.ndarray
    t0: float = 0.0

    def __post_init__(self):
        if self.bin_width <= 0:
            raise ValueError("bin_width must be positive")

    @property
    def power(self) -> float:
        return float(np.sum(self.bins))

    @property
    def delays(self) -> np.ndarray:
        return self.t0 + np.arange(len(self.bins)) * self.bin_width

    def scaled(self, k: float) -> "ImpulseResponse":
        return ImpulseResponse(self.bin_width, self.bins * k, self.t0)

    def write_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["delay_s", "power_w"])
        for t, p in zip(self.delays, self.bins):
            w.writerow([repr(float(t)), repr(float(p))])


def received_power(cir: ImpulseResponse) -> float:
    return cir.power


class Aperture(Protocol):
    """Angular response of a receiver, split over ``n_slots`` outputs."""

    n_slots: int

    def response(self, directions: np.ndarray) -> np.ndarray:
        """Effective collecting area (m^2) per slot for unit ``directions``
        pointing from the receiver toward the source, shape (N, n_slots)."""


@dataclass(frozen=True, eq=False)
class DetectorElement:
    position: np.ndarray
    orientation: np.ndarray
    area: float = 2.0e-5
    fov_half_angle: float = 20.0
    wavelength_filter: Wavelength | None = None

    def __post_init__(self):
        if self.area <= 0:
            raise ValueError("detector area must be positive")
        if not 0 < self.fov_half_angle <= 90:
            raise ValueError("detector FOV half-angle must lie in (0, 90]")
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        object.__setattr__(self, "orientation", unit(self.orientation))

    n_slots = 1

    def response(self, directions: np.ndarray) -> np.ndarray:
        return detector_response(directions, self.orientation, self.area, self.fov_half_angle)[:, None]


def detector_response(directions, orientation, area, fov_deg) -> np.ndarray:
    """A * cos(theta) inside the field of view, zero outside."""
    cos_t = np.asarray(directions, dtype=float) @ orientation
    inside = (cos_t > 0) & (cos_t >= math.cos(math.radians(fov_deg)))
    return np.where(inside, area * cos_t, 0.0)


@dataclass(frozen=True, eq=False)
class Probe:
    """One receiver position and the aperture attached to it."""

    position: np.ndarray
    aperture: Aperture


def radiant_intensity(emitter: Emitter, angle: float, wavelength) -> float:
    """W/sr radiated at ``angle`` (radians) off the emitter axis."""
    if angle > math.pi / 2:
        return 0.0
    return lambertian_intensity(emitter.lambertian_order, emitter.power(wavelength), math.cos(angle))


def _source_terms(source_pos, source_axis, order, targets):
    """Distances to ``targets`` and the source's emitted fraction per unit
    solid angle toward each, (n+1)/(2 pi) cos^n(phi)."""
    v = targets - source_pos
    d = np.sqrt(np.einsum("ij,ij->i", v, v))
    cos_phi = (v @ source_axis) / d
    with np.errstate(invalid="ignore"):
        lam = np.where(cos_phi > 0, (order + 1) / (2 * math.pi) * np.maximum(cos_phi, 0) ** order, 0.0)
    return v, d, lam


def los_gain(source_position, source_orientation, order: float, detector: DetectorElement) -> float:
    """Fraction of source power collected directly by ``detector``."""
    v = np.asarray(detector.position, dtype=float) - np.asarray(source_position, dtype=float)
    d = float(np.linalg.norm(v))
    if d == 0:
        raise DegenerateGeometryError("source and detector coincide")
    cos_phi = float(v @ unit(source_orientation)) / d
    a = detector.response((-v / d)[None, :])[0, 0]
    if cos_phi < 0 or a == 0:
        return 0.0
    return (order + 1) / (2 * math.pi * d * d) * cos_phi**order * a


def occlusion_test(a, b, scene: Scene) -> bool:
    if not scene.occlusion_enabled:
        return False
    pts = np.asarray(a, dtype=float)[None, :]
    return bool(segments_blocked(pts, np.asarray(b, dtype=float), scene.occluders())[0])


def n_bins_for(scene: Scene) -> int:
    """Number of delay bins; long enough for any three-segment path."""
    sim = scene.config.simulation
    needed = 3 * scene.room.diagonal / C_LIGHT
    if sim.cir_duration is not None:
        if sim.cir_duration < needed:
            raise ValueError(f"cir_duration {sim.cir_duration:g} s is shorter than the longest "
                             f"second-order path ({needed:g} s)")
        needed = sim.cir_duration
    return int(needed / sim.bin_width) + 2


def _sparse_slots(weights: np.ndarray, offset: int):
    """Compact dense (N, S) weights into per-row nonzero lists."""
    nz = weights != 0
    nnz = nz.sum(axis=1).astype(np.int64)
    k = max(1, int(nnz.max()) if len(nnz) else 1)
    n = weights.shape[0]
    sidx = np.zeros((n, k), dtype=np.int64)
    sw = np.zeros((n, k))
    order = np.argsort(~nz, axis=1, kind="stable")[:, :k]
    rows = np.arange(n)[:, None]
    sidx[:] = order + offset
    sw[:] = np.where(nz[rows, order], weights[rows, order], 0.0)
    return nnz, sidx, sw


def _patch_slots(grid, probes, offsets, boxes):
    """Per-probe distances and slot weights for patch -> receiver transfers.

    Weight per slot is the patch's re-emission factor rho/pi * cos(phi) / d^2
    times the aperture's effective area toward the patch.
    """
    R, N = len(probes), len(grid)
    dist = np.zeros((R, N))
    parts = []
    for r, probe in enumerate(probes):
        v = grid.centres - probe.position  # receiver -> patch
        d = np.sqrt(np.einsum("ij,ij->i", v, v))
        u = v / d[:, None]
        cos_e = -np.einsum("ij,ij->i", grid.normals, u)
        area = probe.aperture.response(u)
        factor = _kernels.reemission_factors(grid.reflectance, cos_e, d)
        w = area * factor[:, None]
        if len(boxes):
            live = np.flatnonzero(w.any(axis=1))
            blocked = segments_blocked(grid.centres[live], probe.position, boxes)
            w[live[blocked]] = 0.0
        dist[r] = d
        parts.append(_sparse_slots(w, offsets[r]))
    k = max(p[1].shape[1] for p in parts)
    nnz = np.stack([p[0] for p in parts])
    sidx = np.zeros((R, N, k), dtype=np.int64)
    sw = np.zeros((R, N, k))
    for r, (_, si, w) in enumerate(parts):
        sidx[r, :, : si.shape[1]] = si
        sw[r, :, : w.shape[1]] = w
    return dist, nnz, sidx, sw


def incident_on_patches(scene: Scene, grid, source_position, source_orientation, order: float) -> np.ndarray:
    """Fraction of a point source's power landing on each patch of ``grid``."""
    boxes = scene.occluders() if scene.occlusion_enabled else np.zeros((0, 6))
    return _incident(grid, np.asarray(source_position, dtype=float), unit(source_orientation), order, boxes)[0]


def _incident(grid, source_pos, source_axis, order, boxes):
    v, d, lam = _source_terms(source_pos, source_axis, order, grid.centres)
    cos_in = -np.einsum("ij,ij->i", grid.normals, v) / d
    p = np.where(cos_in > 0, lam * np.maximum(cos_in, 0) * grid.areas / (d * d), 0.0)
    # centre-point sums over the closed shell can overshoot 1 slightly
    total = p.sum()
    if total > 1.0:
        p /= total
    if len(boxes):
        live = np.flatnonzero(p)
        blocked = segments_blocked(grid.centres[live], source_pos, boxes)
        p[live[blocked]] = 0.0
    return p, d


_capture_cache: "weakref.WeakKeyDictionary[Scene, np.ndarray]" = weakref.WeakKeyDictionary()


def second_bounce_scale(scene: Scene) -> np.ndarray:
    """Per first-grid patch factor that caps the share of its re-emitted power
    collected by the second grid at 1.

    Centre-point transfers over-collect near edges and corners (by up to ~20%
    at the default grids); scaling those rows keeps every bounce conservative.
    """
    scale = _capture_cache.get(scene)
    if scale is None:
        g1, g2 = scene.patches_first, scene.patches_second
        sums = _kernels.transfer_sums(g1.centres, g1.normals, g2.centres, g2.normals, g2.areas)
        scale = np.where(sums > 1.0, 1.0 / np.maximum(sums, 1.0), 1.0)
        _capture_cache[scene] = scale
    return scale


def _set_workers(workers: int | None) -> None:
    if workers:
        numba.set_num_threads(max(1, min(workers, numba.config.NUMBA_NUM_THREADS)))


def trace_geometric(scene: Scene, source_position, source_orientation, order: float,
                    probes: Sequence[Probe], max_order: int | None = None,
                    workers: int | None = None) -> list[np.ndarray]:
    """Unit-power impulse responses from one point source to every probe.

    Returns one array of shape (n_slots, n_bins) per probe.  All probes share
    the patch-to-patch work, which dominates the cost of second order.
    """
    sim = scene.config.simulation
    max_order = sim.max_order if max_order is None else max_order
    if not 0 <= max_order <= 2:
        raise UnsupportedOrderError(f"max_order must be 0, 1 or 2, got {max_order}")
    _set_workers(workers)
    src = np.asarray(source_position, dtype=float)
    axis = unit(source_orientation)
    dt = sim.bin_width
    n_bins = n_bins_for(scene)
    boxes = scene.occluders() if scene.occlusion_enabled else np.zeros((0, 6))

    offsets = np.cumsum([0] + [p.aperture.n_slots for p in probes])
    n_slots = int(offsets[-1])
    out = np.zeros((n_slots, n_bins))

    # line of sight
    pos = np.array([p.position for p in probes], dtype=float).reshape(-1, 3)
    v, d, lam = _source_terms(src, axis, order, pos)
    if np.any(d == 0):
        raise DegenerateGeometryError("source and receiver coincide")
    los_blocked = segments_blocked(pos, src, boxes) if len(boxes) else np.zeros(len(probes), bool)
    for r, probe in enumerate(probes):
        if los_blocked[r] or lam[r] == 0:
            continue
        a = probe.aperture.response((-v[r] / d[r])[None, :])[0]
        b = int((d[r] / C_LIGHT) / dt)
        out[offsets[r]: offsets[r + 1], b] += lam[r] / (d[r] * d[r]) * a

    if max_order >= 1:
        g1 = scene.patches_first
        p_inc, d_src = _incident(g1, src, axis, order, boxes)
        active = np.flatnonzero(p_inc)
        dist, nnz, sidx, sw = _patch_slots(g1, probes, offsets, boxes)
        _kernels.first_order(p_inc, d_src, active, dist, nnz, sidx, sw, dt, out)

        if max_order == 2:
            g2 = scene.patches_second
            dist2, nnz2, sidx2, sw2 = _patch_slots(g2, probes, offsets, boxes)
            active_j = np.flatnonzero(nnz2.any(axis=0))
            parts = _kernels.second_order(
                p_inc * second_bounce_scale(scene), d_src, active, g1.centres, g1.normals, g1.reflectance,
                active_j, g2.centres, g2.normals, g2.areas, dist2, nnz2, sidx2, sw2,
                boxes, dt, n_slots, n_bins, N_CHUNKS)
            for ch in range(N_CHUNKS):
                out += parts[ch]

    return [out[offsets[r]: offsets[r + 1]] for r in range(len(probes))]


def trace_cir(scene: Scene, light_unit: LightUnit | Emitter, wavelength, detector: DetectorElement,
              max_order: int | None = None, workers: int | None = None) -> ImpulseResponse:
    """Impulse response from one unit's ``wavelength`` emission to one detector."""
    emitter = light_unit.emitter if isinstance(light_unit, LightUnit) else light_unit
    wavelength = Wavelength(wavelength)
    if not scene.room.contains(detector.position):
        raise ValueError("detector lies outside the room")
    dt = scene.config.simulation.bin_width
    if detector.wavelength_filter is not None and Wavelength(detector.wavelength_filter) != wavelength:
        if max_order is not None and not 0 <= max_order <= 2:
            raise UnsupportedOrderError(f"max_order must be 0, 1 or 2, got {max_order}")
        return ImpulseResponse(dt, np.zeros(n_bins_for(scene)))
    (h,) = trace_geometric(scene, emitter.position, emitter.orientation, emitter.lambertian_order,
                           [Probe(detector.position, detector)], max_order, workers)
    return ImpulseResponse(dt, h[0] * emitter.power(wavelength))

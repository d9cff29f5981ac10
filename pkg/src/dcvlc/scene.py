"""Pod geometry: room, racks, light units, receiver placements and the
Lambertian patch grids that discretize every reflecting surface."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .config import WAVELENGTHS, SceneConfig, Wavelength


class PlacementError(ValueError):
    """A rack, unit or receiver lies outside the room."""


# surface order fixes the patch ordering
SURFACES = ("ceiling", "floor", "wall_s", "wall_n", "wall_w", "wall_e")


def unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def lambertian_order(semi_angle: float) -> float:
    """Lambertian emission order for a half-power semi-angle in degrees."""
    if not 0 < semi_angle < 90:
        raise ValueError(f"semi-angle must lie in (0, 90) degrees, got {semi_angle}")
    return -math.log(2) / math.log(math.cos(math.radians(semi_angle)))


@dataclass(frozen=True)
class Room:
    length: float = 8.0
    width: float = 8.0
    height: float = 3.0
    reflectance_walls_ceiling: float = 0.8
    reflectance_floor: float = 0.3
    communication_floor_height: float = 0.25

    @property
    def centre(self) -> np.ndarray:
        return np.array([self.length / 2, self.width / 2, self.height / 2])

    @property
    def diagonal(self) -> float:
        return math.sqrt(self.length**2 + self.width**2 + self.height**2)

    def contains(self, p, tol: float = 1e-9) -> bool:
        x, y, z = p
        return (
            -tol <= x <= self.length + tol
            and -tol <= y <= self.width + tol
            and -tol <= z <= self.height + tol
        )

    def surface_area(self, surface: str) -> float:
        L, W, H = self.length, self.width, self.height
        return {"ceiling": L * W, "floor": L * W, "wall_s": L * H, "wall_n": L * H,
                "wall_w": W * H, "wall_e": W * H}[surface]


class Patch(NamedTuple):
    centre: np.ndarray
    normal: np.ndarray
    area: float
    reflectance: float
    surface: str


@dataclass(frozen=True, eq=False)
class PatchGrid:
    """Equal-area patches tiling every room surface at one resolution.

    Stored column-wise; indexing returns a :class:`Patch`.  Reflection from a
    patch is always first-order Lambertian.
    """

    resolution: float
    centres: np.ndarray
    normals: np.ndarray
    areas: np.ndarray
    reflectance: np.ndarray
    surface_index: np.ndarray

    def __len__(self) -> int:
        return len(self.areas)

    def __getitem__(self, i: int) -> Patch:
        return Patch(self.centres[i], self.normals[i], float(self.areas[i]),
                     float(self.reflectance[i]), SURFACES[self.surface_index[i]])

    def count(self, surface: str) -> int:
        return int(np.count_nonzero(self.surface_index == SURFACES.index(surface)))

    def total_area(self, surface: str) -> float:
        return float(self.areas[self.surface_index == SURFACES.index(surface)].sum())


def _cells(extent: float, size: float) -> int:
    return max(1, math.ceil(extent / size - 1e-9))


def make_patches(room: Room, resolution: float) -> PatchGrid:
    """Discretize the six room surfaces into patches no larger than
    ``resolution`` on a side, ordered by surface then row-major by centre."""
    L, W, H = room.length, room.width, room.height
    rho_wc, rho_f = room.reflectance_walls_ceiling, room.reflectance_floor
    # (surface, in-plane axes, their extents, fixed axis, fixed value, normal, rho)
    specs = [
        ("ceiling", (0, 1), (L, W), 2, H, (0, 0, -1), rho_wc),
        ("floor", (0, 1), (L, W), 2, 0.0, (0, 0, 1), rho_f),
        ("wall_s", (0, 2), (L, H), 1, 0.0, (0, 1, 0), rho_wc),
        ("wall_n", (0, 2), (L, H), 1, W, (0, -1, 0), rho_wc),
        ("wall_w", (1, 2), (W, H), 0, 0.0, (1, 0, 0), rho_wc),
        ("wall_e", (1, 2), (W, H), 0, L, (-1, 0, 0), rho_wc),
    ]
    centres, normals, areas, rhos, sids = [], [], [], [], []
    for sid, (name, axes, extents, fixed, value, normal, rho) in enumerate(specs):
        na, nb = _cells(extents[0], resolution), _cells(extents[1], resolution)
        da, db = extents[0] / na, extents[1] / nb
        a = (np.arange(na) + 0.5) * da
        b = (np.arange(nb) + 0.5) * db
        ga, gb = np.meshgrid(a, b, indexing="ij")
        c = np.empty((na * nb, 3))
        c[:, axes[0]] = ga.ravel()
        c[:, axes[1]] = gb.ravel()
        c[:, fixed] = value
        centres.append(c)
        normals.append(np.tile(np.asarray(normal, dtype=float), (na * nb, 1)))
        areas.append(np.full(na * nb, da * db))
        rhos.append(np.full(na * nb, rho))
        sids.append(np.full(na * nb, sid, dtype=np.int64))
    return PatchGrid(
        resolution=resolution,
        centres=np.concatenate(centres),
        normals=np.concatenate(normals),
        areas=np.concatenate(areas),
        reflectance=np.concatenate(rhos),
        surface_index=np.concatenate(sids),
    )


@dataclass(frozen=True, eq=False)
class Emitter:
    position: np.ndarray
    orientation: np.ndarray
    semi_angle: float
    power_per_wavelength: dict

    @property
    def lambertian_order(self) -> float:
        return lambertian_order(self.semi_angle)

    def power(self, wavelength: Wavelength) -> float:
        return float(self.power_per_wavelength.get(Wavelength(wavelength), 0.0))


@dataclass(frozen=True, eq=False)
class LightUnit:
    """A ceiling luminaire of ``ld_count`` RYGB laser diodes, modelled as one
    aggregate point emitter at the unit centre."""

    id: int
    emitter: Emitter
    ld_count: int = 16

    @property
    def position(self) -> np.ndarray:
        return self.emitter.position

    @property
    def wavelengths(self) -> tuple:
        return WAVELENGTHS


@dataclass(frozen=True, eq=False)
class Rack:
    id: int
    row: int
    width: float  # along the row (y)
    depth: float  # across the row (x)
    height: float
    top_centre: np.ndarray

    @property
    def box(self) -> np.ndarray:
        """Axis-aligned bounds ``(xmin, ymin, zmin, xmax, ymax, zmax)``."""
        x, y, z = self.top_centre
        return np.array([x - self.depth / 2, y - self.width / 2, z - self.height,
                         x + self.depth / 2, y + self.width / 2, z])


@dataclass(frozen=True, eq=False)
class Scene:
    room: Room
    racks: tuple[Rack, ...]
    light_units: tuple[LightUnit, ...]
    receiver_positions: tuple[tuple[np.ndarray, ...], ...]  # per row
    patches_first: PatchGrid
    patches_second: PatchGrid
    occlusion_enabled: bool = True
    config: SceneConfig = field(default_factory=SceneConfig)

    @property
    def n_rows(self) -> int:
        return len(self.receiver_positions)

    def unit(self, unit_id: int) -> LightUnit:
        for u in self.light_units:
            if u.id == unit_id:
                return u
        raise KeyError(f"no light unit {unit_id}")

    def rack(self, rack_id: int) -> Rack:
        for r in self.racks:
            if r.id == rack_id:
                return r
        raise KeyError(f"no rack {rack_id}")

    def occluders(self) -> np.ndarray:
        """Rack boxes with touching racks of a row merged, shape (B, 6).

        Merging is exact up to the measure-zero shared faces and keeps the
        per-segment occlusion test short.
        """
        boxes = sorted((tuple(r.box) for r in self.racks), key=lambda b: (b[0], b[3], b[2], b[5], b[1]))
        merged: list[list[float]] = []
        for b in boxes:
            if merged:
                m = merged[-1]
                same_xz = m[0] == b[0] and m[3] == b[3] and m[2] == b[2] and m[5] == b[5]
                if same_xz and abs(m[4] - b[1]) < 1e-12:
                    m[4] = max(m[4], b[4])
                    continue
            merged.append(list(b))
        return np.array(merged, dtype=float).reshape(-1, 6)


def build_scene(config: SceneConfig | None = None) -> Scene:
    """Construct the pod described by ``config`` (the default pod if None)."""
    config = config or SceneConfig()
    rc = config.room
    room = Room(rc.length, rc.width, rc.height, rc.reflectance_walls_ceiling,
                rc.reflectance_floor, rc.communication_floor_height)

    rk = config.racks
    racks = []
    row_len = rk.per_row * rk.width
    y0 = (room.width - row_len) / 2 if rk.row_start_y is None else rk.row_start_y
    for r, x in enumerate(rk.row_x, start=1):
        for k in range(rk.per_row):
            rack = Rack(
                id=(r - 1) * rk.per_row + k + 1,
                row=r,
                width=rk.width,
                depth=rk.depth,
                height=rk.height,
                top_centre=np.array([x, y0 + (k + 0.5) * rk.width, rk.height]),
            )
            b = rack.box
            if not (room.contains(b[:3]) and room.contains(b[3:])):
                raise PlacementError(f"rack {rack.id} extends outside the room")
            racks.append(rack)

    lu = config.light_units
    units = []
    for i, pos in enumerate(lu.positions, start=1):
        pos = np.array(pos, dtype=float)
        if not room.contains(pos):
            raise PlacementError(f"light unit {i} at {tuple(pos)} is outside the room")
        emitter = Emitter(pos, np.array([0.0, 0.0, -1.0]), lu.semi_angle_deg,
                          {Wavelength(w): float(p) for w, p in lu.power_w.items()})
        units.append(LightUnit(i, emitter, lu.lds_per_unit))

    rx = config.receivers
    receivers = []
    for x in rk.row_x:
        y_mid = y0 + row_len / 2
        offsets = (np.arange(rx.per_row) - (rx.per_row - 1) / 2) * rx.spacing
        row_pos = tuple(np.array([x, y_mid + o, rk.height + rx.height_above_rack]) for o in offsets)
        for p in row_pos:
            if not room.contains(p):
                raise PlacementError(f"receiver at {tuple(p)} is outside the room")
        receivers.append(row_pos)

    sim = config.simulation
    return Scene(
        room=room,
        racks=tuple(racks),
        light_units=tuple(units),
        receiver_positions=tuple(receivers),
        patches_first=make_patches(room, sim.resolution_first),
        patches_second=make_patches(room, sim.resolution_second),
        occlusion_enabled=sim.occlusion,
        config=config,
    )


@dataclass(frozen=True)
class Diagnostic:
    level: str  # "warning" or "error"
    code: str
    message: str

    def __str__(self) -> str:
        return f"{self.level}: [{self.code}] {self.message}"


def validate_scene(scene: Scene) -> list[Diagnostic]:
    out = []
    cf = scene.room.communication_floor_height
    for r, row in enumerate(scene.receiver_positions, start=1):
        for p in row:
            if p[2] < cf:
                out.append(Diagnostic("error", "below-cf",
                                      f"receiver of row {r} at z={p[2]:g} m is below communication floor ({cf:g} m)"))
    for rack in scene.racks:
        if rack.height <= 0 or rack.width <= 0 or rack.depth <= 0:
            out.append(Diagnostic("error", "rack-size", f"rack {rack.id} has a non-positive dimension"))
    boxes = [r.box for r in scene.racks]
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            a, b = boxes[i], boxes[j]
            overlap = np.minimum(a[3:], b[3:]) - np.maximum(a[:3], b[:3])
            if np.all(overlap > 1e-12):
                out.append(Diagnostic("error", "rack-overlap",
                                      f"racks {scene.racks[i].id} and {scene.racks[j].id} overlap"))
    for grid in (scene.patches_first, scene.patches_second):
        bad = np.count_nonzero((grid.reflectance < 0) | (grid.reflectance > 1))
        if bad:
            out.append(Diagnostic("error", "reflectance",
                                  f"{bad} patches at {grid.resolution:g} m have reflectance outside [0, 1]"))
    return out


def _r(v) -> list:
    return [float(x) for x in v]


def scene_dump(scene: Scene, include_patches: bool = False) -> dict:
    """JSON-ready description of the constructed scene."""
    room = scene.room
    d = {
        "room": {
            "length": room.length, "width": room.width, "height": room.height,
            "reflectance_walls_ceiling": room.reflectance_walls_ceiling,
            "reflectance_floor": room.reflectance_floor,
            "communication_floor_height": room.communication_floor_height,
        },
        "racks": [{"id": r.id, "row": r.row, "width": r.width, "depth": r.depth,
                   "height": r.height, "top_centre": _r(r.top_centre)} for r in scene.racks],
        "light_units": [{
            "id": u.id, "position": _r(u.position), "orientation": _r(u.emitter.orientation),
            "semi_angle_deg": u.emitter.semi_angle, "lambertian_order": u.emitter.lambertian_order,
            "ld_count": u.ld_count,
            "power_w": {w.value: u.emitter.power(w) for w in WAVELENGTHS},
        } for u in scene.light_units],
        "receivers": [[_r(p) for p in row] for row in scene.receiver_positions],
        "occlusion_enabled": scene.occlusion_enabled,
        "occluders": [_r(b) for b in scene.occluders()],
    }
    for key, grid in (("patches_first", scene.patches_first), ("patches_second", scene.patches_second)):
        g = {"resolution": grid.resolution,
             "counts": {s: grid.count(s) for s in SURFACES}}
        if include_patches:
            g["centres"] = grid.centres.tolist()
            g["normals"] = grid.normals.tolist()
            g["areas"] = grid.areas.tolist()
            g["reflectance"] = grid.reflectance.tolist()
            g["surface"] = [SURFACES[i] for i in grid.surface_index]
        d[key] = g
    return d


def scene_hash(scene: Scene) -> str:
    h = hashlib.sha256(json.dumps(scene_dump(scene), sort_keys=True).encode())
    for grid in (scene.patches_first, scene.patches_second):
        for arr in (grid.centres, grid.normals, grid.areas, grid.reflectance, grid.surface_index):
            h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()

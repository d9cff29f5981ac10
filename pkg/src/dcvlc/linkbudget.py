"""WDMA rack assignment, OOK link budget and channel metrics."""

from __future__ import annotations

import logging
import math
from collections.abc import Mapping
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterator

import numpy as np
from scipy.special import erfc

from .config import WAVELENGTHS, SceneConfig, Wavelength
from .raytrace import ImpulseResponse
from .receivers import ElementSignal, collect_pod, select_best
from .scene import Diagnostic, Scene

log = logging.getLogger(__name__)

Q_ELECTRON = 1.602e-19

R, Y, G, B = Wavelength.RED, Wavelength.YELLOW, Wavelength.GREEN, Wavelength.BLUE

# rack -> (wavelength, light unit), three rows of ten
DEFAULT_ASSIGNMENT = {
    1: (R, 1), 2: (G, 1), 3: (Y, 1), 4: (R, 2), 5: (G, 2),
    6: (B, 2), 7: (Y, 2), 8: (Y, 3), 9: (G, 3), 10: (R, 3),
    11: (R, 4), 12: (G, 4), 13: (Y, 4), 14: (R, 5), 15: (G, 5),
    16: (B, 5), 17: (Y, 5), 18: (Y, 6), 19: (G, 6), 20: (R, 6),
    21: (R, 7), 22: (G, 7), 23: (Y, 7), 24: (R, 8), 25: (G, 8),
    26: (B, 8), 27: (Y, 8), 28: (Y, 9), 29: (G, 9), 30: (R, 9),
}


class AssignmentConflict(ValueError):
    pass


class UndefinedMetricError(ValueError):
    pass


@dataclass(frozen=True)
class WavelengthTable:
    responsivity: dict = field(default_factory=lambda: {R: 0.4, Y: 0.35, G: 0.3, B: 0.2})

    def __post_init__(self):
        if any(v <= 0 for v in self.responsivity.values()):
            raise ValueError("responsivities must be positive")

    def __getitem__(self, wavelength) -> float:
        return self.responsivity[Wavelength(wavelength)]


class WdmaAssignment(Mapping):
    """Read-only mapping rack id -> (wavelength, light unit id)."""

    def __init__(self, entries: Mapping[int, tuple], per_row: int = 10):
        self._entries = {int(k): (Wavelength(w), int(u)) for k, (w, u) in sorted(entries.items())}
        self.per_row = per_row
        seen: dict[tuple, int] = {}
        for rack, pair in self._entries.items():
            if pair in seen:
                raise AssignmentConflict(
                    f"racks {seen[pair]} and {rack} both assigned ({pair[0].value}, unit {pair[1]})")
            seen[pair] = rack

    def __getitem__(self, rack: int) -> tuple[Wavelength, int]:
        return self._entries[rack]

    def __iter__(self) -> Iterator[int]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def row_of(self, rack: int) -> int:
        return (rack - 1) // self.per_row + 1

    def transmits(self, unit: int, wavelength) -> bool:
        return (Wavelength(wavelength), unit) in self._entries.values()


def build_wdma_assignment(config: SceneConfig | None = None, n_racks: int | None = None) -> WdmaAssignment:
    """The configured rack assignment, or the default table when none is given."""
    config = config or SceneConfig()
    per_row = config.racks.per_row
    n_racks = n_racks or per_row * len(config.racks.row_x)
    entries = config.wdma.assignment
    if entries is None:
        table = {k: v for k, v in DEFAULT_ASSIGNMENT.items() if k <= n_racks}
        return WdmaAssignment(table, per_row)
    table = {}
    for e in entries:
        if e.rack > n_racks:
            raise ValueError(f"assignment names rack {e.rack} but the pod has {n_racks} racks")
        if e.unit > len(config.light_units.positions):
            raise ValueError(f"assignment names light unit {e.unit} which does not exist")
        if e.rack in table:
            raise AssignmentConflict(f"rack {e.rack} is assigned twice")
        table[e.rack] = (e.wavelength, e.unit)
    return WdmaAssignment(table, per_row)


def validate_neighbours(a: Mapping[int, tuple], per_row: int | None = None) -> list[Diagnostic]:
    """Warn on adjacent racks sharing a wavelength, error if they also share
    the light unit.  Accepts any rack -> (wavelength, unit) mapping."""
    per_row = per_row or getattr(a, "per_row", 10)
    out = []
    for rack in sorted(a):
        nxt = rack + 1
        if nxt not in a or (rack - 1) // per_row != (nxt - 1) // per_row:
            continue
        (w1, u1), (w2, u2) = a[rack], a[nxt]
        w1, w2 = Wavelength(w1), Wavelength(w2)
        if w1 != w2:
            continue
        if u1 == u2:
            out.append(Diagnostic("error", "neighbour-conflict",
                                  f"racks {rack} and {nxt} share {w1.value} on unit {u1}"))
        else:
            out.append(Diagnostic("warning", "neighbour-wavelength",
                                  f"racks {rack} and {nxt} both use {w1.value} (units {u1} and {u2})"))
    return out


def interferers_for(rack: int, a: WdmaAssignment) -> list[int]:
    """Units other than the rack's own that modulate the rack's wavelength."""
    if rack not in a:
        raise KeyError(f"rack {rack} has no assignment")
    w, own = a[rack]
    return sorted({u for (wl, u) in a.values() if wl == w and u != own})


def ook_levels(p_avg: float) -> tuple[float, float]:
    """Logic-1 and logic-0 powers for average power ``p_avg`` with full extinction."""
    if p_avg < 0:
        raise ValueError("average power must be non-negative")
    return 2.0 * p_avg, 0.0


@dataclass(frozen=True)
class NoiseModel:
    noise_density: float = 4.5e-12  # preamplifier, A/sqrt(Hz)
    background_current: float = 0.0  # A
    q: float = Q_ELECTRON


def noise_sigma(model: NoiseModel, responsivity: float, p_total: float, bandwidth: float) -> float:
    """Total noise current (A): shot noise of the received light plus white
    preamplifier noise, both over ``bandwidth``."""
    shot = 2 * model.q * (responsivity * p_total + model.background_current) * bandwidth
    return math.sqrt(shot + model.noise_density**2 * bandwidth)


@dataclass(frozen=True)
class LinkPowers:
    p_s1: float
    p_s0: float
    interferers: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        if self.p_s0 < 0 or self.p_s1 < self.p_s0:
            raise ValueError("desired powers need 0 <= p_s0 <= p_s1")
        if any(p0 < 0 or p1 < 0 for p1, p0 in self.interferers):
            raise ValueError("interferer powers must be non-negative")

    @property
    def average_total(self) -> float:
        """Mean optical power of desired plus interfering light."""
        return (self.p_s1 + self.p_s0) / 2 + sum((p1 + p0) / 2 for p1, p0 in self.interferers)


def sinr(powers: LinkPowers, responsivity: float, sigma: float) -> float:
    signal = (responsivity * (powers.p_s1 - powers.p_s0)) ** 2
    denom = sigma**2 + sum((responsivity * (p1 - p0)) ** 2 for p1, p0 in powers.interferers)
    if denom == 0:
        if signal == 0:
            return 0.0
        log.warning("zero noise and interference: SINR is infinite")
        return math.inf
    return signal / denom


def ber_ook(sinr_linear):
    """OOK bit error probability Q(sqrt(SINR))."""
    s = np.asarray(sinr_linear, dtype=float)
    if np.any(s < 0):
        raise ValueError("SINR must be non-negative")
    p = 0.5 * erfc(np.sqrt(s) / math.sqrt(2))
    return float(p) if p.ndim == 0 else p


def to_db(x: float) -> float:
    return 10 * math.log10(x) if x > 0 else -math.inf


def from_db(x: float) -> float:
    return 10 ** (x / 10)


def _check_nonzero(cir: ImpulseResponse) -> np.ndarray:
    h = np.asarray(cir.bins, dtype=float)
    if not np.any(h):
        raise UndefinedMetricError("impulse response is all zero")
    return h


def delay_spread(cir: ImpulseResponse) -> float:
    """RMS delay spread with squared-power weighting."""
    h = _check_nonzero(cir)
    t = cir.delays
    w = h**2
    mu = np.sum(t * w) / np.sum(w)
    return float(math.sqrt(np.sum((t - mu) ** 2 * w) / np.sum(w)))


def bandwidth_3db(cir: ImpulseResponse, min_fft: int = 1 << 16) -> float:
    """Lowest frequency where |H(f)|/|H(0)| drops below 1/sqrt(2).

    |H| is the magnitude of the optical transfer function (DFT of the binned
    response, zero padded to at least ``min_fft`` points) with linear
    interpolation between frequency samples.  The Nyquist frequency is
    returned when there is no crossing.
    """
    h = _check_nonzero(cir)
    n = max(min_fft, 1 << int(math.ceil(math.log2(4 * len(h)))))
    mag = np.abs(np.fft.rfft(h, n))
    ratio = mag / mag[0]
    thr = 1 / math.sqrt(2)
    below = np.flatnonzero(ratio < thr)
    nyquist = 1 / (2 * cir.bin_width)
    if len(below) == 0:
        return nyquist
    k = int(below[0])
    df = 1 / (n * cir.bin_width)
    r0, r1 = ratio[k - 1], ratio[k]
    return float((k - 1 + (r0 - thr) / (r0 - r1)) * df)


def supported_rate(bandwidth: float, sinr_at: Callable[[float], float], threshold_db: float = 15.6,
                   step: float = 0.5e9, max_rate: float = 8.5e9) -> float:
    """Largest multiple of ``step`` (up to ``max_rate``) not above the
    channel bandwidth whose SINR, with noise bandwidth equal to the rate,
    meets ``threshold_db``; 0 if none does."""
    threshold = from_db(threshold_db)
    k_max = int(math.floor(max_rate / step + 1e-9))
    for k in range(k_max, 0, -1):
        rate = k * step
        if rate > bandwidth:
            continue
        if sinr_at(rate) >= threshold:
            return rate
    return 0.0


@dataclass(frozen=True)
class LinkParams:
    responsivity: WavelengthTable = WavelengthTable()
    noise: NoiseModel = NoiseModel()
    sinr_threshold_db: float = 15.6
    rate_step: float = 0.5e9
    rate_max: float = 8.5e9

    @classmethod
    def from_config(cls, config: SceneConfig) -> "LinkParams":
        c = config.link
        return cls(WavelengthTable(dict(c.responsivity)), NoiseModel(c.noise_density, c.background_current),
                   c.sinr_threshold_db, c.rate_step, c.rate_max)


@dataclass(frozen=True)
class LinkReport:
    rack: int
    row: int
    wavelength: str
    unit: int
    receiver: str
    element: str
    element_id: int
    sinr_db: float
    ber: float
    power_w: float
    delay_spread_s: float
    bandwidth_hz: float
    rate_bps: float
    noise_bandwidth_hz: float
    interferers: tuple[int, ...]

    def as_dict(self) -> dict:
        d = asdict(self)
        d["interferers"] = list(self.interferers)
        return d


def link_powers(element: ElementSignal, unit: int, wavelength, interferers) -> LinkPowers:
    p1, p0 = ook_levels(element.power(unit, wavelength))
    return LinkPowers(p1, p0, tuple(ook_levels(element.power(u, wavelength)) for u in interferers))


def _sinr_at(powers: LinkPowers, resp: float, noise: NoiseModel) -> Callable[[float], float]:
    return lambda bw: sinr(powers, resp, noise_sigma(noise, resp, powers.average_total, bw))


def evaluate_pod(scene: Scene, receiver_type: str, assignment: WdmaAssignment | None = None,
                 signals: dict | None = None, params: LinkParams | None = None,
                 workers: int | None = None) -> list[LinkReport]:
    """Per-rack link reports for one receiver type.

    Candidates are the row receiver's elements that pass the rack's
    wavelength; the element with the best SINR at the lowest grid rate is
    kept.  The reported SINR uses the supported rate as noise bandwidth (the
    lowest grid rate when no rate is supported).
    """
    assignment = assignment if assignment is not None else build_wdma_assignment(scene.config, len(scene.racks))
    params = params or LinkParams.from_config(scene.config)
    if signals is None:
        signals = collect_pod(scene, (receiver_type,), workers=workers)
    reports = []
    for rack_id in assignment:
        wavelength, unit = assignment[rack_id]
        row = scene.rack(rack_id).row
        others = interferers_for(rack_id, assignment)
        resp = params.responsivity[wavelength]
        scored = []
        for el in signals[(row, receiver_type)]:
            if not el.passes(wavelength):
                continue
            powers = link_powers(el, unit, wavelength, others)
            scored.append((el, _sinr_at(powers, resp, params.noise)(params.rate_step)))
        best, _ = select_best(scored)
        powers = link_powers(best, unit, wavelength, others)
        sinr_at = _sinr_at(powers, resp, params.noise)
        cir = best.cir(unit, wavelength)
        if cir.power > 0:
            spread, bw = delay_spread(cir), bandwidth_3db(cir)
            rate = supported_rate(bw, sinr_at, params.sinr_threshold_db, params.rate_step, params.rate_max)
        else:
            spread, bw, rate = math.nan, math.nan, 0.0
        noise_bw = rate if rate > 0 else params.rate_step
        s = sinr_at(noise_bw)
        reports.append(LinkReport(
            rack=rack_id, row=row, wavelength=wavelength.value, unit=unit, receiver=receiver_type,
            element=best.label, element_id=best.element_id, sinr_db=to_db(s), ber=ber_ook(s),
            power_w=cir.power, delay_spread_s=spread, bandwidth_hz=bw, rate_bps=rate,
            noise_bandwidth_hz=noise_bw, interferers=tuple(others)))
    return reports

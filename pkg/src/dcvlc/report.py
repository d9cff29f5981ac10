"""JSON and CSV export of link reports and per-element diagnostics."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

from . import __version__
from .config import WAVELENGTHS
from .linkbudget import LinkReport
from .scene import Scene, scene_hash

SCHEMA_VERSION = 1

CSV_COLUMNS = ["rack", "row", "wavelength", "unit", "receiver", "element", "sinr_db", "ber",
               "power_w", "delay_spread_s", "bandwidth_hz", "rate_bps"]
ELEMENT_COLUMNS = ["row", "receiver_type", "element_id", "unit_id", "wavelength", "power_w"]


@dataclass(frozen=True)
class RunManifest:
    config_path: str | None
    subcommand: str
    overrides: dict = field(default_factory=dict)
    tool_version: str = __version__
    scene_hash: str = ""


def _clean(x):
    """JSON has no NaN/inf; map them to null."""
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    return x


def build_report(manifest: RunManifest, scene: Scene, results: dict[str, list[LinkReport]]) -> dict:
    return _clean({
        "schema_version": SCHEMA_VERSION,
        "manifest": asdict(manifest),
        "scene_hash": manifest.scene_hash or scene_hash(scene),
        "bandwidth_definition": "3-dB point of the optical transfer function |H(f)|/|H(0)|",
        "parameters": scene.config.model_dump(mode="json"),
        "results": {kind: [r.as_dict() for r in reps] for kind, reps in results.items()},
    })


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2, allow_nan=False) + "\n"


def write_csv(fh, results: dict[str, list[LinkReport]]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for reps in results.values():
        for r in reps:
            d = r.as_dict()
            w.writerow([_fmt(d[c]) for c in CSV_COLUMNS])


def write_elements_csv(fh, signals: dict) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(ELEMENT_COLUMNS)
    for (row, kind) in sorted(signals):
        for el in signals[(row, kind)]:
            for uid in sorted(el.geometric):
                for wl in WAVELENGTHS:
                    if el.passes(wl):
                        w.writerow([row, kind, el.label, uid, wl.value, _fmt(el.power(uid, wl))])


def _fmt(v):
    return repr(v) if isinstance(v, float) else v

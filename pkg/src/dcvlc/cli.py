"""Command-line front end.

Exit codes: 0 success, 1 validation errors, 2 bad configuration or
arguments, 3 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, Wavelength, config_from_dict, load_config
from .linkbudget import AssignmentConflict, build_wdma_assignment, evaluate_pod, validate_neighbours
from .raytrace import ImpulseResponse
from .receivers import adr_collect, collect_pod, imr_collect, receivers_from_config
from .report import RunManifest, build_report, dumps_report, write_csv, write_elements_csv
from .scene import Diagnostic, PlacementError, build_scene, scene_dump, scene_hash, validate_scene

log = logging.getLogger("dcvlc")

EXIT_OK, EXIT_INVALID, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _load(args):
    try:
        config = load_config(args.config)
    except FileNotFoundError:
        raise CliError(f"config file not found: {args.config}", EXIT_CONFIG)
    except OSError as exc:
        raise CliError(f"cannot read config {args.config}: {exc}", EXIT_CONFIG)
    except ConfigError as exc:
        raise CliError(f"invalid config {args.config or '(defaults)'}: {exc}", EXIT_CONFIG)
    return config


def _overrides(args) -> dict:
    o = {
        "max_order": getattr(args, "max_order", None),
        "resolution_first": getattr(args, "resolution_first", None),
        "resolution_second": getattr(args, "resolution_second", None),
    }
    return {k: v for k, v in o.items() if v is not None}


def _scene(config, overrides):
    try:
        return build_scene(config.with_overrides(**overrides))
    except (ConfigError, PlacementError) as exc:
        raise CliError(str(exc), EXIT_CONFIG)


@contextmanager
def _open_out(path, what):
    if path in (None, "-"):
        yield sys.stdout
        return
    try:
        fh = open(path, "w", newline="")
    except OSError as exc:
        raise CliError(f"cannot write {what} {path}: {exc}", EXIT_IO)
    try:
        yield fh
    except OSError as exc:
        raise CliError(f"cannot write {what} {path}: {exc}", EXIT_IO)
    finally:
        fh.close()


def _run_simulation(scene, receivers, workers, manifest):
    try:
        assignment = build_wdma_assignment(scene.config, len(scene.racks))
    except ValueError as exc:
        raise CliError(f"invalid assignment: {exc}", EXIT_CONFIG)
    log.info("tracing %d light units, receivers: %s", len(scene.light_units), ", ".join(receivers))
    signals = collect_pod(scene, receivers, workers=workers)
    results = {kind: evaluate_pod(scene, kind, assignment, signals=signals) for kind in receivers}
    return build_report(manifest, scene, results), results, signals


def _write_outputs(args, report, results, signals):
    with _open_out(args.out, "report") as fh:
        fh.write(dumps_report(report))
    if args.csv:
        with _open_out(args.csv, "CSV") as fh:
            write_csv(fh, results)
    if args.elements_csv:
        with _open_out(args.elements_csv, "element CSV") as fh:
            write_elements_csv(fh, signals)


def cmd_simulate(args) -> int:
    if args.seedless:
        raise CliError("--seedless is reserved: the simulator is fully deterministic and uses no seed",
                       EXIT_CONFIG)
    receivers = list(dict.fromkeys(args.receiver or ["adr", "imr"]))
    config = _load(args)
    overrides = _overrides(args)
    scene = _scene(config, overrides)
    manifest = RunManifest(
        config_path=args.config, subcommand="simulate",
        overrides={**overrides, "receivers": receivers},
        tool_version=__version__, scene_hash=scene_hash(scene))
    report, results, signals = _run_simulation(scene, receivers, args.workers, manifest)
    _write_outputs(args, report, results, signals)
    for kind, reps in results.items():
        rates = [r.rate_bps for r in reps]
        log.info("%s: %d racks, SINR %.2f..%.2f dB, rate %.1f..%.1f Gbps", kind, len(reps),
                 min(r.sinr_db for r in reps), max(r.sinr_db for r in reps),
                 min(rates) / 1e9, max(rates) / 1e9)
    return EXIT_OK


def cmd_rerun(args) -> int:
    """Reproduce a report from the manifest and parameters it embeds."""
    try:
        old = json.loads(Path(args.report).read_text())
    except OSError as exc:
        raise CliError(f"cannot read report {args.report}: {exc}", EXIT_CONFIG)
    except json.JSONDecodeError as exc:
        raise CliError(f"malformed report {args.report}: {exc}", EXIT_CONFIG)
    try:
        config = config_from_dict(old["parameters"])
        m = old["manifest"]
    except (KeyError, ConfigError) as exc:
        raise CliError(f"report {args.report} has no usable manifest: {exc}", EXIT_CONFIG)
    scene = _scene(config, {})
    manifest = RunManifest(m["config_path"], m["subcommand"], m["overrides"], m["tool_version"], scene_hash(scene))
    if manifest.scene_hash != m["scene_hash"]:
        log.warning("scene hash differs from the recorded run")
    report, results, signals = _run_simulation(scene, m["overrides"].get("receivers", ["adr", "imr"]),
                                               args.workers, manifest)
    _write_outputs(args, report, results, signals)
    return EXIT_OK


def _select_element(elements, selector: str):
    for el in elements:
        if el.label == selector or (selector.isdigit() and el.element_id == int(selector)):
            return el
    labels = ", ".join(el.label for el in elements)
    raise CliError(f"unknown element {selector!r}; choose from: {labels}", EXIT_CONFIG)


def cmd_cir(args) -> int:
    config = _load(args)
    overrides = _overrides(args)
    scene = _scene(config, overrides)
    try:
        unit = scene.unit(args.unit)
    except KeyError:
        raise CliError(f"unknown light unit {args.unit}", EXIT_CONFIG)
    if not 1 <= args.row <= scene.n_rows:
        raise CliError(f"unknown row {args.row}; the pod has {scene.n_rows}", EXIT_CONFIG)
    position = scene.receiver_positions[args.row - 1][0]
    collect = adr_collect if args.receiver == "adr" else imr_collect
    # element ids/labels are known without tracing
    adr, imr = receivers_from_config(scene.config)
    model = adr if args.receiver == "adr" else imr
    labels = {lab: eid for eid, lab, _, _ in model.elements()}
    if args.element not in labels and not (args.element.isdigit() and int(args.element) in labels.values()):
        raise CliError(f"unknown element {args.element!r}; choose from: {', '.join(labels)}", EXIT_CONFIG)
    elements = collect(scene, position, [unit], max_order=overrides.get("max_order"),
                       workers=args.workers, row=args.row)
    el = _select_element(elements, args.element)
    cir: ImpulseResponse = el.cir(unit.id, args.wavelength)
    if not np.any(cir.bins):
        log.warning("impulse response is all zero (blocked, filtered or outside the field of view)")
    with _open_out(args.out, "CIR") as fh:
        cir.write_csv(fh)
    return EXIT_OK


def cmd_validate(args) -> int:
    config = _load(args)
    diags: list[Diagnostic] = []
    try:
        scene = build_scene(config)
    except PlacementError as exc:
        diags.append(Diagnostic("error", "placement", str(exc)))
        scene = None
    if scene is not None:
        diags.extend(validate_scene(scene))
    per_row = config.racks.per_row
    try:
        assignment = build_wdma_assignment(config)
        diags.extend(validate_neighbours(assignment))
    except AssignmentConflict as exc:
        diags.append(Diagnostic("error", "assignment-conflict", str(exc)))
        # still report neighbour problems on the raw table
        raw = {e.rack: (e.wavelength, e.unit) for e in config.wdma.assignment or []}
        diags.extend(d for d in validate_neighbours(raw, per_row) if d.level == "warning")
    except ValueError as exc:
        diags.append(Diagnostic("error", "assignment", str(exc)))
    for d in diags:
        print(d)
    return EXIT_INVALID if any(d.level == "error" for d in diags) else EXIT_OK


def cmd_scene_dump(args) -> int:
    config = _load(args)
    scene = _scene(config, _overrides(args))
    d = scene_dump(scene, include_patches=args.patches)
    d["scene_hash"] = scene_hash(scene)
    with _open_out(args.out, "scene dump") as fh:
        fh.write(json.dumps(d, indent=2) + "\n")
    return EXIT_OK


def _add_common(p, tracing=True):
    p.add_argument("--config", help="YAML configuration file (defaults to the built-in pod)")
    if tracing:
        p.add_argument("--max-order", type=int, choices=[0, 1, 2], help="highest reflection order")
        p.add_argument("--resolution-first", type=float, metavar="M", help="first-bounce patch size, metres")
        p.add_argument("--resolution-second", type=float, metavar="M", help="second-bounce patch size, metres")
        p.add_argument("--workers", type=int, default=None, help="threads for second-order tracing")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dcvlc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-q", "--quiet", action="store_true", help="only warnings on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="evaluate every rack link and write reports")
    _add_common(p)
    p.add_argument("--receiver", action="append", choices=["adr", "imr"], help="receiver type (repeatable)")
    p.add_argument("--out", default="-", help="JSON report path ('-' for stdout)")
    p.add_argument("--csv", help="flat per-rack CSV path")
    p.add_argument("--elements-csv", help="per-element received power CSV path")
    p.add_argument("--seedless", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("rerun", help="reproduce a report from its embedded manifest")
    p.add_argument("report")
    p.add_argument("--out", default="-")
    p.add_argument("--csv")
    p.add_argument("--elements-csv")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_rerun)

    p = sub.add_parser("cir", help="export one link's impulse response as CSV")
    _add_common(p)
    p.add_argument("--unit", type=int, required=True)
    p.add_argument("--wavelength", type=Wavelength, choices=list(Wavelength), required=True)
    p.add_argument("--row", type=int, required=True)
    p.add_argument("--receiver", choices=["adr", "imr"], default="adr")
    p.add_argument("--element", required=True, help="element label (b1-red, p5, ...) or id")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_cir)

    p = sub.add_parser("validate", help="check scene placement and the rack assignment")
    _add_common(p, tracing=False)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("scene", help="scene inspection")
    scene_sub = p.add_subparsers(dest="scene_command", required=True)
    d = scene_sub.add_parser("dump", help="write the constructed scene as JSON")
    _add_common(d)
    d.add_argument("--patches", action="store_true", help="include every patch")
    d.add_argument("--out", default="-")
    d.set_defaults(func=cmd_scene_dump)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"dcvlc: error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())

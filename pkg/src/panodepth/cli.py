"""Command-line entry point.

Exit codes: 0 success, 1 divergence or missing data, 2 usage/config error,
3 I/O or format error. Errors are printed to stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from panodepth import baselines, ingest, synth
from panodepth.core import EvalFrame, PdcqConfig, validate
from panodepth.pdcq import INF, EmptyAccumulatorError, evaluate_frames, finalize, frame_stats_multi, lambda_key

log = logging.getLogger("panodepth")

EXIT_OK = 0
EXIT_DATA = 1
EXIT_USAGE = 2
EXIT_IO = 3

THREADS_ENV = "PANODEPTH_THREADS"
FORMATS = ("json", "csv", "markdown")


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str, **extra):
        super().__init__(message)
        self.code = code
        self.kind = kind
        self.extra = extra


def _emit_error(code: int, kind: str, message: str, **extra) -> int:
    doc = {"error": kind, "message": message, "exit_code": code}
    doc.update(extra)
    print(json.dumps(doc, sort_keys=True), file=sys.stderr)
    return code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(EXIT_USAGE, "usage", message)


# --- run configuration ------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    manifest: Path
    predictions: tuple  # (name, root) pairs
    output: Optional[Path] = None
    config: PdcqConfig = field(default_factory=PdcqConfig)
    threads: int = 1
    format: str = "json"

    def __post_init__(self):
        if self.format not in FORMATS:
            raise CliError(EXIT_USAGE, "config", f"unknown output format {self.format!r}")
        if self.threads < 1:
            raise CliError(EXIT_USAGE, "config", f"thread count must be >= 1, got {self.threads}")


def _float_list(text: str) -> tuple:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _int_list(text: str) -> tuple:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _prediction_arg(text: str) -> tuple:
    name, sep, path = text.partition("=")
    if not sep:
        path = text
        name = Path(text).name or text
    return name, Path(path)


def default_threads() -> int:
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return 1
    try:
        return int(raw)
    except ValueError:
        raise CliError(EXIT_USAGE, "config", f"{THREADS_ENV} must be an integer, got {raw!r}")


def _config_from_args(args, manifest: Optional[ingest.Manifest] = None) -> PdcqConfig:
    base = PdcqConfig()
    kw = {
        "lambdas": args.lambdas or base.lambdas,
        "deltas": args.deltas or (manifest.deltas if manifest is not None else base.deltas),
        "min_depth": args.min_depth if args.min_depth is not None else base.min_depth,
        "max_depth": args.max_depth if args.max_depth is not None else base.max_depth,
        "overall_aggregation": args.aggregation or base.overall_aggregation,
        "filter_mode": args.filter_mode or base.filter_mode,
    }
    try:
        return PdcqConfig(**kw)
    except ValueError as exc:
        raise CliError(EXIT_USAGE, "config", str(exc))


# --- evaluate ---------------------------------------------------------------


def _evaluate_method(manifest: ingest.Manifest, name: str, root: Path, config: PdcqConfig, threads: int) -> dict:
    refs, missing = ingest.plan_eval_frames(manifest, ingest.PredictionLayout(root), config)
    for m in missing:
        log.warning("%s: missing prediction for %s t=%d delta=%d", name, m.sequence_id, m.t, m.delta)
    void = manifest.class_table.void_class_id
    classes = manifest.class_table
    acc = evaluate_frames(refs, classes, config, threads=threads, load=lambda r: ingest.load_eval_frame(r, void))
    try:
        report = finalize(acc, classes, config).to_dict()
    except EmptyAccumulatorError:
        report = None
    return {
        "name": name,
        "coverage": {
            "expected": len(refs) + len(missing),
            "evaluated": len(refs),
            "missing": [m.to_dict() for m in missing],
        },
        "report": report,
    }


def cmd_evaluate(run: RunConfig) -> tuple[int, dict]:
    """Evaluate every prediction root; returns (exit code, canonical JSON document)."""
    try:
        manifest = ingest.load_manifest(run.manifest)
    except ingest.IngestError as exc:
        raise CliError(EXIT_IO, "manifest", str(exc))
    methods = []
    for name, root in run.predictions:
        try:
            methods.append(_evaluate_method(manifest, name, root, run.config, run.threads))
        except ingest.IngestError as exc:
            raise CliError(EXIT_IO, "format", f"{name}: {exc}")
        except ValueError as exc:
            raise CliError(EXIT_IO, "format", f"{name}: {exc}")
    doc = {
        "dataset": manifest.dataset_name,
        "config": run.config.to_dict(),
        "methods": methods,
    }
    incomplete = any(m["coverage"]["missing"] or m["report"] is None for m in methods)
    return (EXIT_DATA if incomplete else EXIT_OK), doc


def render_json(doc: dict) -> str:
    return json.dumps(doc, indent=2, allow_nan=False) + "\n"


def _pct(x) -> str:
    return "-" if x is None else f"{x:.2f}"


def _m3(x) -> str:
    return "-" if x is None else f"{x:.3f}"


def render_csv(doc: dict) -> str:
    """Long format: one row per (method, horizon, lambda, subset) score."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "delta", "lambda", "subset", "pq", "sq", "rq", "n_classes"])
    depth_rows = []
    for m in doc["methods"]:
        rep = m["report"]
        if rep is None:
            continue
        for d, hz in rep["horizons"].items():
            cells = list(hz["pdcq"].items()) + [("inf", hz["pq"])]
            for lam, cell in cells:
                for subset in ("all", "things", "stuff"):
                    s = cell[subset]
                    w.writerow([m["name"], d, lam, subset, s["pq"], s["sq"], s["rq"], s["n_classes"]])
            dm = hz["depth"]
            depth_rows.append([m["name"], d, dm["abs_rel"], dm["rmse"], dm["delta1"], dm["delta2"], dm["delta3"],
                               dm["valid_pixel_count"]])
    w.writerow([])
    w.writerow(["method", "delta", "abs_rel", "rmse", "delta1", "delta2", "delta3", "valid_pixel_count"])
    for row in depth_rows:
        w.writerow(row)
    return buf.getvalue()


def render_markdown(doc: dict) -> str:
    """Tables derived purely from the JSON document."""
    methods = [m for m in doc["methods"] if m["report"] is not None]
    lines = [f"# Evaluation: {doc['dataset'] or 'dataset'}", ""]
    if not methods:
        lines.append("No method produced any evaluable frame.")
        return "\n".join(lines) + "\n"
    deltas = methods[0]["report"]["deltas"]
    lams = [lambda_key(l) for l in methods[0]["report"]["lambdas"]]

    lines += ["## Forecast quality per horizon", ""]
    head = ["Method"] + [f"Δ={d} {k}" for d in deltas for k in ("PDC-Q", "PQ", "RMSE")]
    lines += ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    for m in methods:
        row = [m["name"]]
        for d in deltas:
            hz = m["report"]["horizons"].get(str(d))
            if hz is None:
                row += ["-", "-", "-"]
            else:
                row += [_pct(hz["pdcq_avg"]), _pct(hz["pq"]["all"]["pq"]), _m3(hz["depth"]["rmse"])]
        lines.append("| " + " | ".join(row) + " |")

    lines += ["", "## PDC-Q per depth threshold (over horizons)", ""]
    head = ["Method"] + [f"λ={l}" for l in lams] + ["avg"]
    lines += ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    for m in methods:
        ov = m["report"]["overall"]
        lines.append("| " + " | ".join([m["name"]] + [_pct(ov["pdcq"][l]) for l in lams]
                                       + [_pct(ov["pdcq_avg"])]) + " |")

    lines += ["", "## Panoptic quality (no depth filter)", ""]
    head = ["Method", "Δ"] + [f"{s} {k}" for s in ("All", "Things", "Stuff") for k in ("PQ", "SQ", "RQ")]
    lines += ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    for m in methods:
        for d, hz in m["report"]["horizons"].items():
            row = [m["name"], d]
            for s in ("all", "things", "stuff"):
                c = hz["pq"][s]
                row += [_pct(c["pq"]), _pct(c["sq"]), _pct(c["rq"])]
            lines.append("| " + " | ".join(row) + " |")

    lines += ["", "## Depth accuracy", ""]
    head = ["Method", "Δ", "AbsRel", "RMSE", "δ<1.25", "δ<1.25²", "δ<1.25³"]
    lines += ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    for m in methods:
        for d, hz in m["report"]["horizons"].items():
            dm = hz["depth"]
            lines.append("| " + " | ".join([m["name"], d, _m3(dm["abs_rel"]), _m3(dm["rmse"]), _m3(dm["delta1"]),
                                           _m3(dm["delta2"]), _m3(dm["delta3"])]) + " |")

    incomplete = [m for m in doc["methods"] if m["coverage"]["missing"]]
    if incomplete:
        lines += ["", "## Missing predictions", ""]
        for m in incomplete:
            cov = m["coverage"]
            lines.append(f"- {m['name']}: {len(cov['missing'])} of {cov['expected']} frame pairs missing")
    return "\n".join(lines) + "\n"


RENDERERS = {"json": render_json, "csv": render_csv, "markdown": render_markdown}


def _write_output(text: str, output: Optional[Path]) -> None:
    if output is None:
        sys.stdout.write(text)
        return
    try:
        output.parent.mkdir(parents=True, exist_ok=True)
        output.write_text(text)
    except OSError as exc:
        raise CliError(EXIT_IO, "io", f"cannot write {output}: {exc}")


# --- synth ------------------------------------------------------------------


def cmd_synth(spec_path: Optional[Path], output: Path) -> int:
    try:
        suite = synth.load_suite(spec_path) if spec_path is not None else synth.default_suite()
    except OSError as exc:
        raise CliError(EXIT_IO, "io", f"cannot read {spec_path}: {exc}")
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_USAGE, "spec", f"{spec_path}: invalid JSON ({exc})")
    except (synth.SceneSpecError, ValueError) as exc:
        raise CliError(EXIT_USAGE, "spec", str(exc))

    void = suite.classes.void_class_id
    sequences = []
    for sid, spec in suite.scenes.items():
        frames = []
        for k, (pan, depth) in enumerate(synth.render_sequence(spec)):
            pan_path = output / "gt" / sid / f"{k:06d}_pan.png"
            depth_path = output / "gt" / sid / f"{k:06d}_depth.png"
            ingest.write_panoptic(pan, pan_path, void)
            ingest.write_depth(depth, depth_path)
            frames.append(ingest.FrameRecord(k, pan_path, depth_path))
        sequences.append(ingest.SequenceRecord(sid, tuple(frames)))
    manifest = ingest.Manifest(suite.dataset_name, suite.classes, tuple(sequences), suite.observed_window,
                               tuple(suite.deltas), output)
    ingest.write_manifest(manifest, output / "manifest.json")
    log.info("wrote %d sequence(s) to %s", len(sequences), output)
    return EXIT_OK


# --- baseline ---------------------------------------------------------------


def cmd_baseline(name: str, manifest_path: Path, output: Path, deltas: Optional[tuple] = None) -> int:
    if name not in baselines.FORECASTERS:
        raise CliError(EXIT_USAGE, "usage", f"unknown baseline {name!r}; choose from {sorted(baselines.FORECASTERS)}")
    try:
        manifest = ingest.load_manifest(manifest_path)
    except ingest.IngestError as exc:
        raise CliError(EXIT_IO, "manifest", str(exc))
    deltas = tuple(deltas or manifest.deltas)
    classes = manifest.class_table
    void = classes.void_class_id
    layout = ingest.PredictionLayout(output)
    cache: dict = {}

    def load(rec: ingest.FrameRecord):
        if rec.panoptic not in cache:
            cache[rec.panoptic] = (ingest.read_panoptic(rec.panoptic, void), ingest.read_depth(rec.depth))
        return cache[rec.panoptic]

    written = 0
    try:
        for seq, t, d, _ in ingest.expected_targets(manifest, deltas):
            window = baselines.ObservedWindow([load(r) for r in seq.window(t, manifest.observed_window)])
            pan, depth = baselines.forecast(name, window, d, classes)
            layout.write(seq.sequence_id, t, d, pan, depth, void)
            written += 1
    except ingest.IngestError as exc:
        raise CliError(EXIT_IO, "format", str(exc))
    log.info("%s: wrote %d forecast(s) to %s", name, written, output)
    return EXIT_OK


# --- oracle check -----------------------------------------------------------

ORACLE_LAMBDAS = (0.1, 0.25, 0.5, INF)
ORACLE_TOLERANCE = 1e-12


def oracle_divergence(pred_pan, pred_depth, gt_pan, gt_depth, classes, config: PdcqConfig = PdcqConfig(),
                      lambdas=ORACLE_LAMBDAS, fault: bool = False) -> Optional[dict]:
    """Compare pipeline and brute-force per-class scores on one frame.

    Returns ``None`` on agreement, else the first diverging (class, lambda) cell.
    """
    frame = EvalFrame("oracle", 0, config.deltas[0], pred_pan, pred_depth, gt_pan, gt_depth)
    cfg = PdcqConfig(lambdas=tuple(l for l in lambdas if not math.isinf(l)) or config.lambdas,
                     deltas=config.deltas, min_depth=config.min_depth, max_depth=config.max_depth,
                     inclusive=config.inclusive)
    report = finalize(frame_stats_multi(frame, list(lambdas), classes, cfg), classes, cfg)
    for lam in lambdas:
        per_class = report.cells[(lam, frame.delta)].per_class
        got = {c: s.pq for c, s in per_class.items()}
        if fault and lam == lambdas[0] and got:
            c0 = min(got)
            got[c0] += 1e-6
        if math.isinf(lam):
            want = synth.brute_force_pq(pred_pan, gt_pan, classes)
        else:
            want = synth.brute_force_pdcq((pred_pan, pred_depth), (gt_pan, gt_depth), lam, classes,
                                          cfg.min_depth, cfg.max_depth, cfg.inclusive)
        for c in sorted(set(got) | set(want)):
            a = got.get(c)
            b = want[c].pq if c in want else None
            if a is None or b is None or abs(a - b) > ORACLE_TOLERANCE:
                return {"class_id": c, "lambda": lambda_key(lam), "pipeline": a, "oracle": b}
    return None


def cmd_oracle_check(size: int, trials: int, seed: int, inject_fault: bool = False) -> tuple[int, dict]:
    if not 1 <= size <= synth.ORACLE_MAX_SIDE:
        raise CliError(EXIT_USAGE, "config", f"size must lie in [1, {synth.ORACLE_MAX_SIDE}], got {size}")
    if trials < 0:
        raise CliError(EXIT_USAGE, "config", f"trials must be >= 0, got {trials}")
    rng = np.random.default_rng(seed)
    checks = 0
    for trial in range(trials):
        inst = synth.random_instance(rng, size, size)
        div = oracle_divergence(*inst, synth.DEFAULT_CLASSES, fault=inject_fault)
        checks += 1
        if div is not None:
            div["trial"] = trial
            return EXIT_DATA, {"checks": checks, "agree": False, "divergence": div}
    return EXIT_OK, {"checks": checks, "agree": True, "divergence": None}


# --- validate ---------------------------------------------------------------


def cmd_validate(manifest_path: Path, predictions: Optional[Path] = None,
                 deltas: Optional[tuple] = None) -> tuple[int, dict]:
    try:
        manifest = ingest.load_manifest(manifest_path)
    except ingest.IngestError as exc:
        raise CliError(EXIT_IO, "manifest", str(exc))
    classes = manifest.class_table
    void = classes.void_class_id
    items = [(f"{s.sequence_id}/{f.index}", f.panoptic, f.depth) for s in manifest.sequences for f in s.frames]
    if predictions is not None:
        layout = ingest.PredictionLayout(predictions)
        for seq, t, d, _ in ingest.expected_targets(manifest, deltas or manifest.deltas):
            pan, dep = layout.panoptic_path(seq.sequence_id, t, d), layout.depth_path(seq.sequence_id, t, d)
            if pan.is_file() and dep.is_file():
                items.append((f"prediction {seq.sequence_id}/{t}/{d}", pan, dep))
    problems = []
    try:
        for label, pan_path, depth_path in items:
            report = validate(ingest.read_panoptic(pan_path, void), ingest.read_depth(depth_path), classes)
            for v in report.violations:
                problems.append({"frame": label, "rule": v.rule, "message": v.message})
    except ingest.IngestError as exc:
        raise CliError(EXIT_IO, "format", str(exc))
    doc = {"checked": len(items), "violations": problems}
    return (EXIT_DATA if problems else EXIT_OK), doc


# --- argument parsing -------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="panodepth", description="Evaluate depth-aware panoptic forecasts.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    ev = sub.add_parser("evaluate", help="score prediction directories against a manifest")
    ev.add_argument("--manifest", type=Path, required=True)
    ev.add_argument("--predictions", type=_prediction_arg, action="append", required=True,
                    metavar="[NAME=]DIR", help="prediction root; repeat for several methods")
    ev.add_argument("--output", type=Path, help="output file (default: stdout)")
    ev.add_argument("--format", choices=FORMATS, default="json")
    ev.add_argument("--threads", type=int, default=None, help=f"worker threads (default: ${THREADS_ENV} or 1)")
    ev.add_argument("--lambdas", type=_float_list)
    ev.add_argument("--deltas", type=_int_list)
    ev.add_argument("--min-depth", type=float)
    ev.add_argument("--max-depth", type=float)
    ev.add_argument("--aggregation", choices=("mean", "sum"))
    ev.add_argument("--filter-mode", choices=("pixel", "segment"))

    sy = sub.add_parser("synth", help="render a synthetic ground-truth dataset")
    sy.add_argument("--spec", type=Path, help="scene spec or suite JSON (default: bundled suite)")
    sy.add_argument("--output", type=Path, required=True)

    bl = sub.add_parser("baseline", help="write baseline forecasts in the prediction layout")
    bl.add_argument("name", help="last-seen or const-velocity")
    bl.add_argument("--manifest", type=Path, required=True)
    bl.add_argument("--output", type=Path, required=True)
    bl.add_argument("--deltas", type=_int_list)

    oc = sub.add_parser("oracle-check", help="differential test against the brute-force oracle")
    oc.add_argument("--size", type=int, default=16)
    oc.add_argument("--trials", type=int, default=100)
    oc.add_argument("--seed", type=int, default=0)
    oc.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)

    va = sub.add_parser("validate", help="check ground truth (and predictions) for invariant violations")
    va.add_argument("--manifest", type=Path, required=True)
    va.add_argument("--predictions", type=Path)
    va.add_argument("--deltas", type=_int_list)
    return p


def _run(argv) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")

    if args.command == "evaluate":
        try:
            manifest = ingest.load_manifest(args.manifest, check_paths=False)
        except ingest.IngestError as exc:
            raise CliError(EXIT_IO, "manifest", str(exc))
        run = RunConfig(args.manifest, tuple(args.predictions), args.output, _config_from_args(args, manifest),
                        args.threads if args.threads is not None else default_threads(), args.format)
        code, doc = cmd_evaluate(run)
        _write_output(RENDERERS[run.format](doc), run.output)
        if code != EXIT_OK:
            missing = sum(len(m["coverage"]["missing"]) for m in doc["methods"])
            _emit_error(code, "missing_predictions", f"{missing} prediction pair(s) missing or nothing evaluable",
                        missing=[dict(x, method=m["name"]) for m in doc["methods"] for x in m["coverage"]["missing"]])
        return code
    if args.command == "synth":
        return cmd_synth(args.spec, args.output)
    if args.command == "baseline":
        return cmd_baseline(args.name, args.manifest, args.output, args.deltas)
    if args.command == "oracle-check":
        code, doc = cmd_oracle_check(args.size, args.trials, args.seed, args.inject_fault)
        print(json.dumps(doc, sort_keys=True))
        if code != EXIT_OK:
            d = doc["divergence"]
            _emit_error(code, "oracle_divergence",
                        f"class {d['class_id']} at lambda {d['lambda']} diverges in trial {d['trial']}", **d)
        return code
    if args.command == "validate":
        code, doc = cmd_validate(args.manifest, args.predictions, args.deltas)
        print(json.dumps(doc, indent=2))
        return code
    raise CliError(EXIT_USAGE, "usage", f"unknown command {args.command!r}")


def main(argv=None) -> int:
    try:
        return _run(argv)
    except CliError as exc:
        return _emit_error(exc.code, exc.kind, str(exc), **exc.extra)
    except ingest.IngestError as exc:
        return _emit_error(EXIT_IO, "format", str(exc))


if __name__ == "__main__":
    sys.exit(main())

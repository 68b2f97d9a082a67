"""Command-line entry point.

Exit codes: 0 success, 1 domain error (bad data, missing files, failed
gate), 2 usage error (unknown flag or subcommand, invalid config file).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from biggat import __version__
from biggat.clustering import ClusteringError, assign_clusters, fit_bimodal
from biggat.config import ConfigError, RunConfig, load_config
from biggat.data import CLASS_NAMES, DataError, load_events, write_events
from biggat.graph import GraphError
from biggat.harness import (FoldArtifacts, derive_seed, disjoint_split_eval, event_order, evaluate_batch,
                            fit_fold, loeo_run, test_batch, training_batches)
from biggat.model import ModelConfig, ModelParams, params_from_json, params_to_json
from biggat.spatial import SpatialStatsError, moran_table
from biggat.synthetic import GeneratorError, synthetic_suite
from biggat.training import TrainingError, train

log = logging.getLogger("biggat")

GRADCHECK_TOL = 1e-4
DOMAIN_ERRORS = (DataError, GraphError, SpatialStatsError, ClusteringError, TrainingError,
                 GeneratorError, FileNotFoundError, FileExistsError, ValueError)


class GateFailure(RuntimeError):
    pass


# ---------------------------------------------------------------- output helpers

def dump_json(obj) -> str:
    """Canonical JSON: sorted keys, fixed indent, trailing newline."""
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


class Output:
    """Output directory that refuses to clobber files unless forced."""

    def __init__(self, path: Path | None, force: bool):
        self.path = path
        self.force = force
        self.written: list[str] = []

    def target(self, name: str) -> Path:
        if self.path is None:
            raise ValueError("this subcommand needs --out")
        p = self.path / name
        if p.exists() and not self.force:
            raise FileExistsError(f"{p} exists; pass --force to overwrite")
        p.parent.mkdir(parents=True, exist_ok=True)
        self.written.append(name)
        return p

    def check(self, *names: str) -> None:
        """Fail before any work if a known output would be clobbered."""
        if self.path is None:
            return
        for n in names:
            p = self.path / n
            if p.exists() and not self.force:
                raise FileExistsError(f"{p} exists; pass --force to overwrite")

    def text(self, name: str, content: str) -> Path:
        p = self.target(name)
        p.write_text(content, encoding="utf-8")
        return p


def input_digests(data_dir: Path | None, extra: list[Path] = ()) -> dict[str, str]:
    files = []
    if data_dir is not None:
        files += [data_dir / n for n in ("counties.csv", "adjacency.csv", "wind.csv", "outages.csv")]
    files += [Path(p) for p in extra]
    return {str(p): sha256_file(p) for p in files if p.exists()}


def write_manifest(out: Output, args, cfg: RunConfig, seeds: dict, inputs: dict) -> None:
    if args.config is not None:
        inputs = dict(inputs, **{str(args.config): sha256_file(args.config)})
    manifest = {
        "command": args.command,
        "argv": [a for a in args.raw_argv],
        "version": __version__,
        "config": cfg.to_dict(),
        "seeds": seeds,
        "inputs": inputs,
        "outputs": sorted(out.written),
    }
    out.text("manifest.json", dump_json(manifest))


def predictions_csv(fips, truth, logits) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["fips", "true_class", "predicted_class", "logit_short", "logit_medium", "logit_long"])
    pred = np.argmax(logits, axis=1)
    for f, t, p, row in zip(fips, truth, pred, logits):
        w.writerow([f, CLASS_NAMES[t], CLASS_NAMES[p], *(repr(float(v)) for v in row)])
    return buf.getvalue()


def _events(args, need_one: bool = False):
    if args.data is None:
        raise ValueError(f"{args.command} needs --data")
    wanted = [e.strip() for e in args.events.split(",") if e.strip()] if args.events else None
    events, national = load_events(args.data, wanted)
    if need_one and len(events) != 1:
        raise ValueError(f"{args.command} needs exactly one event in --events")
    return events, national


def _load_model(path) -> tuple[ModelParams, ModelConfig, FoldArtifacts]:
    if path is None:
        raise ValueError("this subcommand needs --model")
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    params, mcfg = params_from_json(json.dumps(doc["model"]))
    return params, mcfg, FoldArtifacts.from_dict(doc["artifacts"])


# ---------------------------------------------------------------- subcommands

def cmd_synth(args, cfg: RunConfig, out: Output) -> int:
    out.check("counties.csv", "adjacency.csv", "wind.csv", "outages.csv", "manifest.json")
    events, lattice = synthetic_suite(cfg.generator)
    if out.path is None:
        raise ValueError("synth needs --out")
    for n in ("counties.csv", "adjacency.csv", "wind.csv", "outages.csv"):
        out.target(n)
    write_events(out.path, events, lattice)
    summary = {e.event_id: np.bincount(e.labels, minlength=3).tolist() for e in events}
    out.text("class_counts.json", dump_json(summary))
    for e in events:
        log.info("%s: %d counties, class counts %s", e.event_id, e.N, summary[e.event_id])
    write_manifest(out, args, cfg, {"root": cfg.seed}, {})
    return 0


def cmd_label(args, cfg: RunConfig, out: Output) -> int:
    events, _ = _events(args)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["event_id", "fips", "duration_hours", "class", "censored"])
    for e in events:
        for f, h, c, cen in zip(e.fips, e.duration_hours, e.labels, e.censored):
            w.writerow([e.event_id, f, repr(float(h)), CLASS_NAMES[c], int(cen)])
    if out.path is None:
        sys.stdout.write(buf.getvalue())
        return 0
    out.text("labels.csv", buf.getvalue())
    write_manifest(out, args, cfg, {"root": cfg.seed}, input_digests(args.data))
    return 0


def cmd_moran(args, cfg: RunConfig, out: Output) -> int:
    events, _ = _events(args)
    sel = cfg.selection
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["event_id", "order", "I", "z", "p", "significant"])
    seeds, selected, tables = {}, {}, {}
    for e in events:
        seed = derive_seed(cfg.seed, "moran", e.event_id)
        seeds[e.event_id] = seed
        rows = moran_table(e.peak_outages, e.graph, sel.n_max, sel.n_perm, seed)
        tables[e.event_id] = rows
        for r in rows:
            w.writerow([e.event_id, r.order, f"{r.statistic:.6f}", f"{r.z_score:.4f}", f"{r.p_value:.4f}",
                        int(r.significant(sel.alpha))])
        selected[e.event_id] = event_order(e, cfg.seed, sel)
    sys.stdout.write(buf.getvalue())
    if out.path is not None:
        from biggat.plotting import moran_figure
        out.text("moran.csv", buf.getvalue())
        out.text("orders.json", dump_json({"rule": sel.rule, "alpha": sel.alpha, "selected": selected}))
        for eid, rows in tables.items():
            moran_figure(rows, out.target(f"figures/moran_{eid}.png"), sel.alpha, f"{eid}: n-hop Moran's I")
        write_manifest(out, args, cfg, {"root": cfg.seed, "moran": seeds}, input_digests(args.data))
    return 0


def cmd_cluster(args, cfg: RunConfig, out: Output) -> int:
    events, _ = _events(args)
    ids = sorted(e.event_id for e in events)
    seed = derive_seed(cfg.seed, "kmeans", *ids)
    model = fit_bimodal(np.vstack([e.features for e in events]), np.concatenate([e.labels for e in events]),
                        seed=seed)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["event_id", "fips", "cluster", "wind_cluster"])
    start = 0
    for e in sorted(events, key=lambda e: e.event_id):
        fit_lab = model.train_assignments[start:start + e.N]
        start += e.N
        for f, a, b in zip(e.fips, fit_lab, assign_clusters(model, e.features)):
            w.writerow([e.event_id, f, int(a), int(b)])
    sys.stdout.write(buf.getvalue())
    if out.path is not None:
        out.text("clusters.csv", buf.getvalue())
        out.text("centroids.json", dump_json({"dims": list(model.clustering_dims),
                                              "centroids": model.centroids.tolist(), "seed": seed}))
        write_manifest(out, args, cfg, {"root": cfg.seed, "kmeans": seed}, input_digests(args.data))
    return 0


def cmd_train(args, cfg: RunConfig, out: Output) -> int:
    out.check("model.json", "metrics.json", "manifest.json")
    events, _ = _events(args)
    art = fit_fold(events, cfg.model, cfg.seed, cfg.selection)
    batches = training_batches(events, art, cfg.training.train_clusters)
    fit = train(batches, cfg.model, cfg.training)
    reports = [evaluate_batch(fit.params, cfg.model, b)[0] for b in batches]
    doc = {"model": json.loads(params_to_json(fit.params, cfg.model)), "artifacts": art.to_dict()}
    out.text("model.json", dump_json(doc))
    out.text("metrics.json", dump_json({"variant": cfg.variant, "train": [r.to_dict() for r in reports],
                                        "loss_history": fit.loss_history}))
    from biggat.plotting import loss_figure
    loss_figure({"train": fit.loss_history}, out.target("figures/loss.png"))
    log.info("final loss %.4f after %d steps", fit.loss_history[-1], fit.n_steps)
    write_manifest(out, args, cfg, {"root": cfg.seed, "init": cfg.training.seed},
                   input_digests(args.data))
    return 0


def cmd_eval(args, cfg: RunConfig, out: Output) -> int:
    out.check("metrics.json", "predictions.csv", "manifest.json")
    params, mcfg, art = _load_model(args.model)
    (event,), _ = _events(args, need_one=True)
    if event.event_id in art.train_ids:
        log.warning("event %s was used for training this model", event.event_id)
    batch = test_batch(event, art)
    report, logits = evaluate_batch(params, mcfg, batch)
    out.text("metrics.json", dump_json(report.to_dict()))
    out.text("predictions.csv", predictions_csv(event.fips, event.labels, logits))
    sys.stdout.write(f"{event.event_id}: accuracy {report.accuracy:.4f} balanced {report.balanced_accuracy:.4f} "
                     f"macro_f1 {report.macro_f1:.4f}\n")
    write_manifest(out, args, cfg, {"root": cfg.seed}, input_digests(args.data, [args.model]))
    return 0


def cmd_split_eval(args, cfg: RunConfig, out: Output) -> int:
    params, mcfg, art = _load_model(args.model)
    events, national = load_events(args.data)
    if not args.events:
        raise ValueError("split-eval needs --events naming the test event")
    (test,) = [e for e in events if e.event_id == args.events.strip()] or [None]
    if test is None:
        raise DataError(f"unknown event {args.events!r}")
    train_events = [e for e in events if e.event_id in art.train_ids]
    rep = disjoint_split_eval(train_events, test, params, mcfg, art, national)
    text = dump_json(rep.to_dict())
    sys.stdout.write(text)
    if out.path is not None:
        out.text("split.json", text)
        write_manifest(out, args, cfg, {"root": cfg.seed}, input_digests(args.data, [args.model]))
    return 0


def cmd_loeo(args, cfg: RunConfig, out: Output) -> int:
    out.check("metrics.json", "manifest.json", "report.txt")
    events, national = _events(args)
    rep = loeo_run(events, cfg.model, cfg.training, cfg.selection, national, n_jobs=args.jobs or cfg.jobs)
    doc = rep.to_dict()
    for row, fold in zip(doc["events"], rep.folds):
        row["split"] = fold.split.to_dict() if fold.split else None
    doc["rule"] = "balanced accuracy and macro F1 average over classes present in the true labels"
    out.text("metrics.json", dump_json(doc))
    by_id = {e.event_id: e for e in events}
    for fold in rep.folds:
        e = by_id[fold.event_id]
        out.text(f"predictions/{fold.event_id}.csv", predictions_csv(e.fips, e.labels, fold.logits))
    from biggat.metrics import format_table
    table = format_table(rep.rows + [rep.average])
    out.text("report.txt", table + "\n")
    from biggat.plotting import loss_figure, metrics_figure
    metrics_figure(rep.rows + [rep.average], out.target("figures/metrics.png"), f"{cfg.variant} leave-one-event-out")
    loss_figure({f.event_id: f.fit.loss_history for f in rep.folds}, out.target("figures/loss.png"))
    sys.stdout.write(table + "\n")
    seeds = {"root": cfg.seed, "init": {f.event_id: derive_seed(cfg.seed, "init", f.event_id) for f in rep.folds}}
    write_manifest(out, args, cfg, seeds, input_digests(args.data))
    return 0


def cmd_gradcheck(args, cfg: RunConfig, out: Output) -> int:
    from biggat.gradcheck import gradient_gate
    err, n_params = gradient_gate(cfg.seed, cfg.model)
    ok = err < GRADCHECK_TOL
    sys.stdout.write(f"max relative error {err:.3e} over {n_params} parameters: {'PASS' if ok else 'FAIL'}\n")
    if out.path is not None:
        out.text("gradcheck.json", dump_json({"max_relative_error": err, "n_parameters": n_params,
                                              "tolerance": GRADCHECK_TOL, "passed": ok}))
        write_manifest(out, args, cfg, {"root": cfg.seed}, {})
    if not ok:
        raise GateFailure(f"gradient check failed: {err:.3e} >= {GRADCHECK_TOL}")
    return 0


COMMANDS = {
    "synth": (cmd_synth, "write a synthetic multi-event dataset as CSV tables"),
    "label": (cmd_label, "derive outage durations and classes from outages.csv"),
    "moran": (cmd_moran, "per-order n-hop Moran's I table of peak outages"),
    "cluster": (cmd_cluster, "fit the bimodal clusters on the named events"),
    "train": (cmd_train, "train a model on the named events"),
    "eval": (cmd_eval, "evaluate a trained model on one event"),
    "loeo": (cmd_loeo, "leave-one-event-out evaluation over all events"),
    "split-eval": (cmd_split_eval, "overlap / disjoint county report for one test event"),
    "gradcheck": (cmd_gradcheck, "finite-difference check of the full model gradient"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--data", type=Path, help="directory with counties/adjacency/wind/outages CSV")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--config", type=Path, help="config file of section.key = value lines")
    common.add_argument("--seed", type=int, help="root seed (overrides run.seed)")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    common.add_argument("--events", help="comma-separated event ids")
    common.add_argument("--variant", choices=("gat", "bigat", "biggat"), help="model variant")
    common.add_argument("--verbose", "-v", action="count", default=0)
    parser = argparse.ArgumentParser(prog="biggat", description="Outage-duration graph models.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_text, description=help_text)
        if name in ("eval", "split-eval"):
            p.add_argument("--model", type=Path, help="model.json written by `train`")
        if name == "loeo":
            p.add_argument("--jobs", type=int, default=0, help="parallel folds (default run.jobs)")
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.raw_argv = argv
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)
    try:
        cfg = load_config(args.config, args.seed, args.variant)
    except ConfigError as exc:
        parser.print_usage(sys.stderr)
        print(f"biggat: error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"biggat: error: {exc}", file=sys.stderr)
        return 1
    out = Output(args.out, args.force)
    try:
        return COMMANDS[args.command][0](args, cfg, out)
    except (GateFailure, *DOMAIN_ERRORS) as exc:
        print(f"biggat: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

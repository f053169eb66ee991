"""Command-line surface for the toolkit.

Subcommands: ``phantom-gen``, ``train``, ``assess``, ``eval``, ``impact``,
``gradcheck``. Every run writes a ``run.meta`` reproducibility record (the
fully resolved configuration, seed and toolkit version — never timestamps)
next to its outputs. Exit codes: 0 success, 1 usage error, 2 data error,
3 check failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import asdict

import numpy as np

from . import __version__, assess, baseline, gradcheck, metrics, network, phantom
from .errors import LVCoverageError, ParameterError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_CHECK = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


class _UsageError(Exception):
    pass


def write_run_meta(anchor: str, resolved: dict) -> None:
    """Reproducibility record next to an output file or inside an output dir."""
    if os.path.isdir(anchor):
        path = os.path.join(anchor, "run.meta")
    else:
        path = anchor + ".run.meta"
    lines = [f"lvcoverage {__version__}"]
    for key in sorted(resolved):
        lines.append(f"{key}={resolved[key]}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Config handling: key=value files and inline literals, flags win
# ---------------------------------------------------------------------------

_CONFIG_KEYS = {
    "learning_rate": ("learning_rate", float), "lr": ("learning_rate", float),
    "momentum": ("momentum", float),
    "dropout": ("dropout_rate", float), "dropout_rate": ("dropout_rate", float),
    "lambda": ("lam", float), "lam": ("lam", float),
    "eta": ("eta", float),
    "batch_size": ("batch_size", int),
    "max_epochs": ("max_epochs", int), "epochs": ("max_epochs", int),
    "stop_window": ("stop_window", int),
    "stop_sigma": ("stop_sigma", float),
    "seed": ("seed", int),
}


def _parse_config_sources(sources) -> dict:
    out = {}
    for src in sources or ():
        if os.path.isfile(src):
            with open(src) as fh:
                pairs = [line.strip() for line in fh
                         if line.strip() and not line.strip().startswith("#")]
        elif "=" in src:
            pairs = [src]
        else:
            raise _UsageError(f"--config {src!r} is neither a file nor key=value")
        for pair in pairs:
            key, _, val = pair.partition("=")
            key = key.strip()
            if key not in _CONFIG_KEYS:
                raise _UsageError(f"unknown config key {key!r}")
            field, cast = _CONFIG_KEYS[key]
            out[field] = cast(val.strip())
    return out


def _train_config(args) -> network.TrainConfig:
    resolved = _parse_config_sources(args.config)
    for flag in ("learning_rate", "momentum", "eta", "lam", "batch_size",
                 "max_epochs", "seed"):
        val = getattr(args, flag, None)
        if val is not None:
            resolved[flag] = val
    return network.TrainConfig(**resolved)


def _phantom_spec(args) -> phantom.PhantomSpec:
    kwargs = {}
    for flag, field in (("n_slices", "n_slices"), ("noise_sd", "noise_sd"),
                        ("texture_amp", "texture_amp")):
        val = getattr(args, flag, None)
        if val is not None:
            kwargs[field] = val
    return phantom.PhantomSpec(**kwargs)


def _load_model_fn(path):
    params = network.load_model(path)
    return params, (lambda blocks: network.predict(params, blocks))


def _emit(text: str, out_path: str | None) -> None:
    if out_path:
        with open(out_path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_phantom_gen(args) -> int:
    spec = _phantom_spec(args)
    phases = ("ED",) if args.phases == "ed" else (
        ("ES",) if args.phases == "es" else ("ED", "ES"))
    for phase in phases:
        volumes = phantom.gen_cohort(args.n, spec, args.seed,
                                     ablation=args.ablation, phase=phase)
        out = args.out if len(phases) == 1 else os.path.join(args.out, phase.lower())
        os.makedirs(out, exist_ok=True)
        phantom.save_cohort(volumes, out)
    write_run_meta(args.out, {
        "command": "phantom-gen", "n": args.n, "seed": args.seed,
        "ablation": args.ablation, "phases": args.phases,
        **{f"spec.{k}": v for k, v in asdict(spec).items()},
    })
    print(f"wrote {args.n} volume(s) per phase to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = _train_config(args)
    arch = network.make_arch(args.arch)
    volumes = phantom.load_cohort(args.cohort)
    full = [v for v in volumes if v.has_base and v.has_apex]
    if not full:
        raise LVCoverageError("training needs full-coverage volumes")
    dataset = phantom.training_set(full, args.task.upper(),
                                   augmented=not args.no_augment)
    dtype = np.float64 if args.dtype == "f64" else np.float32
    result = network.train(arch, dataset, config, dtype=dtype,
                           log=print if args.verbose else None)
    network.save_model(result.params, args.out_model)
    with open(args.out_model + ".trace.tsv", "w") as fh:
        fh.write("epoch\tobjective\n")
        for i, val in enumerate(result.trace):
            fh.write(f"{i + 1}\t{val!r}\n")
    write_run_meta(args.out_model, {
        "command": "train", "task": args.task, "arch": args.arch,
        "cohort": args.cohort, "dtype": args.dtype,
        "augment": not args.no_augment, "stop_reason": result.stop_reason,
        **{f"config.{k}": v for k, v in asdict(config).items()},
    })
    print(f"trained {args.task} for {result.params.epochs_trained} epoch(s), "
          f"stop: {result.stop_reason}, final objective "
          f"{result.trace[-1] if result.trace else float('nan'):.6f}")
    return EXIT_OK


def cmd_assess(args) -> int:
    _, mbs_fn = _load_model_fn(args.mbs_model)
    _, mas_fn = _load_model_fn(args.mas_model)
    volumes = phantom.load_cohort(args.cohort)
    if args.volume is not None:
        volumes = [v for v in volumes if v.volume_id == args.volume]
        if not volumes:
            raise LVCoverageError(f"volume {args.volume!r} not in cohort")
    lines = ["\t".join(assess.VERDICT_FIELDS
                       + (("baseline_verdict",) if args.baseline else ()))]
    cnn_verdicts, base_verdicts = [], []
    for vol in volumes:
        verdict = assess.classify_coverage(vol, mbs_fn, mas_fn,
                                           threshold=args.threshold,
                                           strategy=args.strategy)
        row = assess.verdict_row(verdict)
        if args.baseline:
            basal = baseline.detect_basal(vol)
            apical = baseline.detect_apical(vol)
            bverdict = assess.verdict_from_probabilities(
                1.0 - 1e-9 if basal is None else 1e-9,
                1.0 - 1e-9 if apical is None else 1e-9,
                args.threshold)
            row += "\t" + bverdict
            cnn_verdicts.append(verdict.verdict)
            base_verdicts.append(bverdict)
        lines.append(row)
    text = "\n".join(lines) + "\n"
    if args.baseline and len(volumes) > 1:
        cm = metrics.ConfusionMatrix.from_pairs(cnn_verdicts, base_verdicts,
                                                assess.VERDICTS)
        text += "\n# network (rows) vs baseline (columns)\n" + cm.text()
    _emit(text, args.out)
    if args.out:
        write_run_meta(args.out, {
            "command": "assess", "cohort": args.cohort,
            "threshold": args.threshold, "strategy": args.strategy,
            "baseline": args.baseline,
        })
    return EXIT_OK


def cmd_eval(args) -> int:
    _, mbs_fn = _load_model_fn(args.mbs_model)
    _, mas_fn = _load_model_fn(args.mas_model)
    volumes = []
    for cohort_dir in args.cohort:
        volumes.extend(phantom.load_cohort(cohort_dir))
    per_task, cm = evaluate_cohort(volumes, mbs_fn, mas_fn,
                                   threshold=args.threshold,
                                   strategy=args.strategy)
    text = metrics.metrics_table(per_task)
    text += "\n# reference (rows) vs prediction (columns)\n" + cm.text()
    correct = np.trace(cm.counts)
    text += f"\nverdict accuracy\t{correct}/{cm.total}\t{correct / cm.total:.4f}\n"
    _emit(text, args.out)
    if args.out:
        write_run_meta(args.out, {
            "command": "eval",
            "cohorts": ";".join(args.cohort),
            "threshold": args.threshold, "strategy": args.strategy,
        })
    return EXIT_OK


def evaluate_cohort(volumes, mbs_fn, mas_fn, threshold: float = 0.5,
                    strategy: str = "extreme"):
    """Per-task counts plus the verdict confusion table for a labelled cohort."""
    mbs_counts = metrics.BinaryTaskCounts()
    mas_counts = metrics.BinaryTaskCounts()
    refs, preds = [], []
    for vol in volumes:
        verdict = assess.classify_coverage(vol, mbs_fn, mas_fn,
                                           threshold=threshold,
                                           strategy=strategy)
        mbs_ref = not vol.has_base
        mas_ref = not vol.has_apex
        mbs_pred = verdict.mbs_probability > threshold
        mas_pred = verdict.mas_probability > threshold
        for counts, ref, pred in ((mbs_counts, mbs_ref, mbs_pred),
                                  (mas_counts, mas_ref, mas_pred)):
            if ref and pred:
                counts.tp += 1
            elif not ref and pred:
                counts.fp += 1
            elif ref and not pred:
                counts.fn += 1
            else:
                counts.tn += 1
        refs.append(assess.verdict_from_probabilities(
            float(mbs_ref), float(mas_ref), 0.5))
        preds.append(verdict.verdict)
    cm = metrics.ConfusionMatrix.from_pairs(refs, preds, assess.VERDICTS)
    return {"MBS": mbs_counts, "MAS": mas_counts}, cm


def cmd_impact(args) -> int:
    ed_dir = os.path.join(args.cohort_pair, "ed")
    es_dir = os.path.join(args.cohort_pair, "es")
    eds = {v.volume_id: v for v in phantom.load_cohort(ed_dir)}
    ess = {v.volume_id: v for v in phantom.load_cohort(es_dir)}
    if set(eds) != set(ess):
        raise LVCoverageError("ED and ES cohorts hold different subject ids")
    pairs = [(eds[k], ess[k]) for k in sorted(eds)]
    report = assess.clinical_impact(pairs)
    text = f"# subjects: {report.n_subjects}\n" + assess.clinical_report_text(report)
    _emit(text, args.out)
    if args.out:
        write_run_meta(args.out, {
            "command": "impact",
            "cohort_pair": args.cohort_pair,
        })
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    ok = gradcheck.run_suite(args.sizes, args.seed)
    print("gradcheck:", "PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_CHECK


# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="lvcoverage",
                     description="LV coverage assessment toolkit")
    parser.add_argument("--version", action="version",
                        version=f"lvcoverage {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom-gen", help="generate a synthetic cohort")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--ablation", choices=phantom.ABLATIONS, default="none")
    p.add_argument("--phases", choices=("ed", "es", "both"), default="ed")
    p.add_argument("--n-slices", type=int, dest="n_slices")
    p.add_argument("--noise-sd", type=float, dest="noise_sd")
    p.add_argument("--texture-amp", type=float, dest="texture_amp")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_phantom_gen)

    p = sub.add_parser("train", help="train one classifier on a cohort")
    p.add_argument("--task", choices=("mbs", "mas"), required=True)
    p.add_argument("--cohort", required=True)
    p.add_argument("--out-model", required=True)
    p.add_argument("--arch", default="table1",
                   help="table1 | phantom | tiny, optionally +plainfc")
    p.add_argument("--config", action="append",
                   help="key=value literal or a key=value file; repeatable")
    p.add_argument("--learning-rate", type=float, dest="learning_rate")
    p.add_argument("--momentum", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--lam", "--lambda", type=float, dest="lam")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--max-epochs", type=int, dest="max_epochs")
    p.add_argument("--seed", type=int)
    p.add_argument("--dtype", choices=("f32", "f64"), default="f32")
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("assess", help="coverage verdicts for volumes")
    p.add_argument("--cohort", required=True)
    p.add_argument("--volume", help="restrict to one volume id")
    p.add_argument("--mbs-model", required=True)
    p.add_argument("--mas-model", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--strategy", choices=("extreme", "max"), default="extreme")
    p.add_argument("--baseline", action="store_true",
                   help="also run the hand-crafted detector and cross-tabulate")
    p.add_argument("--out")
    p.set_defaults(func=cmd_assess)

    p = sub.add_parser("eval", help="metrics table over labelled cohorts")
    p.add_argument("--cohort", action="append", required=True)
    p.add_argument("--mbs-model", required=True)
    p.add_argument("--mas-model", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--strategy", choices=("extreme", "max"), default="extreme")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("impact", help="clinical impact of simulated ablations")
    p.add_argument("--cohort-pair", required=True,
                   help="directory holding ed/ and es/ subcohorts")
    p.add_argument("--out")
    p.set_defaults(func=cmd_impact)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sizes", choices=("tiny", "table1"), default="tiny")
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except ParameterError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except LVCoverageError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

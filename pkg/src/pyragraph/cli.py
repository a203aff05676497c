"""Command-line entry point.

Every subcommand resolves and validates its configuration up front, writes a
run.json capturing the resolved config and seeds (enough to replay the run
exactly; no timestamps, so replays are byte-identical), then computes.
Training-style subcommands refuse to run without explicit seeds. Exit codes:
0 success, 2 configuration/input error, 1 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .ablation import (
    MonteCarloPlan,
    STANDARD_MASKS,
    magnification_test,
    mask_name,
    monte_carlo_test,
    parse_mask,
    write_magnification_csv,
    write_monte_carlo_csv,
)
from .consultation import (
    DEFAULT_TAU,
    consultation_histogram,
    write_records_csv,
)
from .convergence import convergence_sweep, write_sweep_csv
from .dataio import (
    SynthSpec,
    dataset_fingerprint,
    generate_synthetic,
    load_manifest,
    synth_class_names,
    write_dataset,
)
from .errors import ConfigError, FileFormatError, PyragraphError, ValidationError
from .graphs import explicit_edges
from .metrics import balanced_accuracy, macro_f1
from .model import (
    ModelConfig,
    count_params,
    load_checkpoint,
    save_checkpoint,
)
from .training import TrainConfig, cross_validate, evaluate, train


def _parse_int_list(text: str, what: str) -> tuple[int, ...]:
    try:
        values = tuple(int(part) for part in text.split(",") if part.strip() != "")
    except ValueError:
        raise ConfigError(f"cannot parse {what} list {text!r}") from None
    if not values:
        raise ConfigError(f"{what} list is empty")
    return values


def _add_graph_flags(p: argparse.ArgumentParser):
    p.add_argument("--triplet", choices=["chain", "triangle"], default="chain")
    p.add_argument("--self-loops", action="store_true")
    p.add_argument("--norm", choices=["exact", "uniform"], default="exact")


def _add_train_flags(p: argparse.ArgumentParser):
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--weight-decay", type=float, default=0.01)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--class-weights", default="inverse-frequency",
                   choices=["inverse-frequency", "uniform"])
    p.add_argument("--decay-mode", choices=["decoupled", "coupled"], default="decoupled")
    p.add_argument("--gcn-widths", default="256,256,128",
                   help="comma-separated GCN layer widths")
    p.add_argument("--cls-hidden", type=int, default=128)


def _add_cv_flags(p: argparse.ArgumentParser):
    _add_train_flags(p)
    p.add_argument("--folds", type=int, default=3)
    p.add_argument("--fold-seed", type=int, default=0)
    p.add_argument("--seeds", required=True,
                   help="comma-separated training seeds (explicit; no hidden entropy)")


def _train_config(args, seeds) -> TrainConfig:
    return TrainConfig(
        learning_rate=args.lr,
        weight_decay=args.weight_decay,
        epochs=args.epochs,
        folds=getattr(args, "folds", 3),
        seeds=seeds,
        class_weights=args.class_weights,
        batch=args.batch,
        decay_mode=args.decay_mode,
        fold_seed=getattr(args, "fold_seed", 0),
    )


def _arch_for(args, dataset) -> ModelConfig:
    return ModelConfig(
        input_dim=dataset.graphs[0].d,
        classes=dataset.classes,
        gcn_widths=_parse_int_list(args.gcn_widths, "gcn width"),
        cls_hidden=args.cls_hidden,
    )


def _load_dataset(args):
    manifest = load_manifest(args.manifest)
    return manifest.load_dataset(
        triplet=args.triplet, self_loops=args.self_loops, norm=args.norm
    )


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_run_json(out: Path, subcommand: str, config: dict, seeds=()):
    payload = {
        "subcommand": subcommand,
        "version": __version__,
        "seeds": list(seeds),
        "config": config,
    }
    (out / "run.json").write_text(json.dumps(payload, indent=2) + "\n")


def _args_dict(args) -> dict:
    skip = {"func", "command"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _cmd_synth(args) -> int:
    spec = SynthSpec.from_json(Path(args.spec).read_text())
    out = _out_dir(args)
    _write_run_json(out, "synth", {**_args_dict(args), "spec": json.loads(spec.to_json())},
                    seeds=[spec.seed])
    pyramids = generate_synthetic(spec)
    manifest_path = write_dataset(pyramids, out, synth_class_names(spec.classes))
    print(f"wrote {len(pyramids)} pyramids and {manifest_path}")
    print(f"dataset fingerprint: {dataset_fingerprint(pyramids)}")
    return 0


def _cmd_build_graph(args) -> int:
    dataset = _load_dataset(args)
    out = _out_dir(args)
    _write_run_json(out, "build-graph", _args_dict(args))
    stats_path = out / "graph_stats.csv"
    with open(stats_path, "w") as fh:
        fh.write("slide_id,m,nodes,edges,label,group\n")
        for g in dataset.graphs:
            fh.write(
                f"{g.slide_id},{g.m},{g.n_nodes},{len(explicit_edges(g))},"
                f"{g.label},{g.group_id}\n"
            )
    print(f"wrote {stats_path} for {len(dataset.graphs)} graphs")
    return 0


def _cmd_train(args) -> int:
    dataset = _load_dataset(args)
    config = _train_config(args, seeds=(args.seed,))
    arch = _arch_for(args, dataset)
    out = _out_dir(args)
    _write_run_json(out, "train", {**_args_dict(args), "train_config": config.to_dict()},
                    seeds=[args.seed])
    params, curve = train(dataset, config, args.seed, arch)
    ckpt = out / "model.grsp"
    save_checkpoint(params, ckpt, metadata={
        "train_config": config.to_dict(),
        "init_seed": args.seed,
        "final_loss": curve[-1],
        "classes": dataset.class_names,
    })
    with open(out / "loss_curve.csv", "w") as fh:
        fh.write("epoch,loss\n")
        for i, loss in enumerate(curve):
            fh.write(f"{i},{loss!r}\n")
    print(f"trained {config.epochs} epochs; final loss {curve[-1]:.6f}; saved {ckpt}")
    return 0


def _cmd_cv(args) -> int:
    dataset = _load_dataset(args)
    seeds = _parse_int_list(args.seeds, "seed")
    config = _train_config(args, seeds)
    arch = _arch_for(args, dataset)
    out = _out_dir(args)
    _write_run_json(out, "cv", {**_args_dict(args), "train_config": config.to_dict()},
                    seeds=seeds)
    report = cross_validate(dataset, config, arch)
    (out / "eval_report.json").write_text(report.to_json())
    with open(out / "timings.csv", "w") as fh:
        fh.write("seed,fold,train_seconds\n")
        for seed, fold, secs in report.timing_rows():
            fh.write(f"{seed},{fold},{secs!r}\n")
    agg = report.aggregate()
    print(
        f"balanced accuracy {agg['balanced_accuracy_mean']:.4f} "
        f"± {agg['balanced_accuracy_std']:.4f}; "
        f"macro F1 {agg['macro_f1_mean']:.4f} ± {agg['macro_f1_std']:.4f} "
        f"({agg['n_runs']} runs)"
    )
    return 0


def _cmd_eval(args) -> int:
    dataset = _load_dataset(args)
    params, _ = load_checkpoint(args.checkpoint)
    out = _out_dir(args)
    _write_run_json(out, "eval", _args_dict(args))
    cm = evaluate(dataset.graphs, params, dataset.classes)
    payload = {
        "balanced_accuracy": balanced_accuracy(cm),
        "macro_f1": macro_f1(cm),
        "confusion": cm.tolist(),
        "n_slides": len(dataset.graphs),
    }
    (out / "eval.json").write_text(json.dumps(payload, indent=2) + "\n")
    print(f"balanced accuracy {payload['balanced_accuracy']:.4f} "
          f"macro F1 {payload['macro_f1']:.4f} on {len(dataset.graphs)} slides")
    return 0


def _cmd_monte_carlo(args) -> int:
    dataset = _load_dataset(args)
    seeds = _parse_int_list(args.seeds, "seed")
    config = _train_config(args, seeds)
    arch = _arch_for(args, dataset)
    base_m = dataset.graphs[0].m
    if args.full_grid:
        plan = MonteCarloPlan.full_grid(base_m=base_m)
    else:
        plan = MonteCarloPlan(base_m=base_m, counts=_parse_int_list(args.counts, "count"),
                              repetitions=args.reps)
    out = _out_dir(args)
    _write_run_json(out, "monte-carlo", {**_args_dict(args), "train_config": config.to_dict(),
                                         "plan": {"base_m": plan.base_m,
                                                  "counts": list(plan.counts),
                                                  "repetitions": plan.repetitions}},
                    seeds=seeds)
    rows = monte_carlo_test(dataset, plan, config, arch,
                            drop_seed=args.drop_seed, jobs=args.jobs)
    write_monte_carlo_csv(rows, out / "monte_carlo.csv")
    for r in rows:
        print(f"nodes {r.nodes:5d}: balanced accuracy "
              f"{r.mean_bacc:.4f} ± {r.std_bacc:.4f} ({r.n_runs} runs)")
    return 0


def _cmd_mag_ablation(args) -> int:
    dataset = _load_dataset(args)
    seeds = _parse_int_list(args.seeds, "seed")
    config = _train_config(args, seeds)
    arch = _arch_for(args, dataset)
    masks = [parse_mask(part) for part in args.masks.split(",")] if args.masks else list(
        STANDARD_MASKS
    )
    out = _out_dir(args)
    _write_run_json(out, "mag-ablation",
                    {**_args_dict(args), "train_config": config.to_dict(),
                     "masks": [mask_name(m) for m in masks]},
                    seeds=seeds)
    reports = magnification_test(dataset, masks, config, arch)
    write_magnification_csv(reports, out / "mag_ablation.csv")
    for name, report in reports.items():
        agg = report.aggregate()
        print(f"{name:10s} balanced accuracy {agg['balanced_accuracy_mean']:.4f} "
              f"± {agg['balanced_accuracy_std']:.4f}")
    return 0


def _cmd_consult(args) -> int:
    dataset = _load_dataset(args)
    params, _ = load_checkpoint(args.checkpoint)
    out = _out_dir(args)
    _write_run_json(out, "consult", _args_dict(args))
    records, hist = consultation_histogram(dataset, params, tau=args.tau,
                                           mode=args.energy_mode)
    write_records_csv(records, out / "consultations.csv")
    names = dataset.class_names or [str(c) for c in range(dataset.classes)]
    payload = {names[c]: dist for c, dist in hist.items()}
    (out / "histogram.json").write_text(json.dumps(payload, indent=2) + "\n")
    for c, dist in hist.items():
        top = max(dist, key=dist.get)
        print(f"class {names[c]}: modal consultation {top} ({dist[top]:.1%})")
    return 0


def _cmd_convergence(args) -> int:
    m_list = _parse_int_list(args.m_list, "m")
    seeds = _parse_int_list(args.seeds, "seed")
    out = _out_dir(args)
    _write_run_json(out, "convergence", _args_dict(args), seeds=seeds)
    report = convergence_sweep(m_list, seeds, d=args.d,
                               weight_scale=args.weight_scale, norm=args.norm)
    write_sweep_csv(report, out / "convergence.csv")
    trend = report.trend()
    (out / "trend.json").write_text(json.dumps(
        {"trend": {f"M{k}": v for k, v in trend.items()},
         "median_spreads": {f"M{k}": v.tolist() for k, v in report.median_spreads().items()},
         "m_list": list(m_list)}, indent=2) + "\n")
    for level, t in trend.items():
        print(f"M{level}: spread-vs-m Spearman trend {t:+.3f}")
    return 0


def _cmd_params_count(args) -> int:
    n = count_params(args.d, args.classes,
                     gcn_widths=_parse_int_list(args.gcn_widths, "gcn width"),
                     cls_hidden=args.cls_hidden)
    if args.out:
        out = _out_dir(args)
        _write_run_json(out, "params-count", _args_dict(args))
        (out / "params_count.txt").write_text(f"{n}\n")
    print(n)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pyragraph",
        description="Multi-magnification pyramidal graph classifier toolkit",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a planted-signal dataset")
    p.add_argument("--spec", required=True, help="SynthSpec JSON file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("build-graph", help="build graphs and report topology stats")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    _add_graph_flags(p)
    p.set_defaults(func=_cmd_build_graph)

    p = sub.add_parser("train", help="train on the full dataset and save a checkpoint")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    _add_graph_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("cv", help="group-aware k-fold cross-validation")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    _add_graph_flags(p)
    _add_cv_flags(p)
    p.set_defaults(func=_cmd_cv)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    _add_graph_flags(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("monte-carlo", help="accuracy vs graph size under random node drops")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    _add_graph_flags(p)
    _add_cv_flags(p)
    p.add_argument("--counts", default="50,150,250,350",
                   help="comma-separated triplet drop counts")
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--full-grid", action="store_true",
                   help="counts 10..m-10 step 10, 10 repetitions")
    p.add_argument("--drop-seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=_cmd_monte_carlo)

    p = sub.add_parser("mag-ablation", help="retrain on single/paired magnifications")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    _add_graph_flags(p)
    _add_cv_flags(p)
    p.add_argument("--masks", default="",
                   help="comma-separated masks like M1,M2,M1&M3 (default: all six)")
    p.set_defaults(func=_cmd_mag_ablation)

    p = sub.add_parser("consult", help="per-slide magnification attribution")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tau", type=float, default=DEFAULT_TAU)
    p.add_argument("--energy-mode", choices=["grad-input", "grad-norm"],
                   default="grad-input")
    _add_graph_flags(p)
    p.set_defaults(func=_cmd_consult)

    p = sub.add_parser("convergence", help="within-magnification spread vs m sweep")
    p.add_argument("--out", required=True)
    p.add_argument("--m-list", default="8,32,128,256")
    p.add_argument("--seeds", required=True, help="comma-separated model seeds")
    p.add_argument("--d", type=int, default=64)
    p.add_argument("--weight-scale", type=float, default=1.0)
    p.add_argument("--norm", choices=["exact", "uniform"], default="exact")
    p.set_defaults(func=_cmd_convergence)

    p = sub.add_parser("params-count", help="exact parameter count for given dims")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--gcn-widths", default="256,256,128")
    p.add_argument("--cls-hidden", type=int, default=128)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_params_count)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValidationError, FileFormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except PyragraphError as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

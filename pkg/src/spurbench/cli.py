"""Command-line front end.

Subcommands:
  gen     write a synthetic grouped dataset to an EMB or CSV file
  train   fit the base model on a dataset file and save a checkpoint
  run     execute one (rho, seed) cell and emit its report JSON
  sweep   execute the full spuriosity x seed grid and emit report JSON
  report  re-render a saved report JSON as csv, json, or markdown

Experiment settings come from an optional JSON config file; any flag given
on the command line overrides the file's value.  Exit status is 0 on
success, 1 if any method produced an error row, and 2 on a configuration
problem.
"""

import argparse
import json
import sys
from pathlib import Path

from . import embio, harness, nnopt
from .dataspec import SpuriosityConfig, generate
from .seeding import derive_seed


def _floats(text: str) -> list[float]:
    return [float(part) for part in text.split(",") if part.strip()]


def _ints(text: str) -> list[int]:
    return [int(part) for part in text.split(",") if part.strip()]


def _names(text: str) -> list[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def _s_tokens(text: str) -> list:
    values = []
    for part in _names(text):
        try:
            values.append(int(part))
        except ValueError:
            values.append(part)
    return values


def _add_experiment_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="FILE", help="JSON experiment config file")
    parser.add_argument("--dataset-path", metavar="FILE", help="EMB/CSV dataset instead of synthetic data")
    parser.add_argument("--spuriosity-list", metavar="R,R,...", help="rho values to sweep")
    parser.add_argument("--methods", metavar="M,M,...", help=f"subset of {','.join(harness.ALL_METHODS)}")
    parser.add_argument("--seeds", metavar="N,N,...", help="replicate seeds")
    parser.add_argument("--master-seed", type=int, metavar="N")
    parser.add_argument("--hidden", metavar="W,W,...", help="hidden layer widths")
    parser.add_argument("--retrain-lrs", metavar="F,F,...")
    parser.add_argument("--retrain-wds", metavar="F,F,...")
    parser.add_argument("--s-grid", metavar="S,S,...", help="per-bucket sizes or tokens (auto, auto/2, 2*auto)")
    parser.add_argument("--gammas", metavar="F,F,...")
    parser.add_argument("--retrain-epochs", type=int, metavar="N")
    parser.add_argument("--output-path", metavar="FILE")
    parser.add_argument("--out", metavar="FILE", help="write the report here instead of stdout")


def _experiment_config(args: argparse.Namespace) -> harness.ExperimentConfig:
    payload: dict = {}
    if args.config:
        payload = json.loads(Path(args.config).read_text())
        if not isinstance(payload, dict):
            raise ValueError("experiment config file must hold a JSON object")
    overrides = {
        "dataset_path": args.dataset_path,
        "spuriosity_list": _floats(args.spuriosity_list) if args.spuriosity_list else None,
        "methods": _names(args.methods) if args.methods else None,
        "seeds": _ints(args.seeds) if args.seeds else None,
        "master_seed": args.master_seed,
        "hidden": _ints(args.hidden) if args.hidden else None,
        "retrain_lrs": _floats(args.retrain_lrs) if args.retrain_lrs else None,
        "retrain_wds": _floats(args.retrain_wds) if args.retrain_wds else None,
        "s_grid": _s_tokens(args.s_grid) if args.s_grid else None,
        "gammas": _floats(args.gammas) if args.gammas else None,
        "retrain_epochs": args.retrain_epochs,
        "output_path": args.output_path,
    }
    payload.update({key: value for key, value in overrides.items() if value is not None})
    return harness.ExperimentConfig.from_dict(payload)


def _emit_report(report: harness.Report, out: str | None) -> int:
    document = harness.render_report(report, "json")
    if out:
        Path(out).write_text(document)
    else:
        sys.stdout.write(document)
    return 1 if any(row.error is not None for row in report.rows) else 0


def cmd_gen(args: argparse.Namespace) -> int:
    config = SpuriosityConfig(
        n_per_class=args.n_per_class,
        rho=args.rho,
        d_core=args.d_core,
        d_spur=args.d_spur,
        d_noise=args.d_noise,
        mu_core=args.mu_core,
        mu_spur=args.mu_spur,
        sigma=args.sigma,
        label_noise=args.label_noise,
    )
    dataset = generate(config, seed=args.seed)
    embio.save_dataset(args.out, dataset)
    print(f"wrote {args.out} ({dataset.n} rows, d={dataset.d})")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    dataset = embio.load_dataset(args.data)
    model = nnopt.MLP(
        d_in=dataset.d,
        hidden=tuple(_ints(args.hidden)),
        seed=derive_seed(args.seed, "erm-init"),
    )
    config = nnopt.TrainConfig(
        lr=args.lr,
        weight_decay=args.weight_decay,
        momentum=args.momentum,
        batch_size=args.batch_size,
        epochs=args.epochs,
    )
    nnopt.fit(
        model,
        dataset.features,
        dataset.labels,
        config,
        seed=derive_seed(args.seed, "erm-fit"),
    )
    model.save(args.out)
    score = nnopt.accuracy(model, dataset.features, dataset.labels)
    print(f"wrote {args.out} (training accuracy {score:.4f})")
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    config = _experiment_config(args)
    rho = harness.FILE_RHO if config.dataset_path is not None else args.rho
    rows = sorted(harness.run_cell(config, rho, args.seed), key=lambda r: r.method)
    report = harness.Report(
        rows=rows, config=config.to_dict(), summary=harness.summarize(rows)
    )
    return _emit_report(report, args.out)


def cmd_sweep(args: argparse.Namespace) -> int:
    config = _experiment_config(args)
    report = harness.sweep(config)
    return _emit_report(report, args.out or config.output_path)


def cmd_report(args: argparse.Namespace) -> int:
    report = harness.parse_report(Path(getattr(args, "in")).read_text())
    document = harness.render_report(report, args.format)
    if args.out:
        Path(args.out).write_text(document)
    else:
        sys.stdout.write(document)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spurbench",
        description="Group-robustness benchmark: loss-selected last-layer retraining "
        "against baselines across spurious-correlation rates.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    data_defaults = SpuriosityConfig()
    erm_defaults = harness.default_erm_config()

    gen = sub.add_parser("gen", help="write a synthetic grouped dataset")
    gen.add_argument("--out", required=True, metavar="FILE", help=".emb or .csv output path")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--n-per-class", type=int, default=data_defaults.n_per_class)
    gen.add_argument("--rho", type=float, default=data_defaults.rho)
    gen.add_argument("--d-core", type=int, default=data_defaults.d_core)
    gen.add_argument("--d-spur", type=int, default=data_defaults.d_spur)
    gen.add_argument("--d-noise", type=int, default=data_defaults.d_noise)
    gen.add_argument("--mu-core", type=float, default=data_defaults.mu_core)
    gen.add_argument("--mu-spur", type=float, default=data_defaults.mu_spur)
    gen.add_argument("--sigma", type=float, default=data_defaults.sigma)
    gen.add_argument("--label-noise", type=float, default=data_defaults.label_noise)
    gen.set_defaults(func=cmd_gen)

    train = sub.add_parser("train", help="fit the base model and save a checkpoint")
    train.add_argument("--data", required=True, metavar="FILE", help=".emb or .csv dataset")
    train.add_argument("--out", required=True, metavar="FILE", help="checkpoint output path")
    train.add_argument("--hidden", default="32,16", metavar="W,W,...")
    train.add_argument("--lr", type=float, default=erm_defaults.lr)
    train.add_argument("--weight-decay", type=float, default=erm_defaults.weight_decay)
    train.add_argument("--momentum", type=float, default=erm_defaults.momentum)
    train.add_argument("--batch-size", type=int, default=erm_defaults.batch_size)
    train.add_argument("--epochs", type=int, default=erm_defaults.epochs)
    train.add_argument("--seed", type=int, default=0)
    train.set_defaults(func=cmd_train)

    run = sub.add_parser("run", help="run one (rho, seed) cell")
    run.add_argument("--rho", type=float, required=True, help="ignored for file-based data")
    run.add_argument("--seed", type=int, required=True)
    _add_experiment_flags(run)
    run.set_defaults(func=cmd_run)

    swp = sub.add_parser("sweep", help="run the full spuriosity x seed grid")
    _add_experiment_flags(swp)
    swp.set_defaults(func=cmd_sweep)

    rpt = sub.add_parser("report", help="re-render a saved report JSON")
    rpt.add_argument("--in", required=True, metavar="FILE", help="report JSON path")
    rpt.add_argument("--format", required=True, choices=("csv", "json", "markdown"))
    rpt.add_argument("--out", metavar="FILE", help="write here instead of stdout")
    rpt.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, TypeError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

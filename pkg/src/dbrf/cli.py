"""Command-line driver.

Subcommands cover the whole experiment surface: dataset generation and
ingestion, single training runs, flip-rate sweeps, loss-term ablations,
hyperparameter grids, representation projections, and fairness reports.
JSON config files carry ExperimentConfig fields; the common flags override
them so one config can drive many variations.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields as dc_fields, replace

from . import baselines  # noqa: F401  (re-exported surface for scripting)
from . import data as D
from . import experiments as X
from . import metrics as Mx
from . import model as M
from . import trainer as T


def _load_config(args) -> X.ExperimentConfig:
    payload = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            payload = json.load(fh)
        known = {f.name for f in dc_fields(X.ExperimentConfig)}
        unknown = set(payload) - known
        if unknown:
            raise SystemExit(f"config contains unknown keys: {sorted(unknown)}")
        for key in ("rho_values", "methods"):
            if key in payload:
                payload[key] = tuple(payload[key])
    cfg = X.ExperimentConfig(**payload)
    overrides = {}
    if getattr(args, "rho", None) is not None:
        overrides["rho_values"] = (args.rho,)
    if getattr(args, "method", None):
        overrides["methods"] = tuple(args.method)
    if getattr(args, "folds", None) is not None:
        overrides["folds"] = args.folds
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    return replace(cfg, **overrides) if overrides else cfg


def _dataset_from_arg(spec: str) -> D.TabularDataset | None:
    """'synthetic' -> None (generated per fold inside the driver); anything
    else is a canonical dump path."""
    if spec == "synthetic":
        return None
    return D.load_dump(spec)


def cmd_synth(args) -> int:
    ds = D.generate_synthetic(D.SyntheticSpec(n=args.n, seed=args.seed))
    if args.rho > 0:
        ds = D.inject_label_bias(ds, D.CorruptionSpec.symmetric(args.rho, seed=args.seed))
    D.dump_dataset(ds, args.out)
    print(f"wrote {ds.n} rows to {args.out}")
    return 0


def cmd_prepare(args) -> int:
    schema = (D.builtin_schema(args.schema) if args.schema in ("adult", "compas")
              else D.load_schema(args.schema))
    if args.input:
        source = args.input
    elif "default_file" in schema:
        source = str(D.data_dir() / schema["default_file"])
    else:
        raise SystemExit("schema names no default_file; pass --input")
    ds = D.load_tabular(source, schema)
    D.dump_dataset(ds, args.out)
    print(f"wrote {ds.n} rows x {ds.d} features to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    base = _dataset_from_arg(args.data)
    rho = args.rho if args.rho is not None else 0.0
    if base is None:
        base = D.generate_synthetic(D.SyntheticSpec(seed=cfg.seed))
    train, test = D.split(base, cfg.train_fraction, seed=cfg.seed)
    train, test = D.standardize(train, test)
    if rho > 0:
        train = D.inject_label_bias(train, D.CorruptionSpec.symmetric(rho, seed=cfg.seed))
    arch = M.Architecture.for_dataset(train, d_z=cfg.d_z, d_b=cfg.d_b, hidden=cfg.hidden)
    tc = T.TrainConfig(epochs=cfg.epochs, batch_size=cfg.batch_size,
                       lr_model=cfg.lr_model, lr_disc=cfg.lr_disc,
                       disc_steps_per_model_step=cfg.disc_steps,
                       tc_fake_source=cfg.tc_fake_source,
                       val_fraction=cfg.val_fraction,
                       select_every=cfg.select_every, seed=cfg.seed,
                       eval_every=args.eval_every,
                       checkpoint_path=args.checkpoint)
    hyper = M.Hyperparams(alpha=cfg.alpha, gamma=cfg.gamma, lam=cfg.lam,
                          beta=cfg.beta if cfg.beta is not None else X.beta_for_rho(rho),
                          xi=cfg.xi)
    params, history = T.fit(tc, hyper, train, test, arch=arch)
    if args.history:
        history.to_csv(args.history)
    last = history.records[-1]
    print(f"final: acc_observed={last.acc_observed:.4f} acc_ideal={last.acc_ideal:.4f} "
          f"dp={last.dp:.4f} deo={last.deo:.4f}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    override = _dataset_from_arg(args.data)
    results = X.run_sweep(cfg, args.out_dir, data_override=override)
    failed = [r for r in results if r.error is not None]
    for r in failed:
        print(f"cell failed: {r.method} rho={r.rho:g} fold={r.fold}: {r.error}",
              file=sys.stderr)
    print(f"{len(results) - len(failed)}/{len(results)} cells completed; "
          f"results in {args.out_dir}")
    return X.exit_status(results, cfg)


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    override = _dataset_from_arg(args.data)
    rho = args.rho if args.rho is not None else 0.45
    rows = X.run_ablation(cfg, rho, args.out_dir, data_override=override)
    width = max(len(r.variant) for r in rows)
    for r in rows:
        print(f"{r.variant:<{width}}  acc {r.accuracy_mean:.4f} ± {r.accuracy_std:.4f}  "
              f"dp {r.delta_dp_mean:.4f} ± {r.delta_dp_std:.4f}")
    return 0


def cmd_grid(args) -> int:
    cfg = _load_config(args)
    override = _dataset_from_arg(args.data)
    rho = args.rho if args.rho is not None else 0.45
    out = X.run_hyper_grid(cfg, rho, args.out_dir, data_override=override)
    print(f"grid cells: {len(out['grid'])}, alpha points: {len(out['alpha'])}, "
          f"lambda points: {len(out['lambda'])}; CSVs in {args.out_dir}")
    return 0


def cmd_project(args) -> int:
    ds = D.load_dump(args.data) if args.data != "synthetic" else \
        D.generate_synthetic(D.SyntheticSpec(seed=args.seed or 0))
    scores = X.project_representations(args.checkpoint, ds, args.out_dir,
                                       bandwidth=args.bandwidth,
                                       seed=args.seed or 0)
    for name, score in scores.items():
        print(f"group separation in {name}: {score:.4f}")
    return 0


def cmd_metrics(args) -> int:
    ds = D.load_dump(args.data)
    group = D.protected_conjunction(ds)
    labels = ds.ideal_labels if ds.ideal_labels is not None else ds.observed_labels
    gp = Mx.GroupedPredictions(labels, labels, group)
    report = Mx.group_report(gp)
    print(Mx.report_to_text(report))
    print(f"clean-label delta_dp: {Mx.delta_dp(gp):.4f}")
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(Mx.report_to_csv(report))
    return 0


def _add_common(p: argparse.ArgumentParser, data_default: str | None = "synthetic"):
    p.add_argument("--config", help="JSON file of experiment-config fields")
    p.add_argument("--rho", type=float, default=None, help="flip rate in [0, 0.5)")
    p.add_argument("--folds", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    if data_default is not None:
        p.add_argument("--data", default=data_default,
                       help="'synthetic' or a canonical dump path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dbrf",
        description="de-biased representation learning experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=10_800)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rho", type=float, default=0.0)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("prepare", help="ingest a raw CSV per a schema")
    p.add_argument("--schema", required=True,
                   help="'adult', 'compas', or a schema JSON path")
    p.add_argument("--input", help="raw CSV (default: <data dir>/<schema default>)")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_prepare)

    p = sub.add_parser("train", help="single training run")
    _add_common(p)
    p.add_argument("--checkpoint", help="write final model here (.npz)")
    p.add_argument("--history", help="write history CSV here")
    p.add_argument("--eval-every", type=int, default=10, dest="eval_every")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("sweep", help="methods x flip-rates x folds grid")
    _add_common(p)
    p.add_argument("--method", action="append",
                   help="restrict to a method (repeatable)")
    p.add_argument("--out-dir", required=True, dest="out_dir")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("ablate", help="loss-term knockout table")
    _add_common(p)
    p.add_argument("--out-dir", required=True, dest="out_dir")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("grid", help="beta x xi grid plus alpha and lambda lines")
    _add_common(p)
    p.add_argument("--out-dir", required=True, dest="out_dir")
    p.set_defaults(fn=cmd_grid)

    p = sub.add_parser("project", help="kernel-PCA maps from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", default="synthetic")
    p.add_argument("--out-dir", required=True, dest="out_dir")
    p.add_argument("--bandwidth", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_project)

    p = sub.add_parser("metrics", help="group report for a prepared dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="also write the report CSV here")
    p.set_defaults(fn=cmd_metrics)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())

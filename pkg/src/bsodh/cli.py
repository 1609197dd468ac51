"""Command-line interface: ``bsodh synth | train | eval | sweep``."""
from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .codec import encode, load_model, save_model
from .data import (
    NORMALIZATIONS,
    DatasetMeta,
    Normalizer,
    check_pair,
    load_features,
    load_labels,
    make_protocol_split,
    save_features,
    save_labels,
    synth_clusters,
)
from .errors import BSODHError, ConfigError
from .evaluation import RetrievalSetup, evaluate
from .optimizer import Hyperparams
from .similarity import BalanceFactors
from .trainer import TrainerConfig, batches, run_online, save_codes

log = logging.getLogger("bsodh")

SWEEPABLE = {
    "sigma": float,
    "lambda": float,
    "eta_s": float,
    "eta_d": float,
    "bits": int,
    "max_sweeps": int,
    "batch_size": int,
}


class Outputs:
    """Track files written by a command; remove them if the command fails."""

    def __init__(self, directory):
        self.dir = Path(directory)
        self.written = []

    def path(self, name) -> Path:
        p = self.dir / name
        self.written.append(p)
        return p

    def discard(self):
        for p in self.written:
            for candidate in (p, p.with_name(p.name + ".part")):
                if candidate.exists():
                    candidate.unlink()


def _add_training_flags(p):
    p.add_argument("--features", required=True, help="feature file (BSODF1, IDX or CSV)")
    p.add_argument("--labels", required=True, help="label file (BSODL1, IDX or CSV)")
    p.add_argument("--extra-features", nargs="*", default=[], help="more feature files appended in order")
    p.add_argument("--extra-labels", nargs="*", default=[], help="label files matching --extra-features")
    p.add_argument("--queries-per-class", type=int, default=100)
    p.add_argument("--train-size", type=int, default=None, help="training subset size (default: whole retrieval set)")
    p.add_argument("--bits", type=int, default=32)
    p.add_argument("--batch-size", type=int, default=1000)
    p.add_argument("--total-batches", default="auto", help="number of stages, or 'auto' for the whole stream")
    p.add_argument("--sigma", type=float, default=0.5)
    p.add_argument("--lambda", dest="lam", type=float, default=0.6)
    p.add_argument("--eta-s", type=float, default=1.2)
    p.add_argument("--eta-d", type=float, default=0.2)
    p.add_argument("--max-sweeps", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--normalization", choices=NORMALIZATIONS, default="unit-norm")
    p.add_argument("--no-refit", action="store_true", help="do not re-solve W after the B_s sweeps")


def _load_dataset(args):
    X = load_features(args.features)
    labels = load_labels(args.labels)
    check_pair(X, labels)
    if len(args.extra_features) != len(args.extra_labels):
        raise ConfigError("--extra-features and --extra-labels need the same number of files")
    for fp, lp in zip(args.extra_features, args.extra_labels):
        Xi, li = load_features(fp), load_labels(lp)
        check_pair(Xi, li)
        if Xi.shape[0] != X.shape[0]:
            raise ConfigError(f"{fp} has dimension {Xi.shape[0]}, expected {X.shape[0]}")
        X = np.concatenate([X, Xi], axis=1)
        labels = np.concatenate([labels, li])
    return X, labels


def _split(args, labels, d):
    n_query = args.queries_per_class * np.unique(labels).size
    train_size = args.train_size if args.train_size is not None else labels.size - n_query
    return make_protocol_split(labels, args.queries_per_class, train_size, args.seed,
                               d=d, name=Path(args.features).name)


def _config(args, **overrides) -> TrainerConfig:
    values = dict(
        sigma=args.sigma, lam=args.lam, eta_s=args.eta_s, eta_d=args.eta_d,
        bits=args.bits, max_sweeps=args.max_sweeps, batch_size=args.batch_size,
    )
    values.update(overrides)
    total = None if str(args.total_batches) == "auto" else int(args.total_batches)
    hp = Hyperparams(
        sigma=values["sigma"],
        lam=values["lam"],
        factors=BalanceFactors(values["eta_s"], values["eta_d"]),
        max_sweeps=values["max_sweeps"],
        seed=args.seed,
    )
    return TrainerConfig(
        bits=values["bits"],
        batch_size=values["batch_size"],
        total_batches=total,
        hp=hp,
        normalization=args.normalization,
        refit_weights=not args.no_refit,
    )


def _train(X, labels, meta, cfg, on_stage=None):
    idx = meta.training
    if idx.size == 0:
        raise ConfigError("the training set is empty")
    return run_online(batches(X[:, idx], labels[idx], cfg.batch_size), cfg, on_stage=on_stage)


def cmd_synth(args):
    out = Outputs(args.out)
    out.dir.mkdir(parents=True, exist_ok=True)
    try:
        X, labels = synth_clusters(args.classes, args.dim, args.per_class, args.separation, args.seed)
        save_features(out.path("features.bsodf"), X)
        save_labels(out.path("labels.bsodl"), labels)
    except BaseException:
        out.discard()
        raise
    print(f"wrote {X.shape[1]} samples (d={X.shape[0]}, {args.classes} classes) to {out.dir}")


def cmd_train(args):
    X, labels = _load_dataset(args)
    meta = _split(args, labels, X.shape[0])
    cfg = _config(args)
    if args.checkpoint_every:
        cfg = TrainerConfig(**{**cfg.__dict__, "checkpoint_every": args.checkpoint_every,
                               "checkpoint_dir": str(Path(args.out) / "checkpoints")})
    out = Outputs(args.out)
    out.dir.mkdir(parents=True, exist_ok=True)
    log_path = out.path("train.log")
    try:
        with open(log_path, "w") as fh:
            fh.write(f"# bsodh train {json.dumps(_args_dict(args), sort_keys=True)}\n")

            def on_stage(entry):
                fh.write(entry.line() + "\n")
                fh.flush()

            start = time.perf_counter()
            try:
                result = _train(X, labels, meta, cfg, on_stage)
            except BSODHError as exc:
                fh.write(f"# FAILED: {exc}\n")
                raise
            fh.write(f"# done seconds={time.perf_counter() - start:.3f}\n")
        save_model(out.path("model.bsodh"), result.model, cfg.hp)
        save_codes(out.path("codes.bsodc"), result.codes)
        save_codes(out.path("existing_codes.bsodc"), result.state.B_e)
        if result.last_stage is not None:
            save_codes(out.path("last_stage_existing_codes.bsodc"), result.last_stage.B_e)
        meta.to_json(out.path("split.json"))
        out.path("normalization.json").write_text(json.dumps(result.normalizer.to_dict()))
    except BaseException:
        out.discard()
        raise
    converged = [s for s in result.stages if s.updating_sweeps is not None and s.stage > 1]
    print(
        f"trained {result.model.stage} stages, k={result.model.code_length}; "
        f"{len(converged)}/{max(len(result.stages) - 1, 0)} stages converged; outputs in {out.dir}"
    )


def _args_dict(args):
    return {k: v for k, v in vars(args).items() if k != "func"}


def cmd_eval(args):
    model, _ = load_model(args.model)
    if args.bits is not None and args.bits != model.code_length:
        raise ConfigError(f"checkpoint has k={model.code_length}, --bits asks for {args.bits}")
    normalizer = Normalizer("none")
    if args.normalization_file:
        normalizer = Normalizer.from_dict(json.loads(Path(args.normalization_file).read_text()))
    if args.query_features:
        Xq, lq = load_features(args.query_features), load_labels(args.query_labels)
        Xd, ld = load_features(args.db_features), load_labels(args.db_labels)
        check_pair(Xq, lq)
        check_pair(Xd, ld)
    else:
        if not (args.features and args.labels and args.split):
            raise ConfigError("give --features/--labels/--split or explicit query and database files")
        X, labels = load_features(args.features), load_labels(args.labels)
        check_pair(X, labels)
        meta = DatasetMeta.from_json(args.split)
        Xq, lq = X[:, meta.query], labels[meta.query]
        Xd, ld = X[:, meta.retrieval], labels[meta.retrieval]
    if Xq.shape[1] == 0:
        raise ConfigError("the query set is empty")
    setup = RetrievalSetup(
        encode(model, normalizer.transform(Xq)), encode(model, normalizer.transform(Xd)), lq, ld
    )
    report = evaluate(setup, map_cutoff=args.map_cutoff, R_values=range(1, args.r_max + 1))
    out = Outputs(args.out)
    out.dir.mkdir(parents=True, exist_ok=True)
    try:
        report.write_json(out.path("metrics.json"))
        report.write_csv(out.path("metrics.csv"))
    except BaseException:
        out.discard()
        raise
    print(f"{report.map_label}={report.map:.4f} Precision@H2={report.precision_at_H2:.4f} "
          f"(k={report.bits}, {report.n_queries} queries, {report.n_db} database items)")


def _parse_param(spec):
    if "=" not in spec:
        raise ConfigError(f"--param expects NAME=v1,v2,..., got {spec!r}")
    name, values = spec.split("=", 1)
    name = name.strip().replace("-", "_")
    if name not in SWEEPABLE:
        raise ConfigError(f"unknown sweep parameter {name!r}; choose from {sorted(SWEEPABLE)}")
    try:
        parsed = [SWEEPABLE[name](v) for v in values.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {exc}") from None
    if not parsed:
        raise ConfigError(f"no values given for {name}")
    return name, parsed


def cmd_sweep(args):
    grid = [_parse_param(p) for p in args.param]
    if not 1 <= len(grid) <= 2:
        raise ConfigError("sweep one or two parameters")
    names = [g[0] for g in grid]
    if len(set(names)) != len(names):
        raise ConfigError("a parameter was given twice")
    X, labels = _load_dataset(args)
    meta = _split(args, labels, X.shape[0])
    if meta.query.size == 0:
        raise ConfigError("the sweep needs a non-empty query set")
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    rows = []
    try:
        for point in itertools.product(*(g[1] for g in grid)):
            overrides = {("lam" if n == "lambda" else n): v for n, v in zip(names, point)}
            cfg = _config(args, **overrides)
            result = _train(X, labels, meta, cfg)
            nq = result.normalizer.transform
            setup = RetrievalSetup(
                encode(result.model, nq(X[:, meta.query])),
                encode(result.model, nq(X[:, meta.retrieval])),
                labels[meta.query],
                labels[meta.retrieval],
            )
            report = evaluate(setup, map_cutoff=args.map_cutoff, R_values=())
            rows.append([*point, report.map, report.precision_at_H2])
            log.info("sweep %s -> %s=%.4f Precision@H2=%.4f",
                     dict(zip(names, point)), report.map_label, report.map, report.precision_at_H2)
        tmp = out_path.with_name(out_path.name + ".part")
        with open(tmp, "w", newline="") as fh:
            w = csv.writer(fh)
            map_col = "map" if args.map_cutoff is None else f"map@{args.map_cutoff}"
            w.writerow([*names, map_col, "precision_at_h2"])
            w.writerows(rows)
        tmp.replace(out_path)
    except BaseException:
        for p in (out_path.with_name(out_path.name + ".part"),):
            if p.exists():
                p.unlink()
        raise
    print(f"wrote {len(rows)} sweep points to {out_path}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bsodh", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic Gaussian-cluster dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--per-class", type=int, default=200)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--separation", type=float, default=20.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="run online training")
    _add_training_flags(p)
    p.add_argument("--checkpoint-every", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint with Hamming ranking")
    p.add_argument("--model", required=True)
    p.add_argument("--features")
    p.add_argument("--labels")
    p.add_argument("--split", help="split.json written by 'train'")
    p.add_argument("--query-features")
    p.add_argument("--query-labels")
    p.add_argument("--db-features")
    p.add_argument("--db-labels")
    p.add_argument("--normalization-file", help="normalization.json written by 'train'")
    p.add_argument("--bits", type=int, default=None, help="expected code length")
    p.add_argument("--map-cutoff", type=int, default=None)
    p.add_argument("--r-max", type=int, default=100, help="Precision@R for R = 1..r-max")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="grid-sweep one or two hyperparameters")
    _add_training_flags(p)
    p.add_argument("--param", action="append", required=True, help="NAME=v1,v2,... (repeatable)")
    p.add_argument("--map-cutoff", type=int, default=None)
    p.add_argument("--out", required=True, help="CSV path")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        args.func(args)
    except (BSODHError, OSError) as exc:
        print(f"bsodh {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

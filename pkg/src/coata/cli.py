"""Command-line entry point.

Exit codes: 0 success, 1 internal or check failure, 2 usage or input error.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import itertools
import json
import logging
import sys
import time
from pathlib import Path

from . import data, model, pipeline, selftest, tea
from .graph import GraphFormatError, normalize, read_edgelist

log = logging.getLogger("coata")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad flags, config values or input files; maps to exit code 2."""


# -- config assembly ---------------------------------------------------------------

def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def build_config(args) -> pipeline.RunConfig:
    """Config file first, then ``--set`` overrides, then dedicated flags."""
    values: dict = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            with open(path, encoding="utf-8") as fh:
                values = json.load(fh)
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(values, dict):
            raise UsageError(f"{path}: top level must be an object")
    for item in args.set or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        values[key.strip()] = _parse_value(raw)
    for key in ("data", "out", "seed", "workers"):
        val = getattr(args, key, None)
        if val is not None:
            values[key] = val
    if getattr(args, "deterministic", False):
        values["deterministic"] = True
    try:
        return pipeline.RunConfig.from_dict(values)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from None


def _require(cfg: pipeline.RunConfig, key: str) -> str:
    val = getattr(cfg, key)
    if not val:
        raise UsageError(f"--{key} is required for this command")
    return val


def _load(cfg: pipeline.RunConfig) -> data.Dataset:
    return data.load_dataset(_require(cfg, "data"))


def _out_dir(cfg: pipeline.RunConfig) -> Path:
    out = Path(_require(cfg, "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_augmented(directory: Path, n: int):
    graphs = []
    for name in ("augmented_edges.knn.tsv", "augmented_edges.edgemod.tsv"):
        path = directory / name
        if not path.is_file():
            raise FileNotFoundError(f"missing augmentation file: {path}")
        graphs.append(read_edgelist(path, n=n)[0])
    return graphs


# -- subcommands ---------------------------------------------------------------------

def cmd_augment(args) -> int:
    cfg = build_config(args)
    ds = _load(cfg)
    out = _out_dir(cfg)
    aug = pipeline.augment(ds, cfg)
    pipeline.write_augmentation(aug, out, ppr_dump=args.ppr_dump)
    cfg.effective().write(out / "config.json")
    print(json.dumps(aug.summary, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = build_config(args)
    ds = _load(cfg)
    out = _out_dir(cfg)
    if args.augmented:
        graphs = _load_augmented(Path(args.augmented), ds.graph.n)
        res = pipeline.train_on(ds, cfg, graphs)
        aug = None
    else:
        aug, res = pipeline.run(ds, cfg)
    pipeline.save_run(out, cfg.effective(), aug, res)
    print(f"best_epoch={res.train.best_epoch} val_acc={res.val_acc:.4f} test_acc={res.test_acc:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = build_config(args)
    ds = _load(cfg)
    params_path = Path(args.params) if args.params else Path(_require(cfg, "out")) / "params.npz"
    if not params_path.is_file():
        raise FileNotFoundError(f"parameter file not found: {params_path}")
    params = pipeline.load_params(params_path)
    adj = normalize(ds.graph)
    x = ds.features
    if cfg.channel_features == "enriched":
        x = tea.propagate(x, adj, tea.TeaConfig(cfg.h, cfg.beta)).h_matrix
    if params.w1.shape[0] != x.shape[1] or params.w2.shape[1] != ds.labels.num_classes:
        raise UsageError(f"{params_path}: parameter shapes do not match the dataset")
    ensemble = ()
    if cfg.ensemble:
        if not args.augmented:
            raise UsageError("ensemble evaluation needs --augmented")
        ensemble = [normalize(g) for g in _load_augmented(Path(args.augmented), ds.graph.n)]
    for split in data.SPLIT_NAMES:
        if ds.labels.mask(split).any():
            acc = model.evaluate(params, adj, x, ds.labels, split, ensemble)
            print(f"{split}_acc={acc:.4f}")
    return EXIT_OK


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


SWEEP_COLUMNS = ("alpha", "beta", "h", "seed", "best_epoch", "val_acc", "test_acc")


def cmd_sweep(args) -> int:
    base = build_config(args)
    ds = _load(base)
    out = _out_dir(base)
    alphas = args.alpha or [base.alpha]
    betas = args.beta or [base.beta]
    hs = args.h or [base.h]
    base.write(out / "config.json")
    path = out / "sweep.csv"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SWEEP_COLUMNS)
        for alpha, beta, h in itertools.product(alphas, betas, hs):
            try:
                cfg = dataclasses.replace(base, alpha=alpha, beta=beta, h=h)
            except ValueError as exc:
                raise UsageError(f"invalid grid point: {exc}") from None
            _, res = pipeline.run(ds, cfg)
            writer.writerow([alpha, beta, h, cfg.seed, res.train.best_epoch,
                             repr(res.val_acc), repr(res.test_acc)])
            fh.flush()
            log.info("alpha=%g beta=%g h=%d test_acc=%.4f", alpha, beta, h, res.test_acc)
    print(f"wrote {path}")
    return EXIT_OK


def _report(results: list[selftest.CheckResult]) -> int:
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"FAILED: {', '.join(failed)}", file=sys.stderr)
        return EXIT_FAIL
    print(f"all {len(results)} checks passed")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    return _report([selftest.check_gradients(args.instances)])


def cmd_selftest(args) -> int:
    return _report(selftest.run_all(inject=args.inject_fault, quick=args.quick))


def cmd_synth(args) -> int:
    try:
        spec = data.SbmSpec.with_inter_fraction(
            args.n, args.c, args.avg_degree, args.inter_fraction, feature_dim=args.feature_dim,
            feature_noise=args.noise, seed=args.seed)
        ds = data.generate_sbm(spec)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    data.save_dataset(ds, args.out)
    print(f"wrote {args.out}: n={ds.graph.n} m={ds.graph.num_edges} "
          f"homophily={data.edge_homophily(ds.graph, ds.labels.labels):.3f}")
    return EXIT_OK


# -- parser -------------------------------------------------------------------------------

def _run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with flat RunConfig keys")
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--deterministic", action="store_true", help="no dropout, single worker")
    p.add_argument("--workers", type=int)
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any config key (value parsed as JSON when possible)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coata", description="Co-augmentation of topology and attributes for node classification.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("augment", help="propagate attributes and build augmented graphs")
    _run_flags(p)
    p.add_argument("--ppr-dump", action="store_true", help="also write the top-t PPR table")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train", help="augment (or reuse augmentations) and train")
    _run_flags(p)
    p.add_argument("--augmented", help="directory holding precomputed augmented edge files")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate saved parameters")
    _run_flags(p)
    p.add_argument("--params", help="params.npz (default: <out>/params.npz)")
    p.add_argument("--augmented", help="augmented edge files, needed for ensemble evaluation")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="grid over alpha, beta and h")
    _run_flags(p)
    p.add_argument("--alpha", type=_float_list)
    p.add_argument("--beta", type=_float_list)
    p.add_argument("--h", type=_int_list)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gradcheck", help="analytic vs finite-difference gradients")
    p.add_argument("--instances", type=int, default=10)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("selftest", help="run the property suite")
    p.add_argument("--quick", action="store_true")
    p.add_argument("--inject-fault", choices=["gradient"], help="deliberately corrupt a component")
    p.set_defaults(func=cmd_selftest)

    p = sub.add_parser("synth", help="write a planted-partition dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=400)
    p.add_argument("--c", type=int, default=2)
    p.add_argument("--avg-degree", type=float, default=4.0)
    p.add_argument("--inter-fraction", type=float, default=0.2)
    p.add_argument("--feature-dim", type=int, default=20)
    p.add_argument("--noise", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    start = time.perf_counter()
    try:
        code = args.func(args)
    except (UsageError, FileNotFoundError, NotADirectoryError, GraphFormatError, data.DatasetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        log.debug("internal failure", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    log.info("%s finished in %.1fs", args.command, time.perf_counter() - start)
    return code


if __name__ == "__main__":
    raise SystemExit(main())

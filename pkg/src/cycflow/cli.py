"""Command-line harness: gen, train, solve, eval, ablate, bench.

Exit codes: 0 success, 1 usage error, 2 data error (missing/malformed
files, missing labels, size limits), 3 numerical error. Flags override a
JSON config file (--config), which overrides built-in defaults; every
report echoes the effective configuration, the dataset fingerprint, the
label provenance and the tool version.

Under --deterministic all randomness is seeded, torch runs single-threaded
and wall-clock fields are written as 0.0, so artifacts are byte-identical
across runs.
"""

from __future__ import annotations

import argparse
import json
import os
import platform
import statistics
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .errors import (
    ConfigError,
    CycflowError,
    DatasetFormatError,
    MissingLabelsError,
    NumericalError,
)
from .instances import (
    Dataset,
    Tour,
    fingerprint,
    gap_percent,
    gen_uniform,
    make_tour,
    read_dataset,
    write_dataset,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3

TRAJECTORY_HEADER = "cycflow-trajectory v1"


class CliError(Exception):
    """Usage-level error raised by subcommand handlers (exit 1)."""


def _fmt(x: float) -> str:
    return repr(float(x))


def _hardware() -> str:
    return f"{platform.platform()} / {os.cpu_count()} cores"


def _load_labeled(path: str) -> Dataset:
    ds = read_dataset(path)
    if not ds.labeled:
        raise MissingLabelsError(f"{path}: every record needs a tour label")
    return ds


def _echo_config(args: argparse.Namespace, keys: list[str]) -> list[str]:
    pairs = [f"version={__version__}"]
    pairs += [f"{k}={getattr(args, k)}" for k in keys]
    return pairs


# ---------------------------------------------------------------- gen


def cmd_gen(args) -> int:
    if args.solver == "heldkarp":
        from .oracle import HELD_KARP_MAX_N

        if args.n > HELD_KARP_MAX_N:
            raise CliError(
                f"--solver heldkarp handles n <= {HELD_KARP_MAX_N}, got --n {args.n}; "
                "use --solver heuristic"
            )
    if args.solver == "brute":
        from .oracle import BRUTE_FORCE_MAX_N

        if args.n > BRUTE_FORCE_MAX_N:
            raise CliError(
                f"--solver brute handles n <= {BRUTE_FORCE_MAX_N}, got --n {args.n}; "
                "use --solver heldkarp or heuristic"
            )
    ds = gen_uniform(args.n, args.count, args.seed)
    if args.solver != "none":
        from .oracle import label_dataset

        label_dataset(ds, args.solver, seed=args.seed, workers=args.threads)
    if args.targets:
        from .coupling import build_coupled_pair

        for rec in ds.records:
            if rec.tour is None:
                raise CliError("--targets requires labels; pick a --solver")
            rec.target = build_coupled_pair(rec.instance, rec.tour).x1
    write_dataset(ds, args.out)
    provs = sorted({r.tour.provenance for r in ds.records if r.tour is not None})
    print(f"wrote {len(ds)} instances of n={args.n} to {args.out}")
    print(f"labels: {', '.join(provs) if provs else 'none'}")
    print(f"fingerprint: {fingerprint(ds)}")
    return EXIT_OK


# ---------------------------------------------------------------- train


def _train_config(args):
    from .flow import TrainConfig
    from .model import ModelConfig

    return TrainConfig(
        model=ModelConfig(
            dim=args.dim,
            layers=args.layers,
            heads=args.heads,
            ff_mult=args.ff_mult,
            t_dim=args.t_dim,
            seed=args.seed,
        ),
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        seed=args.seed,
        objective=args.objective,
        deterministic=args.deterministic,
        float32=args.float32,
        telemetry_path=args.telemetry,
    )


def cmd_train(args) -> int:
    from .flow import train
    from .model import save_checkpoint

    ds = _load_labeled(args.data)
    config = _train_config(args)
    model, summary = train(config, ds)
    metadata = {
        "objective": config.objective,
        "epochs": summary["epochs"],
        "initial_loss": summary["initial_loss"],
        "final_loss": summary["final_loss"],
        "dataset_fingerprint": fingerprint(ds),
        "seed": args.seed,
    }
    save_checkpoint(args.out, model, metadata)
    print(f"trained {config.objective} model for {config.epochs} epochs on {len(ds)} instances")
    print(f"loss: {summary['initial_loss']:.6g} -> {summary['final_loss']:.6g}")
    print(f"checkpoint: {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------- solve / eval


def _solve_dataset(args, ds: Dataset):
    from .decode import solve
    from .model import load_checkpoint

    model, metadata = load_checkpoint(args.checkpoint)
    if args.deterministic:
        import torch

        torch.set_num_threads(1)

    def one(rec):
        return solve(model, rec.instance, steps=args.k, refine=not args.no_refine)

    if args.threads > 1 and not args.deterministic:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            results = list(pool.map(one, ds.records))
    else:
        results = [one(rec) for rec in ds.records]
    return model, metadata, results


def _timing(args, value: float) -> float:
    return 0.0 if args.deterministic else value


def _write_report(path, comment_lines, header, rows):
    with open(path, "w", encoding="ascii", newline="\n") as f:
        for line in comment_lines:
            f.write(f"# {line}\n")
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(str(v) for v in row) + "\n")


def _median(values) -> float:
    return statistics.median(values) if values else 0.0


def cmd_solve(args) -> int:
    ds = read_dataset(args.data)
    _, _, results = _solve_dataset(args, ds)
    out = Dataset(
        [type(rec)(rec.instance, res.tour) for rec, res in zip(ds.records, results)]
    )
    write_dataset(out, args.out)
    if args.dump_trajectory:
        _dump_trajectory(args, ds.records[0].instance)
    total = [r.total_s for r in results]
    print(f"solved {len(ds)} instances with K={args.k} refine={not args.no_refine}")
    print(f"median per-instance wall-clock: {_timing(args, _median(total)):.6f}s")
    print(f"tours written to {args.out}")
    return EXIT_OK


def _dump_trajectory(args, inst) -> None:
    from .flow import integrate
    from .model import load_checkpoint

    model, _ = load_checkpoint(args.checkpoint)
    snapshots: list[np.ndarray] = []
    integrate(model, inst, args.k, trajectory=snapshots)
    with open(args.dump_trajectory, "w", encoding="ascii", newline="\n") as f:
        f.write(TRAJECTORY_HEADER + "\n")
        for k, cloud in enumerate(snapshots):
            f.write(f"step {k} {inst.n}\n")
            for x, y in cloud:
                f.write(f"{_fmt(x)} {_fmt(y)}\n")
    print(f"trajectory of instance {inst.id} written to {args.dump_trajectory}")


def cmd_eval(args) -> int:
    ds = _load_labeled(args.data)
    _, metadata, results = _solve_dataset(args, ds)
    fp = fingerprint(ds)
    provs = sorted({r.tour.provenance for r in ds.records})
    gap_name = "gap_percent" if provs == ["exact"] else "gap_vs_heuristic_percent"
    rows = []
    gaps = []
    for rec, res in zip(ds.records, results):
        gap = gap_percent(res.tour.length, rec.tour.length)
        gaps.append(gap)
        rows.append(
            [
                rec.instance.id,
                rec.instance.n,
                rec.tour.provenance,
                _fmt(rec.tour.length),
                _fmt(res.tour.length),
                _fmt(gap),
                _fmt(_timing(args, res.integrate_s)),
                _fmt(_timing(args, res.decode_s)),
                _fmt(_timing(args, res.refine_s)),
            ]
        )
    comments = _echo_config(args, ["checkpoint", "data", "k", "no_refine", "threads", "deterministic"])
    comments += [
        f"dataset_fingerprint={fp}",
        f"label_provenance={'+'.join(provs)}",
        f"checkpoint_objective={metadata.get('objective', 'flow')}",
    ]
    header = [
        "instance_id", "n", "label_provenance", "label_length", "tour_length",
        gap_name, "integrate_s", "decode_s", "refine_s",
    ]
    if args.csv:
        _write_report(args.csv, comments, header, rows)
    med = lambda key: _timing(args, _median([getattr(r, key) for r in results]))
    print(f"eval of {args.checkpoint} on {args.data} ({len(ds)} instances, K={args.k})")
    print(f"dataset fingerprint: {fp}")
    print(f"labels: {'+'.join(provs)}")
    print(f"mean {gap_name.replace('_', ' ')}: {np.mean(gaps):.4f}")
    print(
        "median wall-clock per instance: "
        f"integrate {med('integrate_s'):.6f}s, decode {med('decode_s'):.6f}s, "
        f"2-opt {med('refine_s'):.6f}s, total {med('total_s'):.6f}s"
    )
    if args.csv:
        print(f"report: {args.csv}")
    return EXIT_OK


# ---------------------------------------------------------------- ablate


def cmd_ablate(args) -> int:
    from .decode import angular_sort
    from .flow import direct_tour, integrate
    from .model import load_checkpoint

    ds = _load_labeled(args.data)
    fp = fingerprint(ds)
    for path in (args.checkpoint, args.direct_checkpoint):
        if not os.path.exists(path):
            raise DatasetFormatError(f"missing checkpoint artifact: {path}")
    flow_model, _ = load_checkpoint(args.checkpoint)
    direct_model, direct_meta = load_checkpoint(args.direct_checkpoint)
    if direct_meta.get("objective") not in (None, "direct"):
        raise ConfigError(
            f"{args.direct_checkpoint} was trained with objective "
            f"{direct_meta.get('objective')!r}, expected 'direct'"
        )

    def gap_of(tour: Tour, rec) -> float:
        return gap_percent(tour.length, rec.tour.length)

    method_rows = []
    for name, solver in (
        ("Angular Sort", lambda rec: make_tour(rec.instance, angular_sort(rec.instance.points).order, "decoded")),
        ("Direct Angular Reg.", lambda rec: direct_tour(direct_model, rec.instance)),
        ("CycFlow", lambda rec: make_tour(rec.instance, angular_sort(integrate(flow_model, rec.instance, args.k)).order, "decoded")),
    ):
        gaps = [gap_of(solver(rec), rec) for rec in ds.records]
        method_rows.append((name, float(np.mean(gaps))))
    comments = _echo_config(args, ["checkpoint", "direct_checkpoint", "data", "k"])
    comments.append(f"dataset_fingerprint={fp}")
    if args.csv:
        _write_report(
            args.csv, comments, ["method", "gap_percent"],
            [[name, _fmt(gap)] for name, gap in method_rows],
        )
    print(f"ablation on {args.data} ({len(ds)} instances, fingerprint {fp})")
    print(f"{'method':<22} gap (%)")
    for name, gap in method_rows:
        print(f"{name:<22} {gap:.2f}")
    if args.csv:
        print(f"report: {args.csv}")
    return EXIT_OK


# ---------------------------------------------------------------- bench


def cmd_bench(args) -> int:
    from .decode import solve
    from .model import load_checkpoint

    model, _ = load_checkpoint(args.checkpoint)
    sizes = [int(s) for s in args.sizes.split(",")]
    rows = []
    print(f"bench of {args.checkpoint}, {args.count} instances per size, K={args.k}")
    print(f"hardware: {_hardware()}")
    for n in sizes:
        ds = gen_uniform(n, args.count, args.seed)
        one = lambda rec: solve(model, rec.instance, steps=args.k, refine=True)
        if args.threads > 1 and not args.deterministic:
            with ThreadPoolExecutor(max_workers=args.threads) as pool:
                results = list(pool.map(one, ds.records))
        else:
            results = [one(rec) for rec in ds.records]
        med = lambda key: _timing(args, _median([getattr(r, key) for r in results]))
        no_refine = _timing(args, _median([r.integrate_s + r.decode_s for r in results]))
        rows.append(
            [
                n,
                _fmt(med("integrate_s")),
                _fmt(med("decode_s")),
                _fmt(med("refine_s")),
                _fmt(med("total_s")),
                _fmt(no_refine),
            ]
        )
        print(
            f"n={n}: integrate {med('integrate_s'):.6f}s decode {med('decode_s'):.6f}s "
            f"2-opt {med('refine_s'):.6f}s total {med('total_s'):.6f}s "
            f"(no-refine total {no_refine:.6f}s)"
        )
    if args.csv:
        comments = _echo_config(args, ["checkpoint", "sizes", "count", "k"])
        comments.append(f"hardware={_hardware()}")
        _write_report(
            args.csv, comments,
            ["n", "integrate_s_median", "decode_s_median", "refine_s_median",
             "total_s_median", "total_no_refine_s_median"],
            rows,
        )
        print(f"report: {args.csv}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(message)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file whose keys preset any flag of this subcommand")
    p.add_argument("--deterministic", action="store_true",
                   help="single-threaded, seeded, wall-clock fields written as 0.0")


REQUIRED = {
    "gen": ("n", "count", "out"),
    "train": ("data", "out"),
    "solve": ("checkpoint", "data", "out"),
    "eval": ("checkpoint", "data"),
    "ablate": ("checkpoint", "direct_checkpoint", "data"),
    "bench": ("checkpoint",),
}


def build_parser() -> _Parser:
    # "required" flags are declared optional and checked after the config
    # file merge, so a --config preset can satisfy them
    parser = _Parser(prog="cycflow", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"cycflow {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate and label instances")
    p.add_argument("--n", type=int)
    p.add_argument("--count", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--solver", choices=["heldkarp", "brute", "heuristic", "none"],
                   default="heldkarp")
    p.add_argument("--targets", action="store_true",
                   help="also store the aligned circle targets as `target` blocks")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                   help="parallel workers for labeling")
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train the velocity field (or the direct baseline)")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--objective", choices=["flow", "direct"], default="flow")
    p.add_argument("--epochs", type=int, default=2000)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=3e-4)
    p.add_argument("--dim", type=int, default=128)
    p.add_argument("--layers", type=int, default=4)
    p.add_argument("--heads", type=int, default=8)
    p.add_argument("--ff-mult", type=int, default=4)
    p.add_argument("--t-dim", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--float32", action="store_true")
    p.add_argument("--telemetry", help="per-epoch CSV: epoch,loss,lr,wallclock_s")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    for name, func, needs_out in (("solve", cmd_solve, True), ("eval", cmd_eval, False)):
        p = sub.add_parser(name, help=f"{name} a dataset with a trained checkpoint")
        p.add_argument("--checkpoint")
        p.add_argument("--data")
        if needs_out:
            p.add_argument("--out")
            p.add_argument("--dump-trajectory",
                           help="write Euler snapshots of the first instance to this path")
        p.add_argument("--csv", help="write the per-instance report here")
        p.add_argument("--k", type=int, default=20)
        p.add_argument("--no-refine", action="store_true")
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
        _add_common(p)
        p.set_defaults(func=func)

    p = sub.add_parser("ablate", help="Angular Sort vs Direct Angular Reg. vs CycFlow")
    p.add_argument("--checkpoint", help="flow checkpoint")
    p.add_argument("--direct-checkpoint", help="direct-regression checkpoint")
    p.add_argument("--data")
    p.add_argument("--csv")
    p.add_argument("--k", type=int, default=20)
    _add_common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("bench", help="median per-instance latency per stage")
    p.add_argument("--checkpoint")
    p.add_argument("--sizes", default="20,50,100")
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.add_argument("--csv")
    _add_common(p)
    p.set_defaults(func=cmd_bench)
    return parser


def _apply_config_file(parser: _Parser, args: argparse.Namespace, argv: list[str]):
    """Config-file values override defaults; explicit flags override both."""
    if not getattr(args, "config", None):
        return args
    with open(args.config, "r", encoding="utf-8") as f:
        preset = json.load(f)
    if not isinstance(preset, dict):
        raise CliError(f"{args.config}: config file must hold a JSON object")
    known = set(vars(args))
    explicit = {tok.split("=", 1)[0].lstrip("-").replace("-", "_") for tok in argv if tok.startswith("--")}
    for key, value in preset.items():
        dest = key.replace("-", "_")
        if dest not in known:
            raise CliError(f"{args.config}: unknown option {key!r}")
        if dest not in explicit:
            setattr(args, dest, value)
    return args


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args = _apply_config_file(parser, args, argv)
        missing = [k for k in REQUIRED.get(args.command, ()) if getattr(args, k) is None]
        if missing:
            flags = ", ".join("--" + k.replace("_", "-") for k in missing)
            raise CliError(f"the following arguments are required: {flags}")
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (CycflowError, FileNotFoundError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entrypoint orchestrating the whole pipeline.

Subcommands: prepare-data, train-pivot, train-split, train-uncond,
train-token, sample, eval, serve. Every run writes a manifest recording the
command, the resolved config, the seed, and all inputs/outputs, so runs are
reproducible from the manifest alone. Exit codes: 0 success, 1 validation
error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from boxsplit.config import RunConfig, parse_config_file, resolve_seed

MANIFEST_HEADER = "boxsplit-manifest v1"


class CliValidationError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits with 2; the contract wants 1
        self.print_usage(sys.stderr)
        raise CliValidationError(message)


def _write_manifest(out_dir: str, command: str, config: RunConfig, inputs: list[str], outputs: list[str]) -> None:
    os.makedirs(out_dir, exist_ok=True)
    lines = [MANIFEST_HEADER, f"command {command}", f"seed {config.seed}"]
    for key, value in sorted(config.to_dict().items()):
        lines.append(f"config {key}={value}")
    lines.extend(f"input {p}" for p in inputs)
    lines.extend(f"output {p}" for p in outputs)
    with open(os.path.join(out_dir, "manifest.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


_CONFIG_FLAGS = (
    ("width", int),
    ("layers", int),
    ("heads", int),
    ("lr", float),
    ("batch-size", int),
    ("epochs", int),
    ("max-boxes", int),
    ("diffusion-T", int),
    ("sample-steps", int),
    ("repaint-resample", int),
    ("vocab-size", int),
    ("vq-latent-dim", int),
    ("vq-hidden-dim", int),
    ("vq-epochs", int),
    ("vq-batch-size", int),
)


def _add_config_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value config file; flags override it")
    parser.add_argument("--seed", type=int, default=None, help="falls back to $BOXSPLIT_SEED, then 0")
    parser.add_argument("--family", default=None)
    for flag, typ in _CONFIG_FLAGS:
        parser.add_argument(f"--{flag}", type=typ, default=None, dest=flag.replace("-", "_"))


def _resolve_config(args) -> RunConfig:
    values: dict = {}
    if getattr(args, "config", None):
        values.update(parse_config_file(args.config))
    for flag, _typ in _CONFIG_FLAGS:
        name = flag.replace("-", "_")
        if getattr(args, name, None) is not None:
            values[name if name != "diffusion_T" else "diffusion_T"] = getattr(args, name)
    if getattr(args, "family", None) is not None:
        values["family"] = args.family
    flag_seed = getattr(args, "seed", None)
    if flag_seed is not None:
        values["seed"] = flag_seed
    elif "seed" not in values:
        values["seed"] = resolve_seed(None)
    try:
        return RunConfig.from_dict(values)
    except (KeyError, ValueError) as exc:
        raise CliValidationError(str(exc)) from None


def _load_dataset_arg(path: str):
    from boxsplit.data import load_dataset

    manifest = path if path.endswith(".txt") else os.path.join(path, "dataset.txt")
    if not os.path.exists(manifest):
        raise CliValidationError(f"no dataset manifest at {manifest}")
    return load_dataset(manifest)


def cmd_prepare_data(args) -> int:
    from boxsplit.data import build_dataset, save_dataset

    config = _resolve_config(args)
    if args.count < 2:
        raise CliValidationError("--count must be >= 2")
    ds = build_dataset(config.family, args.count, config.seed)
    manifest = save_dataset(ds, args.out)
    _write_manifest(args.out, "prepare-data", config, [], [manifest])
    print(f"dataset: {len(ds.trees)} {config.family} shapes -> {manifest}")
    return 0


def _train_command(args, kind: str) -> int:
    config = _resolve_config(args)
    ds = _load_dataset_arg(args.dataset)
    config = config.replace(family=ds.family)
    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    os.makedirs(out_dir, exist_ok=True)
    log = print if args.verbose else None

    if kind == "pivot":
        from boxsplit.pivot import train_pivot

        model, history = train_pivot(ds, config, log=log)
    elif kind == "cond_split":
        from boxsplit.childsplit import train_split

        model, history = train_split(ds, config, log=log)
    elif kind == "uncond":
        from boxsplit.baselines import train_uncond

        model, history = train_uncond(ds, config, log=log)
    else:
        from boxsplit.baselines import train_token, train_vq

        vq, _ = train_vq(ds, config, log=log)
        model, history = train_token(ds, config, vq, log=log)
    model.save(args.out)

    loss_path = args.out + ".losses.csv"
    with open(loss_path, "w", encoding="utf-8") as fh:
        fh.write("epoch,train,val\n")
        val = history.get("val", [])
        for i, tr in enumerate(history["train"]):
            v = val[i] if i < len(val) else ""
            fh.write(f"{i + 1},{tr!r},{v!r}\n" if v != "" else f"{i + 1},{tr!r},\n")
    _write_manifest(out_dir, f"train-{args.command_name}", config, [args.dataset], [args.out, loss_path])
    print(f"{kind}: final train loss {history['train'][-1]:.5f} -> {args.out}")
    return 0


def _load_bundle(ckpt_dir: str, need: set[str]):
    from boxsplit.childsplit import SamplerBundle
    from boxsplit.server.app import registry_from_checkpoints

    reg = registry_from_checkpoints(ckpt_dir)
    missing = need - set(reg.splitters)
    if missing:
        raise CliValidationError(f"checkpoint dir {ckpt_dir} lacks splitters: {sorted(missing)}")
    return SamplerBundle(pivot=reg.pivot, splitters=reg.splitters)


def cmd_sample(args) -> int:
    from boxsplit.childsplit import generate_paths
    from boxsplit.report import render_boxset_figure, save_boxsets

    config = _resolve_config(args)
    if not 1 <= args.target_count <= config.max_boxes:
        raise CliValidationError(f"--target-count must be in [1, {config.max_boxes}]")
    bundle = _load_bundle(args.checkpoint_dir, {args.sampler} if args.target_count > 1 else set())
    if args.pivot_strategy == "classifier" and bundle.pivot is None:
        raise CliValidationError("no pivot checkpoint loaded; use --pivot-strategy random")
    path = generate_paths(
        bundle,
        args.target_count,
        config.seed,
        n_paths=args.count,
        sampler=args.sampler,
        pivot_strategy=args.pivot_strategy,
        steps=config.sample_steps,
        max_boxes=config.max_boxes,
    )
    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    os.makedirs(out_dir, exist_ok=True)
    sets = []
    for level, state in enumerate(path):
        for b in range(state.shape[0]):
            sets.append((level, state[b]))
    save_boxsets(args.out, sets)
    outputs = [args.out]
    fig_path = args.out + ".png"
    finest = [path[-1][b] for b in range(min(8, path[-1].shape[0]))]
    render_boxset_figure(finest, fig_path, titles=[f"sample {b}" for b in range(len(finest))])
    outputs.append(fig_path)
    _write_manifest(out_dir, "sample", config, [args.checkpoint_dir], outputs)
    print(f"sampled {args.count} path(s) to {args.target_count} boxes -> {args.out}")
    return 0


def _reference_sets_at_level(ds, level: int) -> list[np.ndarray]:
    from boxsplit.data import intermediate_sets

    out = []
    for i in ds.tree_indices("train"):
        sets = intermediate_sets(ds.trees[i])
        if len(sets) > level:
            out.append(sets[level])
    return out


def cmd_eval(args) -> int:
    from boxsplit.metrics import boxset_points, gen_metrics
    from boxsplit.report import (
        MetricReport,
        ReportRow,
        load_boxsets,
        render_report_csv,
        render_report_figures,
        render_report_text,
    )
    from boxsplit.seeding import derive_seed

    config = _resolve_config(args)
    levels = sorted({int(x) for x in args.levels.split(",") if x.strip()})
    distances = [d.strip() for d in args.distance.split(",") if d.strip()]
    for d in distances:
        if d not in ("cd", "emd"):
            raise CliValidationError(f"unknown distance {d!r}")
    generated = load_boxsets(args.generated)
    ds = _load_dataset_arg(args.reference)

    report = MetricReport(seed=config.seed, points_per_cloud=args.points)
    for level in levels:
        gen_sets = [params for lv, params in generated if lv == level]
        if not gen_sets:
            raise CliValidationError(f"generated file has no sets at level {level}")
        ref_sets = _reference_sets_at_level(ds, level)
        if not ref_sets:
            raise CliValidationError(f"reference dataset has no trees reaching level {level}")
        gen_clouds = [
            boxset_points(s, n=args.points, rng_seed=derive_seed(config.seed, "gen-cloud", level, i))
            for i, s in enumerate(gen_sets)
        ]
        ref_clouds = [
            boxset_points(s, n=args.points, rng_seed=derive_seed(config.seed, "ref-cloud", level, i))
            for i, s in enumerate(ref_sets)
        ]
        for distance in distances:
            m = gen_metrics(gen_clouds, ref_clouds, distance)
            report.rows.append(
                ReportRow(
                    family=ds.family,
                    level=level,
                    sampler=args.label,
                    pivot=args.pivot_label,
                    distance=distance,
                    cov_pct=m.cov_pct,
                    mmd=m.mmd,
                    nna_pct=m.nna_pct,
                    n_generated=len(gen_clouds),
                    n_reference=len(ref_clouds),
                )
            )

    os.makedirs(args.out, exist_ok=True)
    text_path = os.path.join(args.out, "report.txt")
    csv_path = os.path.join(args.out, "report.csv")
    with open(text_path, "w", encoding="utf-8") as fh:
        fh.write(render_report_text(report))
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(render_report_csv(report))
    outputs = [text_path, csv_path]
    outputs.extend(render_report_figures(report, os.path.join(args.out, "figures")))
    _write_manifest(args.out, "eval", config, [args.generated, args.reference], outputs)
    print(f"report -> {text_path}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from boxsplit.server.app import create_app, registry_from_checkpoints, stub_registry
    from boxsplit.server.sessions import SessionStore

    if args.stub_models:
        registry = stub_registry()
    else:
        if not args.checkpoint_dir:
            raise CliValidationError("--checkpoint-dir required unless --stub-models")
        registry = registry_from_checkpoints(args.checkpoint_dir)
    host, _, port = args.addr.rpartition(":")
    if not host or not port.isdigit():
        raise CliValidationError(f"--addr must be HOST:PORT, got {args.addr!r}")
    store = SessionStore(args.store)
    app = create_app(store, registry)
    if args.frontend_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=args.frontend_dir, html=True), name="frontend")
    uvicorn.run(app, host=host, port=int(port), log_level="warning")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="boxsplit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare-data", parents=[], help="generate shapes, merge trees, write a dataset")
    _add_config_args(p)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_prepare_data, command_name="prepare-data")

    for name, kind in (
        ("train-pivot", "pivot"),
        ("train-split", "cond_split"),
        ("train-uncond", "uncond"),
        ("train-token", "token"),
    ):
        p = sub.add_parser(name, help=f"train the {kind} model")
        _add_config_args(p)
        p.add_argument("--dataset", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--verbose", action="store_true")
        p.set_defaults(fn=lambda a, k=kind: _train_command(a, k), command_name=name)

    p = sub.add_parser("sample", help="generate granularity paths from trained checkpoints")
    _add_config_args(p)
    p.add_argument("--checkpoint-dir", required=True)
    p.add_argument("--target-count", type=int, required=True)
    p.add_argument("--count", type=int, default=1, help="number of independent paths")
    p.add_argument("--sampler", default="conditional", choices=("conditional", "inpaint", "token"))
    p.add_argument("--pivot-strategy", default="classifier", choices=("classifier", "random"))
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_sample, command_name="sample")

    p = sub.add_parser("eval", help="COV/MMD/1-NNA report with CSV and figures")
    _add_config_args(p)
    p.add_argument("--generated", required=True, help="boxsplit-sets file")
    p.add_argument("--reference", required=True, help="dataset dir or manifest")
    p.add_argument("--levels", default="5,8")
    p.add_argument("--distance", default="cd,emd")
    p.add_argument("--points", type=int, default=2048)
    p.add_argument("--label", default="generated", help="sampler label for report rows")
    p.add_argument("--pivot-label", default="-")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_eval, command_name="eval")

    p = sub.add_parser("serve", help="run the interactive editing server")
    _add_config_args(p)
    p.add_argument("--checkpoint-dir", default=None)
    p.add_argument("--addr", default="127.0.0.1:8631")
    p.add_argument("--store", default=None, help="session event-log directory")
    p.add_argument("--stub-models", action="store_true", help="serve a deterministic stub splitter")
    p.add_argument("--frontend-dir", default=None, help="static viewer files to mount at /")
    p.set_defaults(fn=cmd_serve, command_name="serve")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except CliValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 2
    except Exception as exc:  # noqa: BLE001 - runtime failures exit 2 by contract
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

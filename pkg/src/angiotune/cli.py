"""``angiotune`` command-line interface.

Option precedence is command-line flag, then config file, then built-in
default.  The output directory may also come from ``ANGIOTUNE_OUT_DIR``,
which outranks the config file but not ``--out-dir``.  Every artifact a
command writes carries the resolved run configuration.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .cineselect import DEFAULT_BINS, best_frame, load_cine, parse_band
from .descriptor import LAYOUT_TAG, extract_descriptor, layout_header
from .evalharness import STRATEGIES, DatasetManifest, EvalConfig, ingest_dca1, run_experiment
from .imgcore import load_image, save_image, save_mask
from .morphpost import AXES, FilterParams, segment
from .pnm import ImageFormatError
from .svrtune import SvrEnsemble, predict_params, train_ensemble
from .tuner import ParamGrid, default_grid, mean_params, oracle_search, read_records, write_records
from .vesselness import FILTERS

log = logging.getLogger("angiotune")

OUT_DIR_ENV = "ANGIOTUNE_OUT_DIR"
_UNSET = object()
_GLOBAL_KEYS = ("seed", "threads", "out_dir")
_NOT_OPTIONS = {"command", "config", "verbose", "handler", *_GLOBAL_KEYS}


@dataclass
class RunConfig:
    command: str
    seed: int = 0
    threads: int = 1
    out_dir: str = "."
    options: dict = field(default_factory=dict)

    def to_dict(self, *, include_threads: bool = True) -> dict:
        d = {"tool": f"angiotune {__version__}", "command": self.command, "seed": self.seed,
             "out_dir": self.out_dir, "options": self.options}
        if include_threads:
            d["threads"] = self.threads
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(**kw), sort_keys=True)

    @property
    def out_path(self) -> Path:
        p = Path(self.out_dir)
        p.mkdir(parents=True, exist_ok=True)
        return p


class CliError(Exception):
    """Problem with inputs that should end the run with a message."""


# --- argument parsing ----------------------------------------------------

def _kv(text: str) -> tuple[str, float]:
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"expected NAME=VALUE, got {text!r}")
    try:
        return key.strip(), float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{key}: {value!r} is not a number") from None


def _band(text: str) -> tuple[int, int]:
    try:
        return parse_band(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _pipeline_args(p: argparse.ArgumentParser, *, filter_required: bool = True) -> None:
    p.add_argument("--filter", choices=FILTERS, required=filter_required, help="vesselness filter")
    pol = p.add_mutually_exclusive_group()
    pol.add_argument("--dark-vessels", dest="dark_vessels", action="store_true", default=True,
                     help="vessels darker than background (default)")
    pol.add_argument("--bright-vessels", dest="dark_vessels", action="store_false",
                     help="vessels brighter than background")
    p.add_argument("--border-band", type=int, default=100, help="outer band searched for dark margins [100]")
    p.add_argument("--border-cutoff", type=float, default=50.0,
                   help="row/column mean (0-255 scale) below which a margin line is stripped [50]")
    p.add_argument("--sigma-scale", type=float, default=1.0,
                   help="multiply the sigma grid by this factor, e.g. for a different resolution [1.0]")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=0, help="seed for all randomness [0]")
    g.add_argument("--threads", type=_positive_int, default=1, help="worker threads; results do not depend on it [1]")
    g.add_argument("--out-dir", default=".", help=f"output directory [.; env {OUT_DIR_ENV}]")
    g.add_argument("--config", help="JSON file with option defaults (flat or per-command sections)")
    g.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="angiotune", description="Vesselness segmentation with learned tuning.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("best-frame", parents=[common], help="pick the best-opacified frame of a cine")
    p.add_argument("--frames-dir", required=True, help="directory of numbered frame images")
    p.add_argument("--low-band", type=_band, default=(0, 63), help="inclusive bin range lo:hi [0:63]")
    p.add_argument("--bins", type=int, default=DEFAULT_BINS, help=f"histogram bins [{DEFAULT_BINS}]")
    p.add_argument("--copy-to", help="also write the selected frame as PGM to this file name")
    p.set_defaults(handler=cmd_best_frame)

    p = sub.add_parser("segment", parents=[common], help="segment one image")
    p.add_argument("--image", required=True)
    _pipeline_args(p)
    p.add_argument("--params-source", nargs="+", default=["explicit"], metavar=("SOURCE", "PATH"),
                   help="explicit (use --param), mean-file PATH (oracle records CSV or params JSON), "
                        "or svr-model PATH")
    p.add_argument("--param", type=_kv, action="append", default=[], metavar="NAME=VALUE",
                   help="explicit parameter value; repeat per axis")
    p.add_argument("--grid", help="JSON grid used to snap mean-file parameters")
    p.add_argument("--output", help="mask file name [<image>_<filter>_mask.pgm]")
    p.set_defaults(handler=cmd_segment)

    p = sub.add_parser("features", parents=[common], help="compute 140-D descriptors")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--image", nargs="+")
    src.add_argument("--manifest")
    p.add_argument("--split", help="manifest split to use [all]")
    p.add_argument("--output", "--out", dest="output", default="features.csv", help="CSV file name [features.csv]")
    p.add_argument("--plot", action="store_true", help="also render one descriptor figure per image")
    p.set_defaults(handler=cmd_features)

    p = sub.add_parser("tune-oracle", parents=[common], help="per-image oracle grid search")
    p.add_argument("--manifest", required=True)
    _pipeline_args(p)
    p.add_argument("--split", help="manifest split to use [all]")
    p.add_argument("--grid", help="JSON grid replacing the default search grid")
    p.add_argument("--output", help="records CSV name [oracle_<filter>.csv]")
    p.set_defaults(handler=cmd_tune_oracle)

    p = sub.add_parser("train-svr", parents=[common], help="train one SVR per hyperparameter")
    p.add_argument("--manifest", required=True, help="manifest holding the record images")
    p.add_argument("--records", required=True, help="oracle records CSV")
    p.add_argument("--sigma-scale", type=float, default=1.0, help="sigma grid factor used for snapping [1.0]")
    p.add_argument("--grid", help="JSON grid replacing the default grid")
    p.add_argument("--outer-folds", type=_positive_int, default=5)
    p.add_argument("--inner-folds", type=_positive_int, default=3)
    p.add_argument("--output", help="model JSON name [svr_<filter>.json]")
    p.set_defaults(handler=cmd_train_svr)

    p = sub.add_parser("predict-params", parents=[common], help="predict snapped parameters for images")
    p.add_argument("--model", required=True)
    p.add_argument("--image", nargs="+", required=True)
    p.add_argument("--output", default="predicted_params.json", help="JSON file name [predicted_params.json]")
    p.set_defaults(handler=cmd_predict_params)

    p = sub.add_parser("evaluate", parents=[common], help="score a tuning strategy on a manifest")
    p.add_argument("--manifest", required=True)
    _pipeline_args(p)
    p.add_argument("--strategy", choices=STRATEGIES, required=True)
    p.add_argument("--records", help="oracle records CSV (mean strategy)")
    p.add_argument("--param", type=_kv, action="append", default=[], metavar="NAME=VALUE",
                   help="mean strategy: parameter values to snap, instead of --records")
    p.add_argument("--model", help="SVR ensemble JSON (svr strategy)")
    p.add_argument("--split", help="manifest split to evaluate [all]")
    p.add_argument("--folds", type=_positive_int, default=1, help="subject-level folds for per-fold stats [1]")
    p.add_argument("--grid", help="JSON grid replacing the default grid")
    p.add_argument("--report", help="report base name [eval_<filter>_<strategy>]")
    p.add_argument("--figures", action="store_true", help="also render the report figure as PNG")
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("ingest-dca1", parents=[common], help="build a manifest for a DCA1 directory")
    p.add_argument("--root", required=True)
    p.add_argument("--n-train", type=int, default=100, help="leading pairs tagged train [100]")
    p.add_argument("--output", default="dca1_manifest.csv", help="manifest file name [dca1_manifest.csv]")
    p.add_argument("--strict", action="store_true", help="fail when any file is unpaired")
    p.set_defaults(handler=cmd_ingest_dca1)
    return parser


def _subparser(parser: argparse.ArgumentParser, name: str) -> argparse.ArgumentParser:
    for action in parser._subparsers._group_actions:
        if name in action.choices:
            return action.choices[name]
    raise KeyError(name)


def _explicit_dests(parser, sub, argv) -> set:
    """Destinations the user actually set on the command line."""
    saved = [(a, a.default) for a in sub._actions if a.dest not in ("help", argparse.SUPPRESS)]
    try:
        for a, _ in saved:
            # append and count actions build on their default, so they get None
            a.default = None if isinstance(a, (argparse._AppendAction, argparse._CountAction)) else _UNSET
        ns = parser.parse_args(argv)
    finally:
        for a, d in saved:
            a.default = d
    return {k for k, v in vars(ns).items() if v is not _UNSET and v is not None}


def _load_config_file(path: str, command: str) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read config file {path}: {exc}") from None
    if not isinstance(data, dict):
        raise CliError(f"config file {path} must hold a JSON object")
    flat = {k.replace("-", "_"): v for k, v in data.items() if not isinstance(v, dict)}
    section = data.get(command, {})
    flat.update({k.replace("-", "_"): v for k, v in section.items()})
    return flat


def parse_args(argv: Optional[Sequence[str]] = None):
    """Parse ``argv`` and fold in the config file and environment."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    sub = _subparser(parser, args.command)
    explicit = _explicit_dests(parser, sub, argv)
    if args.config:
        known = {a.dest for a in sub._actions}
        for key, value in _load_config_file(args.config, args.command).items():
            if key not in known:
                sub.error(f"config file sets unknown option {key!r}")
            if key not in explicit:
                action = next(a for a in sub._actions if a.dest == key)
                if isinstance(value, str) and action.type is not None and action.nargs is None:
                    value = action.type(value)
                elif key == "low_band" and isinstance(value, list):
                    value = tuple(value)
                setattr(args, key, value)
    if "out_dir" not in explicit and os.environ.get(OUT_DIR_ENV):
        args.out_dir = os.environ[OUT_DIR_ENV]
    return parser, args


def _jsonable(v):
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, Path):
        return str(v)
    return v


def run_config(args) -> RunConfig:
    options = {k: _jsonable(v) for k, v in sorted(vars(args).items()) if k not in _NOT_OPTIONS}
    return RunConfig(args.command, args.seed, args.threads, str(args.out_dir), options)


# --- helpers -------------------------------------------------------------

def _grid(args, filter: str) -> ParamGrid:
    if getattr(args, "grid", None):
        grid = ParamGrid.from_dict(json.loads(Path(args.grid).read_text()))
        if grid.filter != filter:
            raise CliError(f"grid file is for {grid.filter}, not {filter}")
    else:
        grid = default_grid(filter)
    return grid.scaled_sigma(args.sigma_scale) if args.sigma_scale != 1.0 else grid


def _seg_kwargs(args) -> dict:
    return dict(dark_vessels=args.dark_vessels, border_band=args.border_band, border_cutoff=args.border_cutoff)


def _explicit_params(filter: str, pairs) -> FilterParams:
    values = dict(pairs)
    unknown = set(values) - set(AXES[filter])
    if unknown:
        raise CliError(f"{filter} has no parameters {sorted(unknown)}; expected {list(AXES[filter])}")
    missing = [a for a in AXES[filter] if a not in values]
    if missing:
        raise CliError(f"missing --param values for {missing}")
    return FilterParams.from_dict({"filter": filter, **values})


def _map(threads: int, fn, items):
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _write_json(path: Path, payload: dict) -> Path:
    path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")
    return path


# --- commands ------------------------------------------------------------

def cmd_best_frame(args, cfg: RunConfig) -> int:
    cine, files = load_cine(args.frames_dir)
    idx = best_frame(cine, args.low_band, args.bins)
    if args.copy_to:
        out = cfg.out_path / args.copy_to
        # 16-bit keeps both 8- and 16-bit sources lossless
        save_image(out, cine.frames[idx], "pgm", bits=16, comment="config=" + cfg.to_json())
    print(f"{idx}\t{files[idx]}")
    return 0


def _segment_params(args, img) -> FilterParams:
    source, *rest = args.params_source
    if source == "explicit":
        if rest:
            raise CliError("explicit parameter source takes no path")
        return _explicit_params(args.filter, args.param)
    if source not in ("mean-file", "svr-model"):
        raise CliError(f"unknown parameter source {source!r}")
    if len(rest) != 1:
        raise CliError(f"{source} needs exactly one PATH")
    if args.param:
        raise CliError("--param is only used with the explicit source")
    path = Path(rest[0])
    if source == "svr-model":
        ensemble = SvrEnsemble.load(path)
        if ensemble.filter != args.filter:
            raise CliError(f"model is for {ensemble.filter}, not {args.filter}")
        return predict_params(ensemble, extract_descriptor(img))
    grid = _grid(args, args.filter)
    if path.suffix.lower() == ".json":
        data = json.loads(path.read_text())
        data = data.get("params", data)
        return grid.snap({a: data[a] for a in AXES[args.filter]})
    return grid.snap(mean_params(read_records(path), args.filter))


def cmd_segment(args, cfg: RunConfig) -> int:
    if args.params_source[0] not in ("explicit", "mean-file", "svr-model"):
        raise CliError(f"--params-source must be explicit, mean-file or svr-model, not {args.params_source[0]!r}")
    img = load_image(args.image)
    params = _segment_params(args, img)
    mask = segment(img, params, **_seg_kwargs(args))
    out = cfg.out_path / (args.output or f"{Path(args.image).stem}_{args.filter}_mask.pgm")
    comment = "config=" + cfg.to_json() + " params=" + json.dumps(params.to_dict(), sort_keys=True)
    save_mask(out, mask, comment=comment)
    print(out)
    return 0


def _images_from(args) -> list[tuple[str, Path]]:
    if getattr(args, "manifest", None):
        m = DatasetManifest.read(args.manifest).select(args.split)
        return [(e.image_id, e.image) for e in sorted(m.entries, key=lambda e: e.image_id)]
    return [(Path(p).stem, Path(p)) for p in args.image]


def cmd_features(args, cfg: RunConfig) -> int:
    items = _images_from(args)
    phis = _map(args.threads, lambda it: extract_descriptor(load_image(it[1])), items)
    lines = ["# config=" + cfg.to_json(include_threads=False), "# layout=" + LAYOUT_TAG,
             ",".join(["image_id"] + layout_header())]
    for (image_id, _), phi in zip(items, phis):
        lines.append(",".join([image_id] + [repr(float(v)) for v in phi]))
    out = cfg.out_path / args.output
    out.write_text("\n".join(lines) + "\n")
    if args.plot:
        from .plotting import plot_descriptor

        for (image_id, _), phi in zip(items, phis):
            plot_descriptor(phi, cfg.out_path / f"{image_id}_descriptor.png")
    print(out)
    return 0


def cmd_tune_oracle(args, cfg: RunConfig) -> int:
    manifest = DatasetManifest.read(args.manifest).select(args.split)
    if not manifest.entries:
        raise CliError("manifest selection is empty")
    grid = _grid(args, args.filter)
    entries = sorted(manifest.entries, key=lambda e: e.image_id)

    def tune(e):
        img, gt = load_image(e.image), load_image(e.mask) > 0
        if img.shape != gt.shape:
            raise CliError(f"{e.image_id}: image and mask sizes differ")
        rec = oracle_search(img, gt, args.filter, grid, image_id=e.image_id, **_seg_kwargs(args))
        log.info("%s: dice %.4f at %s", e.image_id, rec.dice, rec.params.to_dict())
        return rec

    records = _map(args.threads, tune, entries)
    out = cfg.out_path / (args.output or f"oracle_{args.filter}.csv")
    write_records(out, records, cfg.to_dict(include_threads=False))
    print(out)
    return 0


def cmd_train_svr(args, cfg: RunConfig) -> int:
    records = read_records(args.records)
    if not records:
        raise CliError(f"no records in {args.records}")
    filters = {r.filter for r in records}
    if len(filters) != 1:
        raise CliError(f"records mix filters {sorted(filters)}")
    filter = filters.pop()
    manifest = DatasetManifest.read(args.manifest)
    by_id = {e.image_id: e for e in manifest.entries}
    missing = [r.image_id for r in records if r.image_id not in by_id]
    if missing:
        raise CliError(f"records reference images absent from the manifest: {missing[:5]}")
    X = np.array(_map(args.threads, lambda r: extract_descriptor(load_image(by_id[r.image_id].image)), records))
    grid = _grid(args, filter)
    ensemble = train_ensemble(X, records, grid, outer_folds=args.outer_folds, inner_folds=args.inner_folds,
                              seed=args.seed, threads=args.threads)
    out = cfg.out_path / (args.output or f"svr_{filter}.json")
    ensemble.save(out, cfg.to_dict(include_threads=False))
    print(out)
    return 0


def cmd_predict_params(args, cfg: RunConfig) -> int:
    ensemble = SvrEnsemble.load(args.model)
    preds = {}
    for p in args.image:
        params = predict_params(ensemble, extract_descriptor(load_image(p)))
        preds[Path(p).stem] = params.to_dict()
        print(Path(p).stem, json.dumps(params.to_dict(), sort_keys=True))
    _write_json(cfg.out_path / args.output, {"config": cfg.to_dict(), "predictions": preds})
    return 0


def cmd_evaluate(args, cfg: RunConfig) -> int:
    manifest = DatasetManifest.read(args.manifest)
    grid = _grid(args, args.filter)
    records = ensemble = None
    mean = None
    if args.strategy == "mean":
        if args.records:
            records = read_records(args.records)
        elif args.param:
            mean = dict(args.param)
        else:
            raise CliError("--strategy mean needs --records or --param values")
    elif args.strategy == "svr":
        if not args.model:
            raise CliError("--strategy svr needs --model")
        ensemble = SvrEnsemble.load(args.model)
    config = EvalConfig(args.filter, args.strategy, seed=args.seed, threads=args.threads, folds=args.folds,
                        split=args.split, grid=grid.to_dict(), dark_vessels=args.dark_vessels,
                        border_band=args.border_band, border_cutoff=args.border_cutoff, mean_params=mean)
    report = run_experiment(manifest, args.filter, args.strategy, config, records=records, ensemble=ensemble)
    if not report.results:
        raise CliError("no images to evaluate")
    # the thread count cannot change results, so it is left out to keep reports byte-identical
    report.config = cfg.to_dict(include_threads=False)
    base = cfg.out_path / (args.report or f"eval_{args.filter}_{args.strategy}")
    report.write_jsonl(base.with_suffix(".jsonl"))
    report.write_csv(base.with_suffix(".csv"))
    if args.figures:
        from .plotting import plot_report

        plot_report(report, base.with_suffix(".png"))
    s = report.summary()
    print(f"{args.filter} {args.strategy}: n={s['n_images']} mean Dice {s['mean']:.4f} +/- {s['sd']:.4f}")
    return 0


def cmd_ingest_dca1(args, cfg: RunConfig) -> int:
    manifest, problems = ingest_dca1(args.root, args.n_train)
    for msg in problems:
        print(f"angiotune: unpaired: {msg}", file=sys.stderr)
    out = cfg.out_path / args.output
    manifest.write(out, cfg.to_dict())
    n_train = sum(e.split == "train" for e in manifest.entries)
    print(f"{out}: {len(manifest)} entries ({n_train} train, {len(manifest) - n_train} test)")
    return 1 if problems and args.strict else 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        parser, args = parse_args(argv)
    except CliError as exc:
        print(f"angiotune: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = run_config(args)
    try:
        return args.handler(args, cfg)
    except (CliError, ImageFormatError, ValueError, KeyError, OSError) as exc:
        print(f"angiotune: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

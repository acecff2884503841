"""
``labelsmith`` command line.

Every subcommand reads its parameters from flags, then from the matching
section of a JSON ``--config`` file, then from built-in defaults, in that
order. Reports embed the tool version and the effective configuration; no
timestamps are written, so identical inputs and ``--seed`` give
byte-identical outputs.

Exit codes: 0 success, 1 usage or configuration error, 2 data error.
"""

import argparse
import logging
import os
import sys
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .class_stats import class_frequencies, export_weights, image_scores
from .dataset_io import (
    COCO_JSON,
    FORMATS,
    AnnotationSet,
    DirectoryImages,
    load_annotations,
    load_detections,
    read_json,
    save_annotations,
    save_detections,
    save_png,
    save_report,
)
from .error_sim import ErrorSpec, inject, level_preset
from .exceptions import ConfigError, DataError
from .glc import GlcConfig, apply_corrections, run_glc
from .pls import PlsConfig, recommend_threshold, select, selected_detections
from .quality_eval import compare_metrics, quality
from .rcc import LAYOUTS, RccConfig, append_collages, build_collages
from .rcf import plan_epochs, stratify
from .sim_oracle import DETECTOR_PRESETS, SCENE_PRESETS, DetectorSpec, SceneSpec, gen_detections, gen_scenes

logger = logging.getLogger("labelsmith")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
THREADS_ENV = "LABELSMITH_THREADS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad usage; 2 is reserved for data errors here
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# value parsers
# ---------------------------------------------------------------------------

def _floats(text) -> List[float]:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from None


def _strings(text) -> List[str]:
    if isinstance(text, (list, tuple)):
        return [str(v) for v in text]
    return [v.strip() for v in str(text).split(",") if v.strip()]


def _canvas(text):
    if isinstance(text, (list, tuple)) and len(text) == 2:
        return int(text[0]), int(text[1])
    try:
        w, h = str(text).lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise ConfigError(f"canvas must look like WIDTHxHEIGHT, got {text!r}") from None


@dataclass(frozen=True)
class Opt:
    flag: str
    default: Any = None
    type: Optional[Callable] = None
    help: str = ""
    required: bool = False
    choices: Optional[Sequence] = None
    switch: bool = False

    @property
    def dest(self) -> str:
        return self.flag.lstrip("-").replace("-", "_")


ANNOTATION_OPTS = [
    Opt("--annotations", required=True, help="annotation file (COCO JSON) or KITTI label file/dir"),
    Opt("--format", COCO_JSON, choices=FORMATS, help="annotation format"),
    Opt("--image-dir", help="KITTI only: image directory used for image sizes"),
]

COMMANDS: Dict[str, dict] = {}


def command(name: str, help: str, opts: List[Opt]):
    def deco(fn):
        COMMANDS[name] = {"help": help, "opts": opts, "run": fn}
        return fn

    return deco


def _meta(name: str, cfg: dict) -> dict:
    return {"tool": "labelsmith", "version": __version__, "command": name, "config": cfg}


def _annotations(cfg) -> AnnotationSet:
    return load_annotations(cfg["annotations"], cfg["format"], image_dir=cfg.get("image_dir"))


def _out_dir(path) -> Path:
    d = Path(path)
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataError(f"cannot create output directory {d}: {e}") from e
    return d


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

@command(
    "stats",
    "class frequencies and per-image rarity scores",
    ANNOTATION_OPTS
    + [
        Opt("--out", required=True, help="stats report path"),
        Opt("--gamma-f", 20.0, float, "upper end of the rescaled rarity score"),
        Opt("--export-weights", help="also write per-image weights here"),
    ],
)
def _stats(cfg):
    ds = _annotations(cfg)
    stats = class_frequencies(ds)
    scores = image_scores(ds, cfg["gamma_f"], stats)
    body = {
        "class_frequencies": stats.to_dict(ds.classes),
        "images": [{"image_id": s.image_id, "F": s.raw_F, "F_scaled": s.scaled_F} for s in scores],
    }
    save_report(body, cfg["out"], _meta("stats", cfg))
    if cfg.get("export_weights"):
        export_weights(ds, cfg["gamma_f"], cfg["export_weights"])


@command(
    "rcc",
    "build rare-class collages",
    ANNOTATION_OPTS
    + [
        Opt("--images", required=True, help="directory holding the source images"),
        Opt("--rare-classes", required=True, type=_strings, help="comma-separated class names or ids"),
        Opt("--gamma-min", 0.25, float, "lower bound of the crop padding ratio"),
        Opt("--gamma-max", 0.75, float, "upper bound of the crop padding ratio"),
        Opt("--layout", "horizontal", choices=LAYOUTS),
        Opt("--canvas", "1024x512", _canvas, "collage size WIDTHxHEIGHT"),
        Opt("--scale-variation", False, switch=True, help="randomize crop heights"),
        Opt("--out-dir", required=True, help="directory for PNGs and annotation files"),
    ],
)
def _rcc(cfg):
    ds = _annotations(cfg)
    rare = _class_ids(cfg["rare_classes"], ds.classes)
    w, h = cfg["canvas"]
    rc = RccConfig(rare, cfg["gamma_min"], cfg["gamma_max"], cfg["layout"], cfg["scale_variation"], w, h, cfg["seed"])
    collages = build_collages(ds, DirectoryImages(cfg["images"]), rc)
    out = _out_dir(cfg["out_dir"])
    augmented = append_collages(ds, collages)
    new = augmented.images[len(ds.images) :]
    for rec, c in zip(new, collages):
        save_png(c.image, out / rec.file_name)
    save_annotations(ds.with_images(tuple(new)), out / "collages.json")
    save_annotations(augmented, out / "augmented.json")
    prov = [
        {"image_id": rec.image_id, "sources": [p.to_dict() for p in c.provenance]} for rec, c in zip(new, collages)
    ]
    save_report({"collages": prov}, out / "rcc_report.json", _meta("rcc", cfg))


def _class_ids(tokens, classes) -> List[int]:
    ids = []
    for t in tokens:
        if t in classes:
            ids.append(classes.index(t))
        elif t.isdigit() and int(t) < len(classes):
            ids.append(int(t))
        else:
            raise ConfigError(f"unknown class {t!r}")
    return ids


@command(
    "rcf",
    "plan rare-aware batches",
    ANNOTATION_OPTS
    + [
        Opt("--out", required=True, help="batch plan path"),
        Opt("--batch-size", 8, int),
        Opt("--gamma-f", 20.0, float),
        Opt("--epochs", 1, int),
        Opt("--no-pair-rare", False, switch=True, help="one rare image per batch instead of two"),
    ],
)
def _rcf(cfg):
    ds = _annotations(cfg)
    B = cfg["batch_size"]
    rare, common = stratify(ds, batch_size=B, gamma_f=cfg["gamma_f"])
    plan = plan_epochs(rare, common, B, cfg["epochs"], cfg["seed"], pair_rare=not cfg["no_pair_rare"])
    save_report(plan, cfg["out"], _meta("rcf", cfg))


@command(
    "glc",
    "correct ground truth from prediction consistency",
    ANNOTATION_OPTS
    + [
        Opt("--preds", required=True, help="detections on the original images"),
        Opt("--preds-aug", required=True, type=_strings, help="comma-separated detection files, one per variant"),
        Opt("--delta-floor", 0.1, float),
        Opt("--delta-s", 0.4, float),
        Opt("--gamma-c", 0.9, float),
        Opt("--gamma-o", 0.9, float),
        Opt("--match-iou", 0.5, float),
        Opt("--no-class-correction", False, switch=True),
        Opt("--out", required=True, help="corrected annotation file"),
        Opt("--report", required=True, help="correction report path"),
    ],
)
def _glc(cfg):
    ds = _annotations(cfg)
    gc = GlcConfig(
        cfg["delta_floor"], cfg["delta_s"], cfg["gamma_c"], cfg["gamma_o"], cfg["match_iou"], not cfg["no_class_correction"]
    )
    original = load_detections(cfg["preds"])
    augmented = [load_detections(p) for p in cfg["preds_aug"]]
    report = run_glc(ds, original, augmented, gc)
    save_annotations(apply_corrections(ds, report), cfg["out"])
    save_report(report, cfg["report"], _meta("glc", cfg))


@command(
    "inject-errors",
    "corrupt annotations with synthetic label errors",
    ANNOTATION_OPTS
    + [
        Opt("--level", type=int, choices=(1, 2), help="error preset"),
        Opt("--custom", help="JSON error spec (alternative to --level)"),
        Opt("--class-flip", type=float, help="override the class-flip fraction"),
        Opt("--out", required=True, help="corrupted annotation file"),
        Opt("--ledger", required=True, help="injection ledger path"),
    ],
)
def _inject(cfg):
    if (cfg.get("level") is None) == (cfg.get("custom") is None):
        raise UsageError("exactly one of --level and --custom is required")
    if cfg.get("level") is not None:
        spec = level_preset(cfg["level"], cfg["seed"])
    else:
        raw = read_json(cfg["custom"]) or {}
        if not isinstance(raw, dict):
            raise DataError(f"{cfg['custom']}: error spec must be an object")
        spec = ErrorSpec.from_dict({**raw, "seed": cfg["seed"]})
    if cfg.get("class_flip") is not None:
        spec = ErrorSpec.from_dict({**spec.to_dict(), "class_flip_frac": cfg["class_flip"]})
    ds = _annotations(cfg)
    corrupted, ledger = inject(ds, spec)
    save_annotations(corrupted, cfg["out"])
    save_report({"spec": spec.to_dict(), **ledger.to_dict()}, cfg["ledger"], _meta("inject-errors", cfg))


@command(
    "pls",
    "select pseudo-labeled images",
    [
        Opt("--preds", required=True, help="pseudo-label detections"),
        Opt("--delta-s", 0.4, float),
        Opt("--alpha", 0.1, float),
        Opt("--beta", 0.1, float),
        Opt("--remove", 0.2, float, "fraction of images to drop"),
        Opt("--out", required=True, help="selection report path"),
        Opt("--selected", help="also write the kept pseudo-labels (filtered at delta-s) here"),
    ],
)
def _pls(cfg):
    dets = load_detections(cfg["preds"])
    report = select(dets, PlsConfig(cfg["delta_s"], cfg["alpha"], cfg["beta"], cfg["remove"]))
    save_report(report, cfg["out"], _meta("pls", cfg))
    if cfg.get("selected"):
        save_detections(selected_detections(dets, report), cfg["selected"])


@command(
    "recommend-threshold",
    "mean score of matched validation detections",
    ANNOTATION_OPTS
    + [
        Opt("--preds", required=True, help="validation detections"),
        Opt("--match-iou", 0.5, float),
        Opt("--any-class", False, switch=True, help="count matches regardless of class"),
        Opt("--out", help="write the result here instead of stdout"),
    ],
)
def _recommend(cfg):
    t = recommend_threshold(load_detections(cfg["preds"]), _annotations(cfg), cfg["match_iou"], not cfg["any_class"])
    if cfg.get("out"):
        save_report({"delta_s": t}, cfg["out"], _meta("recommend-threshold", cfg))
    else:
        print(repr(t))


@command(
    "eval",
    "pseudo-label quality against reference labels",
    ANNOTATION_OPTS
    + [
        Opt("--preds", required=True),
        Opt("--delta-s", 0.4, float, "score filter applied before matching"),
        Opt("--match-iou", 0.5, float),
        Opt("--out", required=True),
    ],
)
def _eval(cfg):
    from .pls import filter_by_score

    dets = filter_by_score(load_detections(cfg["preds"]), cfg["delta_s"])
    save_report(quality(dets, _annotations(cfg), cfg["match_iou"]), cfg["out"], _meta("eval", cfg))


@command(
    "eval-roc",
    "ROC of per-image selection metrics against high-miss images",
    ANNOTATION_OPTS
    + [
        Opt("--preds", required=True),
        Opt("--delta-s", 0.9, float),
        Opt("--alpha", 0.1, float),
        Opt("--betas", "0,0.1,0.25", _floats),
        Opt("--mdr-cut", 0.5, float),
        Opt("--match-iou", 0.5, float),
        Opt("--out", required=True),
    ],
)
def _eval_roc(cfg):
    res = compare_metrics(
        load_detections(cfg["preds"]),
        _annotations(cfg),
        cfg["delta_s"],
        cfg["alpha"],
        cfg["betas"],
        cfg["mdr_cut"],
        cfg["match_iou"],
    )
    save_report({"metrics": {k: v.to_dict() for k, v in res.items()}}, cfg["out"], _meta("eval-roc", cfg))


def _spec(value, presets, cls, what):
    if value in presets:
        return presets[value]
    raw = read_json(value)
    if not isinstance(raw, dict):
        raise DataError(f"{value}: {what} spec must be an object")
    return cls.from_dict(raw)


@command(
    "simulate",
    "generate synthetic scenes and detections",
    [
        Opt("--scenes", "default", help=f"scene spec JSON or preset ({', '.join(SCENE_PRESETS)})"),
        Opt("--detector", "calibrated", help=f"detector spec JSON or preset ({', '.join(DETECTOR_PRESETS)})"),
        Opt("--out-dir", required=True),
        Opt("--rasters", False, switch=True, help="also write PNG rasters"),
    ],
)
def _simulate(cfg):
    scene_seed, det_seed = (int(s) for s in np.random.SeedSequence(cfg["seed"]).generate_state(2))
    scenes = SceneSpec.from_dict({**_spec(cfg["scenes"], SCENE_PRESETS, SceneSpec, "scene").to_dict(), "seed": scene_seed})
    det = DetectorSpec.from_dict({**_spec(cfg["detector"], DETECTOR_PRESETS, DetectorSpec, "detector").to_dict(), "seed": det_seed})
    out = _out_dir(cfg["out_dir"])
    bundle = gen_scenes(scenes)
    dets = gen_detections(bundle.annotations, det)
    save_annotations(bundle.annotations, out / "annotations.json")
    for name, dset in dets.variants.items():
        save_detections(dset, out / f"detections_{name}.json")
    body = {"scenes": scenes.to_dict(), "detector": det.to_dict(), "truth": dets.truth.to_dict()}
    save_report(body, out / "truth.json", _meta("simulate", cfg))
    if cfg["rasters"]:
        img_dir = _out_dir(out / "images")
        for rec in bundle.annotations.images:
            save_png(bundle.rasters[rec.image_id], img_dir / rec.file_name)


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="labelsmith", description="Label tooling for semi-supervised object detection.")
    parser.add_argument("--version", action="version", version=f"labelsmith {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    for name, c in COMMANDS.items():
        p = sub.add_parser(name, help=c["help"], description=c["help"])
        # SUPPRESS keeps unset flags out of the namespace so config values can fill them
        p.add_argument("--config", default=argparse.SUPPRESS, help="JSON config file")
        p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="global random seed (default 0)")
        p.add_argument("--log-level", default=argparse.SUPPRESS, choices=("DEBUG", "INFO", "WARNING", "ERROR"))
        for o in c["opts"]:
            kw = {"dest": o.dest, "default": argparse.SUPPRESS}
            if o.switch:
                kw["action"] = "store_true"
            else:
                kw["choices"] = o.choices
                if o.type is not None and o.type in (int, float):
                    kw["type"] = o.type
            shown = "" if o.default is None or o.switch else f" (default {o.default})"
            kw["help"] = (o.help + shown).strip() or None
            p.add_argument(o.flag, **kw)
    return parser


def _load_config(path, name) -> dict:
    raw = read_json(path) or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be an object")
    # top-level scalars apply to every command; a section named after the command wins
    flat = {k: v for k, v in raw.items() if not isinstance(v, dict)}
    section = raw.get(name, {})
    if not isinstance(section, dict):
        raise ConfigError(f"{path}: section {name!r} must be an object")
    return {k.replace("-", "_"): v for k, v in {**flat, **section}.items()}


def resolve(name: str, ns: dict) -> dict:
    """Effective configuration: flags > config file > defaults."""
    opts = COMMANDS[name]["opts"]
    known = {o.dest: o for o in opts}
    file_cfg = _load_config(ns["config"], name) if "config" in ns else {}
    cfg = {"seed": 0, "log_level": "WARNING"}
    cfg.update({o.dest: o.default for o in opts})
    for k, v in file_cfg.items():
        if k not in known and k not in ("seed", "log_level"):
            # keys meant for other commands are fine at top level
            continue
        cfg[k] = v
    cfg.update({k: v for k, v in ns.items() if k not in ("config", "command")})
    for o in opts:
        v = cfg.get(o.dest)
        if v is None:
            if o.required:
                raise UsageError(f"labelsmith {name}: the following argument is required: {o.flag}")
            continue
        if o.type is not None:
            try:
                cfg[o.dest] = o.type(v)
            except (TypeError, ValueError):
                raise UsageError(f"labelsmith {name}: invalid value for {o.flag}: {v!r}") from None
        if o.choices is not None and cfg[o.dest] not in o.choices:
            raise UsageError(f"labelsmith {name}: {o.flag} must be one of {list(o.choices)}")
    try:
        cfg["seed"] = int(cfg["seed"])
    except (TypeError, ValueError):
        raise UsageError(f"labelsmith {name}: seed must be an integer") from None
    return cfg


def _threads():
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    try:
        import numba
    except ImportError:
        return
    with warnings.catch_warnings():
        # an outdated TBB install only warns that numba falls back to another layer
        warnings.simplefilter("ignore")
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        ns = vars(parser.parse_args(argv))
        name = ns.get("command")
        if name is None:
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        cfg = resolve(name, ns)
        logging.basicConfig(level=cfg["log_level"], format="%(levelname)s %(name)s: %(message)s", force=True)
        _threads()
        cfg = {k: (list(v) if isinstance(v, tuple) else v) for k, v in cfg.items()}
        COMMANDS[name]["run"](cfg)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except SystemExit as e:
        # --help and --version
        return int(e.code or 0)
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()

"""Command line entry point: ``hierseg synth|generate-gt|mine|train|eval``.

Log verbosity comes from the ``HIERSEG_LOG`` environment variable
(``DEBUG``, ``INFO``, ``WARNING``...). Every command exits non-zero on error
and prints a JSON summary on stdout when ``--json`` is given.
"""
import argparse
import json
import logging
import os
import sys
from dataclasses import replace

import yaml

from . import checkpoint
from .config import ConfigError, ExperimentConfig
from .config import load as load_config
from .datapipe.dataset import MODES, PER_PIXEL, load_dataset, read_annotations, synth_generate
from .metrics import format_table
from .miner import WeightsError, default_weights, load_weights, mine_csv
from .model import build
from .pseudo_gt import AnnotationError, dumps_dense_gt, weak_pseudo_gt
from .taxonomy import TaxonomyError, default_taxonomy, load_taxonomy
from .trainer import RunError, epoch_metrics, evaluate, run_training, with_seed

log = logging.getLogger("hierseg")


class CLIError(Exception):
    pass


def _taxonomy(cfg, base):
    if cfg.taxonomy:
        return load_taxonomy(os.path.join(base, cfg.taxonomy))
    return default_taxonomy()


def _read_config(path):
    if path is None:
        return ExperimentConfig(), "."
    if not os.path.exists(path):
        raise CLIError(f"config file {path!r} not found")
    return load_config(path), os.path.dirname(os.path.abspath(path))


def _require_out(args):
    if not args.out:
        raise CLIError("--out is required")
    return args.out


def cmd_synth(args):
    cfg, base = _read_config(args.config)
    tax = _taxonomy(cfg, base)
    out = _require_out(args)
    probs = None
    if args.thing_probs:
        probs = yaml.safe_load(args.thing_probs)
        if not isinstance(probs, dict):
            raise CLIError("--thing-probs must be a mapping like '{vehicle/truck: 0.1}'")
    ds = synth_generate(tax, args.n, args.mode, args.seed, out, tuple(args.size),
                        dataset=cfg.label_map, thing_probs=probs, domain_shift=args.domain_shift)
    return {"out": out, "mode": ds.mode, "count": len(ds), "seed": args.seed}


def cmd_generate_gt(args):
    """Write ``<id>.hseg`` (probabilities) and ``<id>.cov`` (coverage) per weak image."""
    cfg, base = _read_config(args.config)
    tax = _taxonomy(cfg, base)
    out = _require_out(args)
    src = os.path.join(args.data, "annotations.jsonl") if os.path.isdir(args.data) else args.data
    if not os.path.exists(src):
        raise CLIError(f"annotations file {src!r} not found")
    os.makedirs(out, exist_ok=True)
    n = covered = 0
    for image_id, size, anns in read_annotations(src):
        maps = weak_pseudo_gt(anns, size, tax, cfg.label_map)
        probs_buf, cov_buf = dumps_dense_gt(maps, tax)
        with open(os.path.join(out, f"{image_id}.hseg"), "wb") as f:
            f.write(probs_buf)
        with open(os.path.join(out, f"{image_id}.cov"), "wb") as f:
            f.write(cov_buf)
        n += 1
        covered += int(sum(m.coverage.sum() for m in maps.values()))
    return {"out": out, "images": n, "covered_pixels": covered}


def cmd_mine(args):
    if not args.meta or not os.path.exists(args.meta):
        raise CLIError(f"metadata file {args.meta!r} not found")
    weights = load_weights(args.weights) if args.weights else default_weights()
    out = _require_out(args)
    result = mine_csv(args.meta, weights, args.k_bbox, args.k_image)
    result.write(out)
    return {"out": out, **result.summary}


def _load_datasets(cfg, base):
    datasets, val = {}, None
    for key, path in cfg.data.items():
        full = os.path.join(base, path)
        if not os.path.isdir(full):
            raise CLIError(f"data.{key}: directory {full!r} not found")
        ds = load_dataset(full)
        if key == "val":
            val = ds
        elif key in MODES:
            if ds.mode != key:
                raise CLIError(f"data.{key} points at a {ds.mode!r} dataset")
            datasets[key] = ds
        else:
            raise CLIError(f"unknown data key {key!r}; use one of {list(MODES) + ['val']}")
    missing = [k for k, c in cfg.batch.counts().items() if c > 0 and k not in datasets]
    if missing:
        raise CLIError(f"batch requests {missing} but config.data has no such dataset")
    return datasets, val


def cmd_train(args):
    if args.config is None:
        raise CLIError("train needs --config")
    cfg, base = _read_config(args.config)
    if args.seed is not None:
        cfg = with_seed(cfg, args.seed)
    # absolute paths keep the effective config reloadable from the run directory
    cfg = replace(cfg, data={k: os.path.abspath(os.path.join(base, v)) for k, v in cfg.data.items()},
                  taxonomy=cfg.taxonomy and os.path.abspath(os.path.join(base, cfg.taxonomy)))
    out = args.out or cfg.out
    if not out:
        raise CLIError("no output directory: pass --out or set 'out' in the config")
    if args.resume and not os.path.exists(args.resume):
        raise CLIError(f"cannot resume: checkpoint {args.resume!r} not found")
    tax = _taxonomy(cfg, base)
    datasets, val = _load_datasets(cfg, base)
    result = run_training(cfg, tax, datasets, val, out, resume=args.resume)
    summary = {k: result.report.get(k) for k in ("miou", "macc", "sub_miou", "sub_macc")}
    return {"out": out, "seed": cfg.seed, "epochs": cfg.optimizer.epochs,
            "final_loss": result.losses[-1] if result.losses else None, **summary}


def cmd_eval(args):
    if not args.checkpoint or not os.path.exists(args.checkpoint):
        raise CLIError(f"checkpoint {args.checkpoint!r} not found")
    cfg_path = args.config
    if cfg_path is None:
        # a training run stores its resolved config beside the checkpoint
        guess = os.path.join(os.path.dirname(args.checkpoint), "effective_config.yaml")
        cfg_path = guess if os.path.exists(guess) else None
    cfg, base = _read_config(cfg_path)
    tax = _taxonomy(cfg, base)
    if not args.data or not os.path.isdir(args.data):
        raise CLIError(f"dataset directory {args.data!r} not found")
    ds = load_dataset(args.data)
    if ds.mode != PER_PIXEL:
        raise CLIError("evaluation needs a per-pixel labelled dataset")
    net = build(cfg.model, tax)
    tensors = checkpoint.load(args.checkpoint)
    state = {k[6:]: v for k, v in tensors.items() if k.startswith("param.")} or tensors
    net.load_state_dict(state)
    cm = evaluate(net, ds, tax, cfg.label_map, cfg.eval_batch)
    m = epoch_metrics(cm, tax)
    report = cm.report(tax.leaf_names, tax.subclass_leaf_indices())
    report.update(sub_miou=m["sub_miou"], sub_macc=m["sub_macc"], images=len(ds))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "eval.json"), "w") as f:
            json.dump(report, f, indent=2, sort_keys=True)
    if not args.json:
        print(format_table(report))
    return report


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (YAML)")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", help="output directory")
    common.add_argument("--json", action="store_true", help="print a JSON summary on stdout")

    p = argparse.ArgumentParser(prog="hierseg", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    s.add_argument("--mode", choices=MODES, default=PER_PIXEL)
    s.add_argument("--n", type=int, default=16)
    s.add_argument("--size", type=int, nargs=2, default=(32, 32), metavar=("H", "W"))
    s.add_argument("--domain-shift", type=float, default=0.0)
    s.add_argument("--thing-probs", help="YAML mapping of subclass name to frequency")
    s.set_defaults(func=cmd_synth)

    g = sub.add_parser("generate-gt", parents=[common], help="pseudo ground truth from weak labels")
    g.add_argument("--data", required=True, help="dataset directory or annotations.jsonl")
    g.set_defaults(func=cmd_generate_gt)

    m = sub.add_parser("mine", parents=[common], help="select weak subsets from label metadata")
    m.add_argument("--meta", required=True, help="CSV with image_id,class,kind[,x_min,...]")
    m.add_argument("--weights", help="YAML class weights (bundled defaults otherwise)")
    m.add_argument("--k-bbox", type=int, default=100)
    m.add_argument("--k-image", type=int, default=100)
    m.set_defaults(func=cmd_mine)

    t = sub.add_parser("train", parents=[common], help="train a network")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True, help="per-pixel dataset directory")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None):
    logging.basicConfig(level=os.environ.get("HIERSEG_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if args.seed is None and args.command != "train":
        args.seed = 0
    try:
        result = args.func(args)
    except (CLIError, ConfigError, RunError, TaxonomyError, AnnotationError, WeightsError,
            checkpoint.FormatError, ValueError, KeyError, OSError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"hierseg {args.command}: error: {msg}", file=sys.stderr)
        if args.json:
            print(json.dumps({"error": str(msg)}))
        return 1
    if args.json:
        print(json.dumps(result, sort_keys=True, default=str))
    elif args.command != "eval":
        for k, v in result.items():
            if not isinstance(v, (dict, list)):
                print(f"{k}: {v}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry points: train, eval, translate, embed, synth.

Exit status: 0 success, 1 runtime failure, 2 configuration error.
"""
import argparse
import csv
import glob
import json
import logging
import re
import sys
import warnings
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .config import dump_config, load_config
from .conditioning import encode_onehot
from .data import denormalize, make_split, normalize_uint8, open_dataset
from .evaluation import embed_project, ensemble_ci, evaluate_dataset
from .segmenter import predict
from .synthetic import SyntheticRecipe, synth_generate
from .training import ConfigurationError, load_checkpoint, networks_from_checkpoint, run_experiment

log = logging.getLogger("codagan")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2
EVAL_COLUMNS = ("dataset", "checkpoint_epoch", "jaccard_mean", "jaccard_std", "ci_low", "ci_high")


def _out_dir(args, config=None) -> Path:
    out = Path(args.out) if args.out else Path(config.output_dir if config else ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(args):
    config = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        config.train.seed = args.seed
    return config


def cmd_train(args) -> int:
    config = _load(args)
    registry = config.registry()
    out = _out_dir(args, config)
    dump_config(config, out / "resolved_config.yaml")
    paths = run_experiment(config.train, registry, out, config_digest=config.digest)
    log.info("wrote %d checkpoints to %s", len(paths), out)
    return EXIT_OK


def _checkpoint_epoch(path) -> int:
    m = re.search(r"ckpt_(\d+)\.bin$", str(path))
    return int(m.group(1)) if m else -1


def _expand_checkpoints(pattern) -> list:
    paths = sorted(glob.glob(pattern), key=_checkpoint_epoch)
    if not paths:
        raise ConfigurationError(f"no checkpoints match {pattern!r}")
    return paths


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def cmd_eval(args) -> int:
    config = _load(args)
    registry = config.registry()
    out = _out_dir(args, config)
    paths = _expand_checkpoints(args.checkpoint)
    task = config.train.task
    states = [load_checkpoint(p) for p in paths]
    models = [networks_from_checkpoint(s) for s in states]
    rows = []
    for desc in registry:
        ds = open_dataset(desc)
        if not ds.has_mask_dir(task):
            warnings.warn(f"dataset {desc.name!r} has no masks for task {task!r}; skipped")
            continue
        split = make_split(ds, config.train.seed, config.train.train_ratio)
        means = []
        for path, state, (G, _, M) in zip(paths, states, models):
            score = evaluate_dataset((G, M, state), ds, split, task, config.evaluation.threshold)
            means.append(score.mean)
            rows.append((desc.name, str(state["epoch"]), _fmt(score.mean), _fmt(score.std), "", ""))
        if len(means) >= 2:
            s = ensemble_ci(means, config.evaluation.p)
            lo, hi = s.ci
            rows.append((desc.name, "ensemble", _fmt(s.mean), _fmt(s.std), _fmt(lo), _fmt(hi)))
        else:
            warnings.warn("a single checkpoint gives no confidence interval")
            rows.append((desc.name, "ensemble", _fmt(means[0]), "", "", ""))
        if args.export_masks:
            export_predictions(models[-1], states[-1], ds, split.test_indices, task,
                               out / "predictions", config.evaluation.threshold)
    with open(out / "eval_report.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(EVAL_COLUMNS)
        w.writerows(rows)
    return EXIT_OK


@torch.no_grad()
def export_predictions(model, state, dataset, indices, task, root, threshold=0.5):
    """Write binarized predictions as 0/255 PNGs under ``root/<dataset>/masks/<task>/``."""
    G, _, M = model
    target = Path(root) / dataset.name / "masks" / task
    target.mkdir(parents=True, exist_ok=True)
    code = encode_onehot(dataset.id, len(state["datasets"]))
    for i in indices:
        x = torch.from_numpy(dataset.image(i)[None, None])
        mask = predict(M, G.encode(x, code), threshold).binarized.numpy()[0, 0]
        Image.fromarray((mask * 255).astype(np.uint8)).save(target / f"{dataset.sample_ids[i]}.png")


@torch.no_grad()
def cmd_translate(args) -> int:
    state = load_checkpoint(args.checkpoint)
    n = len(state["datasets"])
    for name, k in (("source-id", args.source_id), ("target-id", args.target_id)):
        if not 0 <= k < n:
            raise ConfigurationError(f"--{name} {k} out of range for {n} datasets")
    G, _, _ = networks_from_checkpoint(state)
    out = _out_dir(args)
    files = sorted(Path(args.input).glob("*.png"))
    if not files:
        raise ConfigurationError(f"no PNG images in {args.input}")
    gen = torch.Generator().manual_seed(state["config"]["seed"])
    for f in files:
        x = torch.from_numpy(normalize_uint8(np.asarray(Image.open(f).convert("L")))[None, None])
        style = None
        if G.style_dim:
            from .translation import sample_style
            style = sample_style(G.style_dim, gen, n=1)
        y = G.translate(x, encode_onehot(args.source_id, n), encode_onehot(args.target_id, n), style)
        Image.fromarray(denormalize(y.numpy()[0, 0])).save(out / f.name)
    return EXIT_OK


def cmd_embed(args) -> int:
    config = _load(args)
    registry = config.registry()
    if len(registry) < 2:
        raise ConfigurationError("embedding needs at least two datasets")
    out = _out_dir(args, config)
    paths = _expand_checkpoints(args.checkpoint)
    ev = config.evaluation
    proj = embed_project(paths[-1], registry, args.samples or ev.embed_samples, pca_dim=ev.pca_dim,
                         perplexity=ev.perplexity, seed=config.train.seed)
    with open(out / "embedding.tsv", "w", newline="") as f:
        w = csv.writer(f, delimiter="\t")
        w.writerow(("dataset", "sample_id", "x", "y"))
        for k, sid, (x, y) in zip(proj.dataset_ids, proj.sample_ids, proj.coords):
            w.writerow((proj.dataset_names[k], sid, repr(float(x)), repr(float(y))))
    fits = {proj.dataset_names[k]: {"mean": m.tolist(), "covariance": c.tolist()}
            for k, (m, c) in proj.gaussians.items()}
    with open(out / "embedding_gmm.json", "w") as f:
        json.dump({"config_hash": config.digest, "flattened_dim": proj.flat_dim, "gaussians": fits}, f, indent=2)
    return EXIT_OK


def cmd_synth(args) -> int:
    config = _load(args)
    out = _out_dir(args, config)
    count = 0
    for entry in config.datasets:
        if entry.synthetic is None:
            continue
        recipe = SyntheticRecipe.from_dict({"name": entry.name, **entry.synthetic})
        synth_generate(recipe, out)
        count += 1
    if count == 0:
        raise ConfigurationError("config holds no synthetic datasets")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="codagan", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train G, D and M; write checkpoints and train_log.csv")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="Jaccard per dataset and checkpoint-ensemble CI")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True, help="checkpoint path or glob")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--export-masks", action="store_true", help="write predicted test masks as PNG")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("translate", help="translate a directory of images between datasets")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--source-id", type=int, required=True)
    p.add_argument("--target-id", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("embed", help="2-D embedding of the latent content per dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--samples", type=int, help="samples per dataset")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("synth", help="write the config's synthetic datasets to disk")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigurationError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

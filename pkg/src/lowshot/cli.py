"""Command line entry point: ``lowshot <subcommand> --config run.yaml [--set key=value ...]``."""

import argparse
import json
import logging
import os
import sys

import numpy as np

from .checkpoint import file_digest
from .decoder import Descriptor
from .errors import ConfigError
from .harness.colorize import run_colorization
from .harness.config import experiment_spec, load_config
from .harness.data import load_dataset, load_image, save_image
from .harness.plotting import PlotInputError, emit_plot
from .harness.sweep import replay_cell, run_sweep
from .invert import InversionConfig, invert, solve_untrained
from .operators import make_operator, measure
from .pretrain import PretrainConfig, fit_latent_gaussian, pretrain, pretrained_from_checkpoint, save_pretrained

log = logging.getLogger("lowshot")


def _config(args):
    return load_config(args.config, args.overrides)


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def cmd_pretrain(args):
    cfg = _config(args)
    spec = experiment_spec(cfg)
    dataset = load_dataset(spec.data_directory, spec.descriptor.resolution, spec.n_test,
                           spec.test_directory)
    shot_counts = [args.shots] if args.shots else spec.shots
    loss_kinds = [args.loss] if args.loss else spec.losses
    os.makedirs(spec.checkpoint_dir, exist_ok=True)
    p = cfg["pretrain"]
    for s in shot_counts:
        for loss in loss_kinds:
            path = args.out if args.out else spec.checkpoint_path(s, loss)
            if os.path.exists(path) and not args.force:
                log.info("%s exists, skipping (use --force to retrain)", path)
                continue
            pcfg = PretrainConfig(loss=loss, iterations=int(p["iterations"]), lr=float(p["lr"]),
                                  seed=int(cfg["seed"]), alpha=p["alpha"], estimator=p["estimator"])
            log.info("pre-training S=%d loss=%s for %d iterations", s, loss, pcfg.iterations)
            result = pretrain(dataset.shots(s), pcfg, spec.descriptor)
            save_pretrained(path, result, {
                "shots": s,
                "shot_digest": dataset.shot_digest(s),
                "shot_files": [r.path for r in dataset.manifest.pool[:s]],
            })
            _write_json(path + ".json", {
                "config": cfg, "shots": s, "loss": loss, "checkpoint_sha256": file_digest(path),
                "final_loss": float(result.loss_history[-1]),
            })
            log.info("wrote %s (final loss %.6g)", path, result.loss_history[-1])
    return 0


def cmd_invert(args):
    cfg = _config(args)
    descriptor = Descriptor.from_dict(cfg["model"])
    truth = load_image(args.image, descriptor.resolution)
    op = make_operator(args.operator, descriptor.image_shape, args.ratio, args.operator_seed)
    y = measure(op, truth, args.noise_std, args.noise_seed)
    if args.untrained:
        u = cfg["untrained"]
        result = solve_untrained(y, op, descriptor, seed=cfg["seed"], iterations=u["iterations"],
                                 lr=u["lr"], momentum=u["momentum"], truth=truth)
    else:
        if not args.checkpoint:
            raise ConfigError("--checkpoint is required unless --untrained is given")
        theta, latents, _ = pretrained_from_checkpoint(args.checkpoint, descriptor)
        inv = InversionConfig(**cfg["inversion"], seed=cfg["seed"])
        result = invert(y, op, theta, fit_latent_gaussian(latents), inv, truth=truth)
    os.makedirs(args.out, exist_ok=True)
    save_image(result.reconstruction, os.path.join(args.out, "reconstruction.png"))
    np.save(os.path.join(args.out, "reconstruction.npy"), result.reconstruction)
    _write_json(os.path.join(args.out, "manifest.json"), {
        "config": cfg, "image": os.path.abspath(args.image), "operator": op.describe(),
        "noise_std": args.noise_std, "noise_seed": args.noise_seed,
        "checkpoint": args.checkpoint, "metrics": result.metrics,
    })
    print(json.dumps(result.metrics, sort_keys=True))
    return 0


def cmd_sweep(args):
    cfg = _config(args)
    cfg["experiment"]["task"] = "cs"
    spec = experiment_spec(cfg)
    if args.replay:
        row = replay_cell(spec.output_dir, args.replay)
        print(",".join(row.fields()))
        return 0
    outcome = run_sweep(spec, args.max_cells)
    if outcome.complete and not args.no_plot:
        for loss in spec.losses:
            emit_plot(os.path.join(spec.output_dir, "results.csv"),
                      os.path.join(spec.output_dir, f"psnr_{loss}.svg"), loss=loss,
                      title=f"compressed sensing, {loss} pre-training", png=True)
    print(f"{len(outcome.rows)}/{len(outcome.cells)} cells complete, {len(outcome.failed)} failed")
    return 0 if outcome.complete else 1


def cmd_colorize(args):
    cfg = _config(args)
    cfg["experiment"]["task"] = "colorization"
    spec = experiment_spec(cfg)
    outcome, metrics = run_colorization(spec, args.max_cells)
    print(f"{len(outcome.rows)}/{len(outcome.cells)} cells complete, {len(outcome.failed)} failed")
    if metrics:
        by_method = {}
        for m in metrics:
            by_method.setdefault((m["method"], m["S"], m["loss"]), []).append(m["chroma_error"])
        for (method, s, loss), errs in by_method.items():
            print(f"{method} S={s} {loss}: mean chroma error {np.mean(errs):.4f}")
    return 0 if outcome.complete else 1


def cmd_plot(args):
    emit_plot(args.csv, args.out, loss=args.loss, title=args.title, png=args.png)
    return 0


def cmd_gradcheck(args):
    from .gradcheck import check_pipeline

    descriptor = Descriptor(latent_dim=args.latent_dim, resolution=args.resolution, width=args.width)
    results = check_pipeline(descriptor, args.points, args.seed)
    worst = {}
    for r in results:
        worst[r.objective] = max(worst.get(r.objective, 0.0), r.rel_error)
    ok = True
    for name, err in worst.items():
        status = "PASS" if err <= args.tol else "FAIL"
        ok &= err <= args.tol
        print(f"{status} {name}: max relative error {err:.3e} over {args.points} points")
    return 0 if ok else 1


def build_parser():
    parser = argparse.ArgumentParser(prog="lowshot", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", "-c", help="YAML config file")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override a config entry, e.g. pretrain.iterations=500")
        return p

    p = with_config(sub.add_parser("pretrain", help="fit decoder + latents to the low shots"))
    p.add_argument("--shots", type=int, help="train only this shot count")
    p.add_argument("--loss", choices=["l2", "mmd"], help="train only this loss")
    p.add_argument("--out", help="checkpoint path (default: checkpoint_dir/<loss>_S<shots>.ckpt)")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_pretrain)

    p = with_config(sub.add_parser("invert", help="reconstruct a single image"))
    p.add_argument("--image", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--untrained", action="store_true", help="untrained-network baseline")
    p.add_argument("--operator", choices=["gaussian", "luma", "identity"], default="gaussian")
    p.add_argument("--ratio", type=float, default=0.1)
    p.add_argument("--operator-seed", type=int, default=0)
    p.add_argument("--noise-std", type=float, default=0.0)
    p.add_argument("--noise-seed", type=int, default=0)
    p.add_argument("--out", default="invert_out")
    p.set_defaults(func=cmd_invert)

    p = with_config(sub.add_parser("sweep-cs", help="compressed sensing sweep"))
    p.add_argument("--max-cells", type=int, help="stop after this many new cells")
    p.add_argument("--replay", metavar="KEY", help="re-run one recorded cell and print its row")
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = with_config(sub.add_parser("colorize", help="colorization experiment"))
    p.add_argument("--max-cells", type=int)
    p.set_defaults(func=cmd_colorize)

    p = sub.add_parser("plot", help="PSNR vs ratio figure from a results CSV")
    p.add_argument("csv")
    p.add_argument("--out", required=True, help="output .svg")
    p.add_argument("--loss", choices=["l2", "mmd"])
    p.add_argument("--title")
    p.add_argument("--png", action="store_true", help="also write a PNG next to the SVG")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    p.add_argument("--points", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--latent-dim", type=int, default=16)
    p.add_argument("--resolution", type=int, default=32)
    p.add_argument("--width", type=float, default=0.25)
    p.add_argument("--tol", type=float, default=1e-3)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, PlotInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Command line interface: ``saldefense <command> ...``."""

from __future__ import annotations

import argparse
import sys

from .attacks import AttackConfig, TinyClassifier, attack_image, train_tiny
from .defenses import SAD_QUALITIES, SHIELD_QUALITIES, DefenseConfig, clean
from .harness import ExperimentConfig, fmt, min_max_normalize, read_table, run_experiment, write_table
from .image import load_fixations, load_image, load_map, save_image, save_map
from .metrics import COLUMNS, evaluate
from .saliency import binarize_map, spectral_residual
from .synthetic import make_shapes


def _qualities(text: str) -> tuple[int, ...]:
    try:
        values = tuple(int(v) for v in text.replace(" ", "").split(",") if v)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("quality list is empty")
    return values


def cmd_clean(args) -> int:
    img = load_image(args.input)
    sal = None
    if args.method == "sad":
        if args.saliency_map:
            sal = load_map(args.saliency_map)
        else:
            sal = spectral_residual(img)
    qualities = args.qualities
    cfg = DefenseConfig(
        method=args.method,
        bits=args.bits,
        quality=args.quality,
        shield_qualities=qualities or SHIELD_QUALITIES,
        sad_qualities=qualities or SAD_QUALITIES,
        rng_seed=args.seed,
    )
    result = clean(img, cfg, sal)
    save_image(result.image, args.output)
    return 0


def cmd_attack(args) -> int:
    model = TinyClassifier.load(args.weights)
    cfg = AttackConfig(
        method=args.method, epsilon=args.epsilon, overshoot=args.overshoot, max_iters=args.max_iters
    )
    img = load_image(args.input)
    save_image(attack_image(model, img, cfg, true_class=args.label), args.output)
    return 0


def cmd_saliency(args) -> int:
    sal = spectral_residual(load_image(args.input))
    if args.binarize is not None:
        sal = binarize_map(sal, args.binarize)
    save_map(sal, args.output)
    return 0


def cmd_evaluate(args) -> int:
    pred = load_map(args.pred)
    gt = load_map(args.gt)
    fix = load_fixations(args.fixations) if args.fixations else None
    report = evaluate(pred, gt, fix, args.emd_downsample)
    if args.header:
        print(",".join(COLUMNS))
    print(",".join(fmt(v) for v in report.as_row().values()))
    return 0


def cmd_train(args) -> int:
    data = make_shapes(args.samples, seed=args.seed, size=args.size)
    init = TinyClassifier.initialize(3, args.size, seed=args.seed)
    model, history = train_tiny(init, data.images, data.labels, epochs=args.epochs, seed=args.seed)
    model.save(args.out)
    print(f"train accuracy {history.train_accuracy:.4f}, final loss {history.epoch_loss[-1]:.4f}")
    return 0


def cmd_run(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    result = run_experiment(cfg)
    for row in result.aggregate:
        print(row["condition"] + "," + ",".join(fmt(row[c]) for c in COLUMNS))
    return 0


def cmd_normalize(args) -> int:
    write_table(min_max_normalize(read_table(args.input)), args.output)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="saldefense", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("clean", help="run one image through a defense")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--method", required=True, choices=["bitdepth", "jpeg", "shield", "sad"])
    p.add_argument("--bits", type=int, default=3)
    p.add_argument("--quality", type=int, default=80)
    p.add_argument("--qualities", type=_qualities, help="comma-separated list for shield/sad")
    p.add_argument("--seed", type=int, default=0, help="shield randomness seed")
    p.add_argument("--saliency-map", help="precomputed saliency map for sad")
    p.add_argument("--saliency", choices=["spectral"], help="estimate the sad map in-process")
    p.set_defaults(func=cmd_clean)

    p = sub.add_parser("attack", help="attack one image with a trained tiny classifier")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--weights", required=True)
    p.add_argument("--method", required=True, choices=["fgsm", "deepfool"])
    p.add_argument("--epsilon", type=float, default=8 / 255)
    p.add_argument("--overshoot", type=float, default=0.02)
    p.add_argument("--max-iters", type=int, default=50)
    p.add_argument("--label", type=int, help="true class for fgsm (default: model prediction)")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("saliency", help="write a spectral-residual saliency map")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--binarize", type=int, metavar="THRESHOLD")
    p.set_defaults(func=cmd_saliency)

    p = sub.add_parser("evaluate", help="score a predicted map: EMD,CC,NSS,KLD,SIM")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--fixations")
    p.add_argument("--emd-downsample", type=int, default=32)
    p.add_argument("--header", action="store_true", help="print the column names first")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("train", help="train the tiny classifier on synthetic shapes")
    p.add_argument("--out", required=True)
    p.add_argument("--samples", type=int, default=600)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=32)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("run", help="run a full experiment from a YAML config")
    p.add_argument("config")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("normalize", help="min-max normalize an aggregate table")
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(func=cmd_normalize)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "clean":
        if args.method == "sad" and not (args.saliency_map or args.saliency):
            parser.error("--method sad needs --saliency-map or --saliency spectral")
        if args.method != "sad" and (args.saliency_map or args.saliency):
            parser.error("saliency options only apply to --method sad")
        if args.saliency_map and args.saliency:
            parser.error("--saliency-map and --saliency are mutually exclusive")
    try:
        return args.func(args)
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"saldefense {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""CLI for extraction jobs: extract, attack, croproi."""

from __future__ import annotations

import argparse
import json
import logging
import sys


def _common(p):
    p.add_argument("--model", required=True,
                   help="resnet18|resnet50|vgg19|densenet121|vit_b_16|"
                        "fixture|tiny-random")
    p.add_argument("--dataset", required=True,
                   help="fixture:<dir> or imagefolder:<dir>")
    p.add_argument("--per-class", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--weights", default=None,
                   help="torchvision weights tag (needs a local cache)")


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="bundle-extract",
        description="Extract hidden-layer activation bundles from image "
                    "classifiers.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("extract", help="clean extraction into a bundle")
    _common(p)
    p.add_argument("--out-bundle", required=True)
    p.add_argument("--split", default="train",
                   choices=["train", "test", "ood"])
    p.add_argument("--no-certify", action="store_true",
                   help="detector-only boxes (OOD mode)")

    p = sub.add_parser("attack", help="craft an adversarial bundle")
    _common(p)
    p.add_argument("--out-bundle", required=True)
    p.add_argument("--eps", type=float, default=0.03)
    p.add_argument("--backend", default="pgd", choices=["pgd", "autoattack"])

    p = sub.add_parser("croproi", help="cropped-ROI accuracy study")
    _common(p)
    p.add_argument("--out-csv", required=True)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    from . import datasets
    from .extract import ExtractionJob, build_adapter, extract

    try:
        if args.command == "extract":
            job = ExtractionJob(
                model=args.model, dataset=args.dataset,
                out_bundle=args.out_bundle, split=args.split,
                per_class=args.per_class, seed=args.seed,
                weights=args.weights, certify=not args.no_certify)
            stats = extract(job)
            print(json.dumps(stats.as_dict(), indent=1, sort_keys=True))
        elif args.command == "attack":
            from .attack import AutoAttackBackend, PgdAttack, craft_adversarial
            job = ExtractionJob(
                model=args.model, dataset=args.dataset,
                out_bundle=args.out_bundle, per_class=args.per_class,
                seed=args.seed, weights=args.weights)
            backend = (PgdAttack(args.eps) if args.backend == "pgd"
                       else AutoAttackBackend(args.eps))
            result = craft_adversarial(job, backend)
            print(json.dumps(result, indent=1, sort_keys=True))
        else:
            from .croproi import crop_roi_eval, write_csv
            job = ExtractionJob(model=args.model, dataset=args.dataset,
                                out_bundle="", per_class=args.per_class,
                                seed=args.seed, weights=args.weights)
            dataset = datasets.resolve(args.dataset)
            result = crop_roi_eval(build_adapter(job), dataset)
            write_csv(result, args.out_csv)
            print(json.dumps({"n_images": result.n_images,
                              "normalized": result.normalized},
                             indent=1, sort_keys=True))
    except (ValueError, FileNotFoundError, ImportError) as e:
        print(f"bundle-extract {args.command}: error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

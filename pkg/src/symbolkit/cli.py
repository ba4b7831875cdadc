"""Batch front-end: one subcommand per pipeline stage.

Exit codes: 0 on success, 1 when a stage fails, 2 on usage errors.
Heavy imports are deferred until after argument parsing so that thread
caps from --threads take effect before the numeric libraries load.
"""

from __future__ import annotations

import argparse
import json
import os
import sys


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="symbolkit",
        description="Extract discrete internal symbols from activation "
                    "bundles and score predictions, confidence, OOD and "
                    "adversarial inputs with them.")
    parser.add_argument("--config", metavar="FILE",
                        help="JSON config file (see README)")
    parser.add_argument("--bundle", metavar="DIR", help="activation bundle")
    parser.add_argument("--out", metavar="DIR", help="artifact directory")
    parser.add_argument("--seed", type=int, help="master random seed")
    parser.add_argument("--layers", metavar="IDS",
                        help="comma-separated layer ids (default: all)")
    parser.add_argument("--threads", type=int,
                        help="cap numeric worker threads (default 1)")
    parser.add_argument("--force", action="store_true",
                        help="recompute even if the stage output exists")

    sub = parser.add_subparsers(dest="stage", metavar="SUBCOMMAND")
    sub.required = True

    def cluster_flags(p):
        # stages downstream of `cluster` accept these too: outputs are
        # addressed by the config hash chain, so a sweep run must present
        # the same clustering config at every later stage
        p.add_argument("--kmax", type=int, dest="k_max")
        p.add_argument("--fixed-k", type=int, dest="fixed_k",
                       help="plain k-means with this k instead of x-means")
        return p

    sub.add_parser("synth", help="generate a planted synthetic bundle")
    sub.add_parser("pool", help="bundle -> per-layer activity vectors")
    p = sub.add_parser("embed", help="fit per-layer 3-D embeddings")
    p.add_argument("--n-neighbors", type=int, dest="n_neighbors")
    p.add_argument("--min-dist", type=float, dest="min_dist")
    cluster_flags(sub.add_parser("cluster",
                                 help="discover symbols (xmeans or fixed-k)"))
    cluster_flags(sub.add_parser("build-cm",
                                 help="build symbol-class correlation maps"))
    p = cluster_flags(sub.add_parser("predict",
                                     help="symbol-based label prediction"))
    p.add_argument("--split", choices=["train", "test", "ood", "adversarial"])
    p = cluster_flags(sub.add_parser("ess",
                                     help="expected symbol scores and AUROC"))
    p.add_argument("--class-source", dest="class_source",
                   choices=["true_label", "layer4_prediction", "model_decision"])
    cluster_flags(sub.add_parser("ood", help="in-distribution vs OOD separation"))
    cluster_flags(sub.add_parser("adv",
                                 help="adversarial detection and robustness"))
    p = cluster_flags(sub.add_parser("templearn",
                                     help="temporary learning on OOD symbols"))
    p.add_argument("--resamples", type=int)
    p = sub.add_parser("report", help="render tables and figures")
    p.add_argument("--format", choices=["csv", "svg", "both"])
    return parser


def _cli_overrides(args) -> dict:
    top = {k: getattr(args, k) for k in ("bundle", "out", "seed", "threads")
           if getattr(args, k, None) is not None}
    if args.layers is not None:
        top["layers"] = [int(v) for v in args.layers.split(",") if v]
    section_keys = {
        "embed": ("n_neighbors", "min_dist"),
        "cluster": ("k_max", "fixed_k"),
        "predict": ("split",),
        "ess": ("class_source",),
        "templearn": ("resamples",),
        "report": ("format",),
    }
    for section, keys in section_keys.items():
        vals = {k: getattr(args, k) for k in keys
                if getattr(args, k, None) is not None}
        if vals:
            top.setdefault(section, {}).update(vals)
    if getattr(args, "fixed_k", None):
        top.setdefault("cluster", {})["mode"] = "kmeans"
    return top


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)

    threads = args.threads if args.threads is not None else 1
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(threads))

    from .config import ConfigError, PipelineConfig
    from .pipeline import StageError, run_stage
    from .tensorio import BundleError

    try:
        cfg = PipelineConfig.load(args.config, _cli_overrides(args))
        cfg.validate_paths(need_bundle=args.stage not in ("synth", "report"))
        out_dir = run_stage(cfg, args.stage, force=args.force)
    except (ConfigError, BundleError, StageError, ValueError) as e:
        print(f"symbolkit {args.stage}: error: {e}", file=sys.stderr)
        return 1
    result_path = os.path.join(out_dir, "result.json")
    status = {"stage": args.stage, "out": out_dir}
    if os.path.exists(result_path):
        with open(result_path, encoding="utf-8") as f:
            status["result"] = json.load(f)
    print(json.dumps(status, indent=1, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())

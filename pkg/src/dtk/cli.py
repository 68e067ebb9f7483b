"""``dtk`` command line: one subcommand per pipeline stage plus ``run``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import ConfigError, PipelineConfig, load_pipeline_config
from .data import DataError
from .trendlab import METRICS

logger = logging.getLogger("dtk")

EXIT_OK, EXIT_INTERNAL, EXIT_USAGE = 0, 1, 2
STAGE_SEEDED = ("spyem", "abtest")
INPUT_ERRORS = (FileNotFoundError, DataError, ConfigError, ValueError, KeyError)


def _global_flags() -> argparse.ArgumentParser:
    # SUPPRESS lets the flags appear before or after the subcommand
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", default=argparse.SUPPRESS, help="pipeline config JSON")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed (spyem, abtest: the stage seed)")
    p.add_argument("--out", default=argparse.SUPPRESS, help="run directory (default: run)")
    p.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS, help="only log warnings")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags()
    parser = argparse.ArgumentParser(prog="dtk", description="Downward-trend and silent-sufferer toolkit", parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        return sub.add_parser(name, help=help_, parents=[common])

    add("generate", "write a synthetic population into the run directory")
    p = add("panel", "build the monthly panel and buyer segments")
    p.add_argument("--transactions", help="transactions.csv (default: run directory)")

    p = add("label", "norm-box downward labels per metric")
    p.add_argument("--metric", choices=METRICS, help="one metric (default: all three)")
    p.add_argument("--alpha-fb", type=float, help="alpha for frequent buyers")
    p.add_argument("--alpha-ib", type=float, help="alpha for infrequent buyers")
    p.add_argument("--panel", help="panel.csv (default: run directory)")

    add("featurize", "compute the feature matrix")

    p = add("train", "select top features and train the downtrend models")
    p.add_argument("--metric", choices=METRICS, help="one metric (default: all three)")
    p.add_argument("--trees", type=int, help="number of trees")
    p.add_argument("--depth", type=int, help="maximum tree depth")

    p = add("score", "score every customer and build decile buckets")
    p.add_argument("--models", help="comma-separated model files in gmv,bi,pd order")

    p = add("causal", "golden set and per-segment causal asymmetry test")
    p.add_argument("--scores", help="scores.csv (default: run directory)")
    p.add_argument("--bce", help="bce.csv (default: run directory)")
    p.add_argument("--cl", type=float, help="significance level of the independence test")

    p = add("spyem", "recover silent sufferers with the spy EM loop")
    p.add_argument("--golden", help="golden ids or golden feature rows")
    p.add_argument("--mixed", help="mixed ids or mixed feature rows")
    p.add_argument("--theta", type=float, help="label change rate threshold")
    p.add_argument("--max-iter", type=int, help="iteration cap")
    p.add_argument("--spy-fraction", type=float, help="share of golden rows used as spies")

    p = add("abtest", "stratified assignment and campaign readout")
    p.add_argument("--population", help="labeled_population.csv (default: run directory)")
    p.add_argument("--post-gmv", help="post-period GMV per customer (default: simulated)")
    p.add_argument("--test-fraction", type=float, help="share of each stratum sent to test")

    add("report", "render report.md from the run directory")
    add("run", "run every stage in order")
    return parser


def resolve_config(args, out: Path) -> PipelineConfig:
    """Explicit --config, else the run directory's config.json, else defaults."""
    path = getattr(args, "config", None)
    if path is None and args.command not in ("generate", "run") and (out / "config.json").exists():
        path = out / "config.json"
    cfg = load_pipeline_config(path)
    if getattr(args, "seed", None) is not None and args.command not in STAGE_SEEDED:
        cfg = PipelineConfig.from_dict(cfg.to_dict() | {"seed": args.seed})
    return cfg


def dispatch(args, cfg: PipelineConfig, out: Path):
    cmd = args.command
    if cmd == "run":
        pipeline.run_pipeline(cfg, out)
        return
    out.mkdir(parents=True, exist_ok=True)
    if cmd == "generate":
        pipeline.write_json(cfg.to_dict() | {"out": "."}, out / "config.json")
        pipeline.stage_generate(cfg, out)
    elif cmd == "panel":
        pipeline.stage_panel(cfg, out, transactions_path=args.transactions)
    elif cmd == "label":
        metrics_ = (args.metric,) if args.metric else METRICS
        alphas = None
        if args.alpha_fb is not None or args.alpha_ib is not None:
            alphas = {}
            for m in metrics_:
                fb, ib = cfg.alphas(m)
                alphas[m] = (args.alpha_fb if args.alpha_fb is not None else fb, args.alpha_ib if args.alpha_ib is not None else ib)
        pipeline.stage_label(cfg, out, metrics_, panel_path=args.panel, alphas=alphas)
    elif cmd == "featurize":
        pipeline.stage_featurize(cfg, out)
    elif cmd == "train":
        metrics_ = (args.metric,) if args.metric else METRICS
        overrides = {k: v for k, v in (("n_trees", args.trees), ("max_depth", args.depth)) if v is not None}
        if overrides:
            doc = cfg.to_dict()
            for m in metrics_:
                doc["train"][m] = {**doc["train"].get(m, {}), **overrides}
            cfg = PipelineConfig.from_dict(doc)
        pipeline.stage_train(cfg, out, metrics_)
    elif cmd == "score":
        paths = None
        if args.models:
            files = [s.strip() for s in args.models.split(",")]
            if len(files) != len(METRICS):
                raise ValueError(f"--models needs {len(METRICS)} files (gmv,bi,pd), got {len(files)}")
            paths = dict(zip(METRICS, files))
        pipeline.stage_score(cfg, out, paths)
    elif cmd == "causal":
        pipeline.stage_causal(cfg, out, scores_path=args.scores, bce_path=args.bce, cl=args.cl)
    elif cmd == "spyem":
        overrides = {
            k: v
            for k, v in (
                ("theta", args.theta),
                ("max_iterations", args.max_iter),
                ("spy_fraction", args.spy_fraction),
                ("seed", getattr(args, "seed", None)),
            )
            if v is not None
        }
        pipeline.stage_spyem(cfg, out, golden_path=args.golden, mixed_path=args.mixed, overrides=overrides)
    elif cmd == "abtest":
        pipeline.stage_abtest(
            cfg, out, population_path=args.population, post_gmv_path=args.post_gmv, test_fraction=args.test_fraction, seed=getattr(args, "seed", None)
        )
    elif cmd == "report":
        pipeline.stage_report(cfg, out)


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, pipeline.StageError):
        exc = exc.cause
    return EXIT_USAGE if isinstance(exc, INPUT_ERRORS) else EXIT_INTERNAL


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if getattr(args, "quiet", False) else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    out = Path(getattr(args, "out", "run"))
    try:
        cfg = resolve_config(args, out)
        dispatch(args, cfg, out)
    except Exception as exc:  # noqa: BLE001 - mapped to an exit code
        code = _exit_code(exc)
        print(f"dtk {args.command}: error: {exc}", file=sys.stderr)
        if code == EXIT_INTERNAL:
            logger.debug("internal error", exc_info=True)
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

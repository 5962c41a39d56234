"""Command-line front end. Every command is a thin wrapper over :mod:`ccmprune.pipeline`.

Exit codes: 0 success, 2 configuration error, 3 artifact IO or corruption,
4 domain validation (for example alpha outside (0, 1)), 5 training diverged.
"""

import argparse
import logging
import sys

from . import pipeline
from .exceptions import ArtifactError, ConfigError, DomainError, TrainingDivergedError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ARTIFACT = 3
EXIT_DOMAIN = 4
EXIT_DIVERGED = 5


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline JSON config (defaults are used when omitted)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--workdir", help="override the config work directory")
    common.add_argument("--alpha", type=float, action="append",
                        help="retain ratio in (0, 1); repeat for a sweep (overrides config alphas)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="ccmprune", description="CCM-loss training and PCRR channel pruning")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", parents=[common], help="train from scratch")
    t.add_argument("--baseline", action="store_true", help="train with the CCM term off (writes <workdir>/baseline)")

    s = sub.add_parser("score", parents=[common], help="per-channel importance of a checkpoint")
    s.add_argument("--checkpoint", help="checkpoint directory (default <workdir>/train)")
    s.add_argument("--out", help="output directory (default <workdir>/score)")

    sel = sub.add_parser("select", parents=[common], help="build a pruning plan from importance files")
    sel.add_argument("--scores", nargs="+", help="importance CSVs (default <workdir>/score/layer*.csv)")
    sel.add_argument("--checkpoint", help="checkpoint the plan applies to (default <workdir>/train)")
    sel.add_argument("--out", help="plan JSON path (default <workdir>/alpha_<a>/plan.json)")

    pr = sub.add_parser("prune", parents=[common], help="apply a plan, finetune, write report")
    pr.add_argument("--plan", help="plan JSON (default <workdir>/alpha_<a>/plan.json)")
    pr.add_argument("--checkpoint", help="checkpoint to prune (default <workdir>/train)")
    pr.add_argument("--out", help="output directory (default: the plan's directory)")

    sub.add_parser("report", parents=[common], help="emit figure data for a finished work directory")

    pl = sub.add_parser("pipeline", parents=[common], help="run every stage for each alpha")
    pl.add_argument("--no-resume", action="store_true", help="redo stages even if their files exist")
    return p


def _single_alpha(cfg, args):
    if args.alpha and len(args.alpha) > 1:
        raise ConfigError(f"{args.command} takes a single --alpha")
    return cfg.alphas[0]


def run(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = pipeline.load_config(args.config).with_overrides(seed=args.seed, alphas=args.alpha, workdir=args.workdir)
    if args.command == "train":
        pipeline.stage_train(cfg, baseline=args.baseline)
    elif args.command == "score":
        pipeline.stage_score(cfg, checkpoint=args.checkpoint, out=args.out)
    elif args.command == "select":
        pipeline.stage_select(cfg, _single_alpha(cfg, args), score_files=args.scores,
                              checkpoint=args.checkpoint, out=args.out)
    elif args.command == "prune":
        alpha = None if args.plan else _single_alpha(cfg, args)
        pipeline.stage_prune(cfg, alpha=alpha, plan_path=args.plan, checkpoint=args.checkpoint, out=args.out)
    elif args.command == "report":
        pipeline.stage_report(cfg)
    else:
        pipeline.run_pipeline(cfg, resume=not args.no_resume)
    return EXIT_OK


def main(argv=None):
    try:
        return run(argv)
    except ConfigError as exc:
        code, msg = EXIT_CONFIG, f"config error: {exc}"
    except DomainError as exc:
        code, msg = EXIT_DOMAIN, f"invalid input: {exc}"
    except ArtifactError as exc:
        code, msg = EXIT_ARTIFACT, f"artifact error: {exc}"
    except OSError as exc:
        code, msg = EXIT_ARTIFACT, f"I/O error: {exc}"
    except TrainingDivergedError as exc:
        code, msg = EXIT_DIVERGED, f"training diverged: {exc}"
    print(f"ccmprune: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())

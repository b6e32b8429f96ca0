"""``sdfn`` command line: one stage per invocation, driven by an INI config."""
import argparse
import sys

from . import pipeline
from ._accel import apply_thread_cap
from .metrics import UndefinedAUCError
from .networks.persist import WeightFileError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_ASSERT = 4

COMMANDS = ("gen-data", "train-seg", "run-lrg", "train-extractor", "train-fusion", "evaluate",
            "cam", "verify")


def _csv_list(text):
    return [t.strip() for t in text.split(",") if t.strip()]


def build_parser():
    p = argparse.ArgumentParser(prog="sdfn", description=__doc__)
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="pipeline INI file (not needed for verify)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--view", choices=pipeline.VIEWS, help="extractor view for train-extractor")
    p.add_argument("--ids", type=_csv_list, help="comma-separated image ids for cam")
    p.add_argument("--classes", type=_csv_list, help="comma-separated class names for cam")
    p.add_argument("--quick", action="store_true",
                   help="verify: skip the long training criteria")
    p.add_argument("-q", "--quiet", action="store_true", help="no per-epoch progress")
    return p


def _logger(quiet, tag):
    if quiet:
        return None

    def log(rec):
        parts = " ".join(f"{k}={v:.5g}" if isinstance(v, float) else f"{k}={v}" for k, v in rec.items())
        print(f"[{tag}] {parts}", file=sys.stderr, flush=True)

    return log


def run(argv=None):
    args = build_parser().parse_args(argv)
    apply_thread_cap()
    cmd = args.command
    if cmd == "verify":
        from .verify import run_suite
        ok = run_suite(quick=args.quick, stream=sys.stdout)
        return EXIT_OK if ok else EXIT_ASSERT
    try:
        if args.config is None:
            raise pipeline.PipelineConfigError(f"{cmd} needs --config")
        cfg = pipeline.load_config(args.config, args.seed)
        if cmd == "gen-data":
            rows = pipeline.gen_data(cfg)
            print(f"wrote {len(rows)} images to {cfg.corpus_dir}")
        elif cmd == "train-seg":
            tm = pipeline.train_seg(cfg, _logger(args.quiet, "train-seg"))
            print(f"segmenter: best epoch {tm.best_epoch}, val loss {tm.best_metric:.6f}")
        elif cmd == "run-lrg":
            out = pipeline.run_lrg(cfg)
            fallback = sum(1 for _, _, s in out if s == "fallback")
            print(f"cropped {len(out)} images ({fallback} fallback)")
        elif cmd == "train-extractor":
            if args.view is None:
                raise pipeline.PipelineConfigError("train-extractor needs --view global|local")
            tm = pipeline.train_extractor(cfg, args.view, _logger(args.quiet, args.view))
            print(f"{args.view} extractor: best epoch {tm.best_epoch}, "
                  f"val mean AUC {tm.best_metric:.4f}")
        elif cmd == "train-fusion":
            model = pipeline.train_fusion_stage(cfg, _logger(args.quiet, "fusion"))
            print(f"fusion head: best epoch {model.best_epoch}; extractors unchanged")
        elif cmd == "evaluate":
            rep = pipeline.evaluate(cfg)
            for m in rep.models:
                print(f"{m:12s} mean AUC {rep.mean[m]:.4f}")
        elif cmd == "cam":
            written = pipeline.cam_stage(cfg, args.ids, args.classes)
            print(f"wrote {len(written)} heatmaps")
    except pipeline.MissingPrerequisite as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_MISSING
    except (pipeline.PipelineConfigError, WeightFileError, UndefinedAUCError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (AssertionError, FloatingPointError) as err:
        print(f"assertion failed: {err}", file=sys.stderr)
        return EXIT_ASSERT
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()

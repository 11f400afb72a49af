"""Command-line entry point: ``listenhead <subcommand> ...``.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numerical
failure. Diagnostics go to stderr as one JSON object per line; results go
to stdout or to the requested files.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import sys
from pathlib import Path

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint
from .coeffs import CoeffFormatError, load_coeffs, write_coeffs
from .config import ConfigError, RunConfig, config_to_dict, env_seed, load_config, parse_override
from .data import ClipAlignmentError, ManifestError, generate_synthetic, load_dataset
from .frontend import AudioError, FrontendConfig, extract_features, load_wav, write_feature_csv
from .gradcheck import NonDeterministicError, model_gradient_check
from .metrics import ImageSizeError, feature_distance, frame_metrics
from .model import init_params, predict
from .tensor import ContractError, NumericalError
from .training import train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("listenhead")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _emit_error(kind: str, message: str) -> None:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)


def _json_value(v):
    if isinstance(v, float) and math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


def _config(args) -> RunConfig:
    overrides = dict(parse_override(s) for s in (getattr(args, "set", None) or []))
    return load_config(getattr(args, "config", None), overrides)


def cmd_features(args) -> int:
    cfg = _config(args)
    write_feature_csv(args.out, extract_features(load_wav(args.audio), cfg.frontend))
    return EXIT_OK


def cmd_synth_data(args) -> int:
    if args.clips < 1:
        raise UsageError("--clips must be >= 1")
    if args.duration < 0.5:
        raise UsageError("--duration must be >= 0.5")
    seed = args.seed if args.seed is not None else env_seed(0)
    cfg = _config(args)
    manifest = generate_synthetic(args.out, seed, args.clips, args.duration,
                                  cfg.model.dims, cfg.frontend)
    print(json.dumps({"manifest": str(manifest), "clips": args.clips}))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    clips = load_dataset(args.data, cfg.model.dims, cfg.frontend, split="train")
    if not clips:
        raise ManifestError(f"{args.data}: no training clips")
    model = init_params(cfg.model)
    train_cfg = dataclasses.replace(cfg.train, checkpoint_path=str(args.out))

    def report(record):
        print(json.dumps(record.as_dict()), flush=True)

    train(model, clips, train_cfg, on_epoch=report,
          meta={"frontend": dataclasses.asdict(cfg.frontend), "config": config_to_dict(cfg)})
    return EXIT_OK


def cmd_infer(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    model = ckpt.model
    frontend = FrontendConfig(**((ckpt.meta or {}).get("frontend") or {}))
    ref_seq = load_coeffs(args.ref_coeffs)
    if ref_seq.dims != model.config.dims:
        raise CoeffFormatError(
            f"{args.ref_coeffs}: {ref_seq.dims.total} columns, checkpoint expects "
            f"{model.config.dims.total}")
    if len(ref_seq) < 1:
        raise CoeffFormatError(f"{args.ref_coeffs}: no reference row")
    features = extract_features(load_wav(args.audio), frontend)
    write_coeffs(args.out, predict(model, features, ref_seq.frame(0)))
    return EXIT_OK


def cmd_eval(args) -> int:
    pred, gt = load_coeffs(args.pred), load_coeffs(args.gt)
    if pred.dims != gt.dims:
        raise CoeffFormatError(f"column count differs: {pred.dims.total} vs {gt.dims.total}")
    if len(pred) != len(gt):
        raise CoeffFormatError(f"row count differs: {len(pred)} vs {len(gt)}")
    report = feature_distance(pred, gt).as_dict()
    report.update({"ssim": None, "psnr": None, "cpbd": None})
    if (args.frames_pred is None) != (args.frames_gt is None):
        raise UsageError("--frames-pred and --frames-gt must be given together")
    if args.frames_pred is not None:
        report.update(frame_metrics(args.frames_pred, args.frames_gt))
    report.update({"fid": "n/a", "csim": "n/a"})
    text = json.dumps({k: _json_value(v) for k, v in report.items()})
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def cmd_grad_check(args) -> int:
    cfg = _config(args)
    seed = args.seed if args.seed is not None else env_seed(0)
    report = model_gradient_check(cfg.model, seed, cfg.gradcheck.frames,
                                  cfg.gradcheck.epsilon, cfg.gradcheck.tolerance,
                                  cfg.gradcheck.param_scale, cfg.gradcheck.target_scale)
    out = report.as_dict()
    out["seed"] = seed
    out["tolerance"] = cfg.gradcheck.tolerance
    print(json.dumps(out))
    return EXIT_OK if report.passed else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="listenhead", description="Listener head motion from speaker audio.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def overrides(sp):
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config key (repeatable, JSON values)")

    sp = sub.add_parser("features", help="audio to 45-column feature CSV")
    sp.add_argument("--audio", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--config")
    overrides(sp)
    sp.set_defaults(func=cmd_features)

    sp = sub.add_parser("synth-data", help="generate a synthetic paired dataset")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--clips", type=int, required=True)
    sp.add_argument("--duration", type=float, required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--config", help="reads model.expression_dim and frontend.*")
    overrides(sp)
    sp.set_defaults(func=cmd_synth_data)

    sp = sub.add_parser("train", help="train on a manifest")
    sp.add_argument("--data", required=True)
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", required=True)
    overrides(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("infer", help="predict coefficients for one audio file")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--audio", required=True)
    sp.add_argument("--ref-coeffs", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("eval", help="feature distance and frame metrics report")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--gt", required=True)
    sp.add_argument("--frames-pred")
    sp.add_argument("--frames-gt")
    sp.add_argument("--out", help="also write the JSON report here")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("grad-check", help="finite-difference check of model gradients")
    sp.add_argument("--config", required=True)
    sp.add_argument("--seed", type=int)
    overrides(sp)
    sp.set_defaults(func=cmd_grad_check)
    return p


_DATA_ERRORS = (FileNotFoundError, AudioError, ManifestError, CoeffFormatError,
                ClipAlignmentError, CheckpointError, ContractError, ImageSizeError, OSError)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except UsageError as exc:
        _emit_error("usage", str(exc))
        return EXIT_USAGE
    except ConfigError as exc:
        _emit_error("config", str(exc))
        return EXIT_USAGE
    except (NumericalError, NonDeterministicError) as exc:
        _emit_error("numerical", str(exc))
        return EXIT_NUMERIC
    except _DATA_ERRORS as exc:
        _emit_error("data", str(exc))
        return EXIT_DATA
    except ValueError as exc:
        _emit_error("data", str(exc))
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

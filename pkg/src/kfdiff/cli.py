"""Command-line entry points: gen-data | train | sample | evaluate |
ablate. Every artifact embeds its resolved configuration and is
reproducible byte-for-byte from (config, seed, inputs)."""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from . import motion_data
from .config import load_config
from .motion_data import (ConfigError, CorpusSpec, ShapeError,
                          generate_corpus, read_corpus, tokenize)

MOTION_FILE_VERSION = 1


def _error_category(exc: Exception) -> str:
    from .diffusion import LossError, RangeError
    from .metrics import MetricInputError
    from .sampler import SamplingError
    from .training import TrainingError
    if isinstance(exc, FileNotFoundError):
        return "missing-file"
    if isinstance(exc, ConfigError):
        return "config"
    if isinstance(exc, ShapeError):
        return "shape"
    if isinstance(exc, RangeError):
        return "range"
    if isinstance(exc, (LossError, TrainingError)):
        return "training"
    if isinstance(exc, SamplingError):
        return "sampling"
    if isinstance(exc, MetricInputError):
        return "metrics"
    return "internal"


def _write_json(path: str, obj: dict) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1)
        fh.write("\n")


def cmd_gen_data(args) -> int:
    cfg = load_config(args.config)["corpus"]
    if args.seed is not None:
        cfg["seed"] = args.seed
    spec = CorpusSpec(size=cfg["size"], n_max=cfg["n_max"], seed=cfg["seed"],
                      noise_scale=cfg["noise_scale"])
    corpus = generate_corpus(spec)
    motion_data.write_corpus(args.out, corpus)
    print(f"wrote corpus of {spec.size} sequences to {args.out}")
    return 0


def cmd_train(args) -> int:
    import os

    import torch

    from .checkpoint import save_checkpoint
    from .training import TrainConfig, Trainer

    torch.set_num_threads(1)  # determinism across runs
    cfg = load_config(args.config)["train"]
    if args.seed is not None:
        cfg["seed"] = args.seed
    corpus = read_corpus(args.corpus)
    tc = TrainConfig(T=cfg["T"], steps=cfg["steps"], batch=cfg["batch"],
                     lr=cfg["lr"], d=cfg["d"], layers=cfg["layers"],
                     heads=cfg["heads"], ff_width=cfg["ff_width"],
                     dma_blocks=cfg["dma_blocks"],
                     keyframe_rate=cfg["keyframe_rate"],
                     dropout_rate=cfg["dropout_rate"],
                     lambda_phy=cfg["lambda_phy"],
                     lambda_vel=cfg["lambda_vel"],
                     lambda_foot=cfg["lambda_foot"], seed=cfg["seed"],
                     conditioning=cfg["conditioning"],
                     variance_mode=cfg["variance_mode"])
    trainer = Trainer(corpus, tc, vocab_size=len(motion_data.VOCAB))
    trainer.train(progress=not args.quiet)
    save_checkpoint(args.out, trainer.model, trainer.sched, corpus.stats,
                    list(motion_data.VOCAB),
                    extra={"train_config": cfg,
                           "conditioning": tc.conditioning})
    log_path = os.path.join(args.out, "loss_log.csv")
    with open(log_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "simple", "phy", "total"])
        for row in trainer.loss_log:
            writer.writerow([row[0], repr(row[1]), repr(row[2]),
                             repr(row[3])])
    print(f"wrote checkpoint to {args.out}")
    return 0


def _read_keyframe_file(path: str):
    indices, frames = [], []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            indices.append(int(rec["index"]))
            frames.append(rec["frame"])
    if not indices:
        return None, None
    order = np.argsort(indices)
    return ([indices[i] for i in order],
            np.asarray(frames, dtype=float)[order])


def cmd_sample(args) -> int:
    import torch

    from .checkpoint import load_checkpoint
    from .sampler import SamplerConfig, run_strategy

    torch.set_num_threads(1)
    defaults = load_config(None)["sample"]
    manifest = {}
    if args.config:
        with open(args.config) as fh:
            manifest = json.load(fh)
    checkpoint = args.checkpoint or manifest.get("checkpoint")
    if not checkpoint:
        raise ConfigError("sample needs a checkpoint (flag or manifest)")
    bundle = load_checkpoint(checkpoint)

    def pick(key, flag_val=None):
        if flag_val is not None:
            return flag_val
        return manifest.get(key, defaults.get(key))

    strategy = pick("strategy", args.strategy)
    r = float(pick("r", args.r))
    s = float(pick("s", args.s))
    seed = int(pick("seed", args.seed))
    length = pick("length")
    n = int(length) if length else bundle.model.cfg.n_max
    prompt = manifest.get("prompt", "a person walks forward slowly")
    tokens = tokenize(prompt)

    keyframes = indices = None
    kf_file = manifest.get("keyframe_file")
    if kf_file:
        indices, keyframes = _read_keyframe_file(kf_file)
    scfg = SamplerConfig(r=r, s=s, l=int(pick("l")), m=int(pick("m")),
                         grad_scale=float(pick("grad_scale")),
                         tg_step_window=pick("tg_step_window"), seed=seed)
    motion = run_strategy(strategy, bundle.model, bundle.model,
                          bundle.schedule, bundle.stats, tokens, keyframes,
                          indices, n, scfg)

    header = {"version": MOTION_FILE_VERSION, "D": motion.shape[1],
              "n": motion.shape[0], "prompt": prompt, "strategy": strategy,
              "r": r, "s": s, "seed": seed}
    with open(args.out, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for i, frame in enumerate(motion):
            fh.write(json.dumps({"frame": i, "values": frame.tolist()},
                                sort_keys=True) + "\n")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["frame", "channel", "value"])
            for i, frame in enumerate(motion):
                for c, v in enumerate(frame):
                    writer.writerow([i, c, repr(float(v))])
    print(f"wrote {motion.shape[0]}-frame motion to {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    import torch

    from .checkpoint import load_checkpoint
    from .evaluate import EvalConfig, comparison_table, evaluate_strategies
    from .sampler import STRATEGIES, SamplerConfig

    torch.set_num_threads(1)
    cfg = load_config(args.config)
    ecfg_d, scfg_d = cfg["eval"], cfg["sample"]
    if args.trials is not None:
        ecfg_d["trials"] = args.trials
    if args.seed is not None:
        ecfg_d["seed"] = args.seed
    if args.rate is not None:
        ecfg_d["rate"] = args.rate[0] if isinstance(args.rate, list) \
            else args.rate
    if args.r is not None:
        scfg_d["r"] = args.r
    if args.s is not None:
        scfg_d["s"] = args.s

    strategies = args.strategy or list(STRATEGIES)
    for name in strategies:
        if name not in STRATEGIES:
            raise ConfigError(f"unknown strategy {name!r}")
    corpus = read_corpus(args.corpus)
    bundle_kf = load_checkpoint(args.checkpoint)
    bundle_unc = load_checkpoint(args.uncond_checkpoint) \
        if args.uncond_checkpoint else None
    base_scfg = SamplerConfig(r=scfg_d["r"], s=scfg_d["s"], l=scfg_d["l"],
                              m=scfg_d["m"], grad_scale=scfg_d["grad_scale"],
                              tg_step_window=scfg_d["tg_step_window"])
    specs = {name: (name, base_scfg) for name in strategies}
    ecfg = EvalConfig(trials=ecfg_d["trials"], rate=ecfg_d["rate"],
                      pair_count=ecfg_d["pair_count"], seed=ecfg_d["seed"],
                      diversity_samples=ecfg_d["diversity_samples"])
    report = evaluate_strategies(bundle_kf, bundle_unc, corpus, specs, ecfg)
    report["config"] = {"eval": ecfg_d, "sample": scfg_d,
                        "strategies": strategies}
    _write_json(args.out, report)
    table = comparison_table(report)
    with open(args.out + ".txt", "w") as fh:
        fh.write(table)
    print(table, end="")
    return 0


def cmd_ablate(args) -> int:
    import torch

    from .checkpoint import load_checkpoint
    from .evaluate import (DEFAULT_ABLATION_RATES, ablate_rates,
                           ablation_table)
    from .sampler import SamplerConfig

    torch.set_num_threads(1)
    cfg = load_config(args.config)
    ecfg_d, scfg_d = cfg["eval"], cfg["sample"]
    trials = args.trials if args.trials is not None else ecfg_d["trials"]
    seed = args.seed if args.seed is not None else ecfg_d["seed"]
    rates = tuple(args.rate) if args.rate else DEFAULT_ABLATION_RATES
    corpus = read_corpus(args.corpus)
    bundle = load_checkpoint(args.checkpoint)
    scfg = SamplerConfig(r=args.r if args.r is not None else scfg_d["r"],
                         s=args.s if args.s is not None else scfg_d["s"],
                         l=scfg_d["l"], m=scfg_d["m"],
                         tg_step_window=scfg_d["tg_step_window"])
    report = ablate_rates(bundle, corpus, rates, trials, seed, scfg)
    report["config"] = {"eval": ecfg_d, "sample": scfg_d}
    _write_json(args.out, report)
    table = ablation_table(report)
    with open(args.out + ".txt", "w") as fh:
        fh.write(table)
    print(table, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kfdiff",
        description="Keyframe-collaborated text-driven motion diffusion")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", default=None, help="config JSON path")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", required=out_required)

    p = sub.add_parser("gen-data", help="generate a synthetic corpus")
    common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a denoiser checkpoint")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="generate one motion")
    common(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--strategy", default=None)
    p.add_argument("--r", type=float, default=None)
    p.add_argument("--s", type=float, default=None)
    p.add_argument("--csv", default=None, help="optional CSV export path")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("evaluate", help="strategy comparison report")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--uncond-checkpoint", default=None)
    p.add_argument("--strategy", action="append", default=None)
    p.add_argument("--rate", type=float, default=None)
    p.add_argument("--r", type=float, default=None)
    p.add_argument("--s", type=float, default=None)
    p.add_argument("--trials", type=int, default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="keyframe-rate trend report")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--rate", type=float, action="append", default=None)
    p.add_argument("--r", type=float, default=None)
    p.add_argument("--s", type=float, default=None)
    p.add_argument("--trials", type=int, default=None)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - single CLI error funnel
        print(f"error: {_error_category(exc)}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

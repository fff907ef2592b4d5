"""Trial-based evaluation drivers: strategy comparison (Table-2-shaped)
and the keyframe-rate ablation (Table-4-shaped trend report)."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import metrics
from .checkpoint import CheckpointBundle
from .motion_data import Corpus, sample_keyframe_mask
from .sampler import SamplerConfig, run_strategy

REPORT_VERSION = 1

DEFAULT_ABLATION_RATES = (0.0, 0.02, 0.05, 0.10)


@dataclass
class EvalConfig:
    trials: int = 50
    rate: float = 0.05
    pair_count: int = 20
    seed: int = 0
    diversity_samples: int = 8
    gens_per_trial: int = 1   # generations averaged per (trial, strategy)


def _trial_plan(corpus: Corpus, trials: int, seed: int):
    """Deterministic (sequence, mask, seed) assignment per trial."""
    rng = np.random.default_rng(np.random.SeedSequence(
        [seed & 0xFFFFFFFFFFFFFFFF, 0xE7A1]))
    plan = []
    for j in range(trials):
        si = int(rng.integers(len(corpus.sequences)))
        mask_seed = int(rng.integers(2 ** 31))
        sample_seed = int(rng.integers(2 ** 31))
        plan.append((j, si, mask_seed, sample_seed))
    return plan


def evaluate_strategies(bundle_kf: CheckpointBundle | None,
                        bundle_uncond: CheckpointBundle | None,
                        corpus: Corpus,
                        strategy_specs: dict[str, tuple[str, SamplerConfig]],
                        eval_cfg: EvalConfig) -> dict:
    """Run paired trials across strategies and assemble a metric report.

    strategy_specs maps a report row name to (strategy kind, sampler
    config); the same per-trial noise seed is shared across rows so
    comparisons are paired.
    """
    base = bundle_kf if bundle_kf is not None else bundle_uncond
    sched, stats = base.schedule, base.stats
    model_kf = bundle_kf.model if bundle_kf else None
    model_unc = bundle_uncond.model if bundle_uncond else None

    plan = _trial_plan(corpus, eval_cfg.trials, eval_cfg.seed)
    per_trial = {name: {"ade": [], "k_err": [], "k_trans": []}
                 for name in strategy_specs}
    generated = {name: [] for name in strategy_specs}
    gts = []
    real_kt = []
    for j, si, mask_seed, sample_seed in plan:
        seq = corpus.sequences[si]
        prompt = corpus.prompts[si]
        n = seq.frames.shape[0]
        km = sample_keyframe_mask(n, eval_cfg.rate, mask_seed)
        kf = seq.frames[km.keyframe_indices]
        gts.append(seq.frames)
        real_kt.append(metrics.k_trans(seq.frames, kf, km.keyframe_indices))
        for name, (kind, scfg) in strategy_specs.items():
            gens = []
            for g in range(eval_cfg.gens_per_trial):
                cfg = replace(scfg, seed=sample_seed + 9973 * g)
                gens.append(run_strategy(kind, model_kf, model_unc, sched,
                                         stats, prompt.tokens, kf,
                                         km.keyframe_indices, n, cfg))
            generated[name].extend(gens)
            per_trial[name]["ade"].append(
                metrics.ade(seq.frames, gens, km.keyframe_indices))
            per_trial[name]["k_err"].append(float(np.mean(
                [metrics.k_err(g, kf, km.keyframe_indices) for g in gens])))
            per_trial[name]["k_trans"].append(float(np.mean(
                [metrics.k_trans(g, kf, km.keyframe_indices)
                 for g in gens])))

    # diversity: repeated generations for one fixed prompt and mask
    div_si = max(range(len(corpus.sequences)),
                 key=lambda i: corpus.sequences[i].frames.shape[0])
    div_seq, div_prompt = corpus.sequences[div_si], corpus.prompts[div_si]
    div_n = div_seq.frames.shape[0]
    div_km = sample_keyframe_mask(div_n, eval_cfg.rate, eval_cfg.seed)
    div_kf = div_seq.frames[div_km.keyframe_indices]

    rows = {}
    for name, (kind, scfg) in strategy_specs.items():
        div_set = [run_strategy(kind, model_kf, model_unc, sched, stats,
                                div_prompt.tokens, div_kf,
                                div_km.keyframe_indices, div_n,
                                replace(scfg, seed=eval_cfg.seed + 7000 + i))
                   for i in range(eval_cfg.diversity_samples)]
        rows[name] = metrics.MetricBundle(
            ade=float(np.mean(per_trial[name]["ade"])),
            k_err=float(np.mean(per_trial[name]["k_err"])),
            k_trans=float(np.mean(per_trial[name]["k_trans"])),
            diversity=metrics.diversity(div_set, eval_cfg.pair_count,
                                        eval_cfg.seed),
            frechet=metrics.frechet_feature_distance(generated[name], gts),
        ).as_dict()

    return {
        "version": REPORT_VERSION,
        "trial_count": eval_cfg.trials,
        "rate": eval_cfg.rate,
        "seed": eval_cfg.seed,
        "trial_seeds": [p[3] for p in plan],
        "real_k_trans": float(np.mean(real_kt)),
        "real_k_trans_per_trial": real_kt,
        "strategies": rows,
        "per_trial": per_trial,
    }


def comparison_table(report: dict) -> str:
    """Plain-text table: rows = strategies, columns = the metric bundle."""
    cols = ("ade", "k_err", "k_trans", "diversity", "frechet")
    width = max(len(n) for n in report["strategies"]) + 2
    lines = ["".join([f"{'strategy':<{width}}"]
                     + [f"{c:>12}" for c in cols])]
    lines.append(f"{'real':<{width}}" + f"{'-':>12}" * 2
                 + f"{report['real_k_trans']:>12.4f}" + f"{'-':>12}" * 2)
    for name, row in report["strategies"].items():
        lines.append(f"{name:<{width}}"
                     + "".join(f"{row[c]:>12.4f}" for c in cols))
    return "\n".join(lines) + "\n"


def ablate_rates(bundle_kf: CheckpointBundle, corpus: Corpus,
                 rates: tuple[float, ...], trials: int, seed: int,
                 sampler_cfg: SamplerConfig) -> dict:
    """Keyframe-rate trend: nested conditioning subsets of a shared 10%
    superset per trial; ADE and K-Err are measured against the superset so
    rows are comparable. Rate 0 conditions on nothing (null condition)."""
    rates = tuple(sorted(rates))
    max_rate = max(max(rates), 0.10)
    sched, stats = bundle_kf.schedule, bundle_kf.stats
    plan = _trial_plan(corpus, trials, seed)
    per_rate = {r: {"ade": [], "k_err": []} for r in rates}
    for j, si, mask_seed, sample_seed in plan:
        seq = corpus.sequences[si]
        prompt = corpus.prompts[si]
        n = seq.frames.shape[0]
        superset = sample_keyframe_mask(n, max_rate, mask_seed)
        order = np.random.default_rng(mask_seed).permutation(
            superset.keyframe_indices)
        sup_idx = superset.keyframe_indices
        sup_kf = seq.frames[sup_idx]
        for rate in rates:
            k = 0 if rate == 0 else max(1, int(np.floor(rate * n + 0.5)))
            k = min(k, len(order))
            cond_idx = sorted(int(i) for i in order[:k])
            cfg = replace(sampler_cfg, seed=sample_seed)
            if k == 0:
                gen = run_strategy("diffkfc", bundle_kf.model, None, sched,
                                   stats, prompt.tokens, None, None, n,
                                   replace(cfg, r=0.0))
            else:
                gen = run_strategy("diffkfc", bundle_kf.model, None, sched,
                                   stats, prompt.tokens,
                                   seq.frames[cond_idx], cond_idx, n, cfg)
            per_rate[rate]["ade"].append(
                metrics.ade(seq.frames, [gen], sup_idx))
            per_rate[rate]["k_err"].append(
                metrics.k_err(gen, sup_kf, sup_idx))

    rows = []
    for rate in rates:
        rows.append({"rate": rate,
                     "ade": float(np.mean(per_rate[rate]["ade"])),
                     "k_err": float(np.mean(per_rate[rate]["k_err"]))})
    ade_seq = [r["ade"] for r in rows]
    kerr_seq = [r["k_err"] for r in rows]
    report = {
        "version": REPORT_VERSION,
        "trial_count": trials,
        "seed": seed,
        "rates": list(rates),
        "rows": rows,
        "ade_monotone_nonincreasing":
            all(a >= b - 1e-12 for a, b in zip(ade_seq[:-1], ade_seq[1:])),
        "k_err_monotone_nonincreasing":
            all(a >= b - 1e-12 for a, b in zip(kerr_seq[:-1], kerr_seq[1:])),
    }
    if rows[0]["rate"] == 0.0 and rows[-1]["k_err"] > 0:
        report["k_err_zero_to_max_ratio"] = rows[0]["k_err"] / \
            rows[-1]["k_err"]
    return report


def ablation_table(report: dict) -> str:
    lines = [f"{'rate':>6}{'ade':>12}{'k_err':>12}"]
    for row in report["rows"]:
        lines.append(f"{row['rate']:>6.2f}{row['ade']:>12.4f}"
                     f"{row['k_err']:>12.4f}")
    lines.append(f"ade monotone non-increasing: "
                 f"{report['ade_monotone_nonincreasing']}")
    lines.append(f"k_err monotone non-increasing: "
                 f"{report['k_err_monotone_nonincreasing']}")
    if "k_err_zero_to_max_ratio" in report:
        lines.append(f"k_err 0% / max-rate ratio: "
                     f"{report['k_err_zero_to_max_ratio']:.2f}")
    return "\n".join(lines) + "\n"

"""End-to-end acceptance suite.

Criteria 1-7 are exactness/property checks with stated tolerances and
runtime limits; criteria 8-9 train desk-scale models and check directional
trends; criterion 10 checks byte-level determinism of every CLI command.
The two trained checkpoints are cached on disk keyed by a hash of the
relevant sources, so repeat runs skip training.
"""

import hashlib
import json
import os
import time

import numpy as np
import pytest
import torch

import kfdiff.denoiser
import kfdiff.diffusion
import kfdiff.motion_data
import kfdiff.training
from kfdiff.checkpoint import load_checkpoint, save_checkpoint
from kfdiff.cli import main
from kfdiff.dct_guidance import (cfg_combine, dct_basis, transition_grad,
                                 transition_loss)
from kfdiff.denoiser import (DenoiserModel, ModelConfig, dilate_validity,
                             masked_attention)
from kfdiff.diffusion import cosine_schedule, posterior_mean, q_sample, \
    simple_loss
from kfdiff.evaluate import EvalConfig, ablate_rates, evaluate_strategies
from kfdiff.motion_data import VOCAB, CorpusSpec, generate_corpus
from kfdiff.sampler import SamplerConfig
from kfdiff.training import TrainConfig, Trainer

torch.set_num_threads(1)

CACHE_ROOT = "/tmp/kfdiff_acceptance_cache"

CORPUS_SPEC = CorpusSpec(size=500, n_max=64, seed=7)
KF_TRAIN = dict(T=100, steps=8000, batch=32, lr=3e-4, seed=0)
UNC_TRAIN = dict(T=100, steps=1500, batch=32, lr=3e-4, seed=1,
                 conditioning="none")


def _report(criterion: int, ok: bool, detail: str = "") -> None:
    print(f"acceptance criterion {criterion}: "
          f"{'PASS' if ok else 'FAIL'} {detail}".rstrip())


def _source_hash() -> str:
    h = hashlib.sha256()
    for mod in (kfdiff.motion_data, kfdiff.diffusion, kfdiff.denoiser,
                kfdiff.training):
        with open(mod.__file__, "rb") as fh:
            h.update(fh.read())
    h.update(json.dumps([CORPUS_SPEC.__dict__, KF_TRAIN, UNC_TRAIN],
                        sort_keys=True).encode())
    return h.hexdigest()[:16]


@pytest.fixture(scope="session")
def corpus():
    return generate_corpus(CORPUS_SPEC)


@pytest.fixture(scope="session")
def trained(corpus):
    """Two desk-scale checkpoints (conditioned + unconditional), trained
    once and cached on disk; also reports the wall-clock training time."""
    cache = os.path.join(CACHE_ROOT, _source_hash())
    kf_dir, unc_dir = os.path.join(cache, "kf"), os.path.join(cache, "unc")
    meta_path = os.path.join(cache, "meta.json")
    if not os.path.exists(meta_path):
        t0 = time.monotonic()
        for out, kwargs in ((kf_dir, KF_TRAIN), (unc_dir, UNC_TRAIN)):
            trainer = Trainer(corpus, TrainConfig(**kwargs))
            trainer.train()
            save_checkpoint(out, trainer.model, trainer.sched, corpus.stats,
                            list(VOCAB))
        train_seconds = time.monotonic() - t0
        os.makedirs(cache, exist_ok=True)
        with open(meta_path, "w") as fh:
            json.dump({"train_seconds": train_seconds}, fh)
    with open(meta_path) as fh:
        train_seconds = json.load(fh)["train_seconds"]
    return (load_checkpoint(kf_dir), load_checkpoint(unc_dir),
            train_seconds)


def test_criterion_1_forward_process_exactness():
    t0 = time.monotonic()
    T = 10
    sched = cosine_schedule(T)
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(100):
        n, d = int(rng.integers(2, 12)), int(rng.integers(1, 8))
        x0 = rng.normal(size=(n, d))
        t = int(rng.integers(1, T + 1))
        # iterative chain: x_t = sqrt(1-beta_t) x_{t-1} + sqrt(beta_t) e_t,
        # with the per-step noises combined to match the closed form's
        # single epsilon
        x = x0.copy()
        noise_acc = np.zeros_like(x0)
        scale_acc = 0.0
        for step in range(1, t + 1):
            beta = sched.beta[step]
            e = rng.normal(size=(n, d))
            x = np.sqrt(1 - beta) * x + np.sqrt(beta) * e
            noise_acc = np.sqrt(1 - beta) * noise_acc + np.sqrt(beta) * e
            scale_acc = (1 - beta) * scale_acc + beta
        eps_equiv = noise_acc / np.sqrt(scale_acc)
        closed = q_sample(x0, t, eps_equiv, sched)
        worst = max(worst, float(np.max(np.abs(closed - x))))
    elapsed = time.monotonic() - t0
    ok = worst < 1e-5 and elapsed < 1.0
    _report(1, ok, f"max_err={worst:.2e} time={elapsed:.2f}s")
    assert worst < 1e-5
    assert elapsed < 1.0


def test_criterion_2_dct_machinery():
    t0 = time.monotonic()
    rng = np.random.default_rng(1)
    l, m = 4, 3
    win = dct_basis(l, m)
    D = win.basis
    assert np.max(np.abs(D.T @ D - np.eye(m))) < 1e-10
    P = win.projection
    assert np.max(np.abs(P @ P - P)) < 1e-8
    w = 2 * l + 1
    for _ in range(100):
        n, d = int(rng.integers(2 * w, 40)), int(rng.integers(1, 6))
        x = rng.normal(size=(n, d))
        idx = sorted(rng.choice(range(l, n - l), size=2,
                                replace=False).tolist())
        kf = rng.normal(size=(2, d))
        # brute force over full (unclipped) windows
        x_sub = x.copy()
        x_sub[idx] = kf
        brute = 0.0
        for i in idx:
            g = x_sub[i - l:i + l + 1]
            brute += np.sum((P @ g - g) ** 2)
        brute /= w * len(idx)
        got = transition_loss(x, kf, idx, l, m)
        assert abs(got - brute) < 1e-8
        # analytic gradient vs central differences
        g_an = transition_grad(x, kf, idx, l, m)
        h = 1e-6
        for _ in range(3):
            i, j = int(rng.integers(n)), int(rng.integers(d))
            if i in idx:
                continue
            xp, xm = x.copy(), x.copy()
            xp[i, j] += h
            xm[i, j] -= h
            fd = (transition_loss(xp, kf, idx, l, m)
                  - transition_loss(xm, kf, idx, l, m)) / (2 * h)
            denom = max(abs(fd), abs(g_an[i, j]), 1e-8)
            assert abs(fd - g_an[i, j]) / denom < 1e-5
    elapsed = time.monotonic() - t0
    _report(2, elapsed < 5.0, f"time={elapsed:.2f}s")
    assert elapsed < 5.0


def _brute_force_dilation(n, kf_set, steps):
    valid = set(kf_set)
    history = []
    for step in steps:
        reach = n if step < 0 else step
        new = set()
        for i in range(n):
            if any(abs(i - k) <= reach for k in valid):
                new.add(i)
        valid = valid | new
        history.append(frozenset(valid))
    return history


def test_criterion_3_dilation_oracle():
    t0 = time.monotonic()
    cfg = ModelConfig(d=16, heads=2, decoder_layers=1, ff_width=16,
                      dma_blocks=8, n_max=64)
    enc = kfdiff.denoiser.KeyframeEncoder(cfg)
    rng = np.random.default_rng(2)
    for _ in range(200):
        n = int(rng.integers(16, 65))
        k = int(rng.integers(1, max(2, n // 8)))
        kf = sorted(rng.choice(n, size=k, replace=False).tolist())
        rows = torch.zeros(1, n, dtype=torch.bool)
        rows[0, kf] = True
        with torch.no_grad():
            _, history = enc(torch.zeros(1, n, cfg.feature_dim), rows,
                             torch.zeros(1, cfg.d), collect_validity=True)
        steps = cfg.dilation_steps(n)
        oracle = _brute_force_dilation(n, kf, steps)
        for got, want in zip(history, oracle):
            got_set = frozenset(torch.nonzero(got[0]).flatten().tolist())
            assert got_set == want
        assert frozenset(range(n)) == oracle[-1]
    elapsed = time.monotonic() - t0
    _report(3, elapsed < 5.0, f"time={elapsed:.2f}s")
    assert elapsed < 5.0


def test_criterion_4_attention_mask_exactness():
    rng = torch.Generator().manual_seed(3)
    for case in range(100):
        b, n, d = 2, int(torch.randint(2, 12, (1,), generator=rng)), 8
        q = torch.randn(b, n, d, generator=rng, dtype=torch.float64)
        k = torch.randn(b, n, d, generator=rng, dtype=torch.float64)
        v = torch.randn(b, n, d, generator=rng, dtype=torch.float64)
        validity = torch.zeros(b, n, dtype=torch.bool)
        nv = int(torch.randint(1, n + 1, (1,), generator=rng))
        keep = torch.randperm(n, generator=rng)[:nv]
        validity[:, keep] = True
        scores = (q @ k.transpose(1, 2)) / np.sqrt(d)
        scores = scores.masked_fill(~validity[:, None, :], -torch.inf)
        weights = torch.softmax(scores, dim=-1)
        assert float(weights[:, :, ~validity[0]].abs().max()
                     if (~validity[0]).any() else 0.0) < 1e-8
        out = masked_attention(q, k, v, validity)
        ref = weights @ v
        assert torch.allclose(out, ref, atol=1e-6)
        # single-valid-token case returns that token's value vector
        single = torch.zeros(b, n, dtype=torch.bool)
        single[:, 0] = True
        out1 = masked_attention(q, k, v, single)
        assert float((out1 - v[:, :1, :].expand_as(out1)).abs().max()) < 1e-6
    _report(4, True)


def test_criterion_5_guidance_algebra():
    rng = np.random.default_rng(4)
    cond = rng.normal(size=(6, 5))
    unc = rng.normal(size=(6, 5))
    assert np.array_equal(cfg_combine(cond, unc, 1.0), cond)
    assert np.array_equal(cfg_combine(cond, unc, 0.0), unc)
    for s in (0.3, 1.7, 2.5, -0.5):
        want = unc + s * (cond - unc)
        assert np.max(np.abs(cfg_combine(cond, unc, s) - want)) < 1e-10
    # guided step descends the transition loss
    sched = cosine_schedule(100)
    wins = 0
    for _ in range(100):
        n, d = 24, 7
        x0_hat = rng.normal(size=(n, d))
        x_t = rng.normal(size=(n, d))
        t = int(rng.integers(2, 101))
        idx = sorted(rng.choice(n, size=2, replace=False).tolist())
        kf = rng.normal(size=(2, d))
        mean = posterior_mean(x0_hat, x_t, t, sched)
        g = transition_grad(mean, kf, idx, 4, 3)
        pert = mean - 1e-2 * sched.sigma2_at(t) * g
        if transition_loss(pert, kf, idx, 4, 3) < \
                transition_loss(mean, kf, idx, 4, 3):
            wins += 1
    _report(5, wins >= 95, f"descent wins={wins}/100")
    assert wins >= 95


def test_criterion_6_loss_masking():
    rng = np.random.default_rng(5)
    x0 = rng.normal(size=(10, 4))
    pred = rng.normal(size=(10, 4))
    mask = np.zeros((10, 4))
    mask[[1, 6], :] = 1.0
    base = simple_loss(x0, pred, mask)
    for _ in range(20):
        perturbed = pred.copy()
        perturbed[[1, 6], :] += rng.normal(size=(2, 4)) * 100
        assert simple_loss(x0, perturbed, mask) == base  # bit-for-bit
    # hand-computed 4x2 case: six unmasked unit errors / six entries = 1
    x = np.zeros((4, 2))
    p = np.array([[1.0, 1.0], [5.0, 5.0], [1.0, 1.0], [1.0, 1.0]])
    m = np.array([[0, 0], [1, 1], [0, 0], [0, 0]], dtype=float)
    assert simple_loss(x, p, m) == 1.0
    _report(6, True)


def test_criterion_7_denoiser_gradients():
    t0 = time.monotonic()
    cfg = ModelConfig(feature_dim=5, vocab_size=len(VOCAB), d=8, heads=2,
                      decoder_layers=1, ff_width=16, dma_blocks=2, n_max=6)
    model = DenoiserModel(cfg).double()
    gen = torch.Generator().manual_seed(6)
    b, n = 2, 6
    x_t = torch.randn(b, n, 5, generator=gen, dtype=torch.float64)
    x0 = torch.randn(b, n, 5, generator=gen, dtype=torch.float64)
    t = torch.tensor([3, 7])
    tokens = torch.tensor([[1, 2, 3, 8], [1, 2, 4, 13]])
    kf_rows = torch.zeros(b, n, dtype=torch.bool)
    kf_rows[:, 2] = True
    x_kf = x0 * kf_rows[..., None].to(x0.dtype)
    dropout = torch.tensor([False, False])
    mask = kf_rows[..., None].to(x0.dtype).expand_as(x0)

    def loss_value():
        out = model(x_t, t, tokens, x_kf, kf_rows, dropout)
        return simple_loss(x0, out, mask)

    loss = loss_value()
    model.zero_grad()
    loss.backward()
    params = [p for p in model.parameters() if p.grad is not None
              and p.grad.abs().max() > 0]
    rng = np.random.default_rng(7)
    h = 1e-5
    worst = 0.0
    checked = 0
    while checked < 20:
        p = params[int(rng.integers(len(params)))]
        flat = p.data.view(-1)
        j = int(rng.integers(flat.numel()))
        analytic = float(p.grad.view(-1)[j])
        if abs(analytic) < 1e-8:
            continue
        orig = float(flat[j])
        with torch.no_grad():
            flat[j] = orig + h
            lp = float(loss_value())
            flat[j] = orig - h
            lm = float(loss_value())
            flat[j] = orig
        fd = (lp - lm) / (2 * h)
        rel = abs(fd - analytic) / max(abs(fd), abs(analytic))
        worst = max(worst, rel)
        checked += 1
    elapsed = time.monotonic() - t0
    ok = worst < 1e-3 and elapsed < 30.0
    _report(7, ok, f"worst_rel={worst:.2e} time={elapsed:.1f}s")
    assert worst < 1e-3
    assert elapsed < 30.0


def test_criterion_8_strategy_trends(corpus, trained):
    bundle_kf, bundle_unc, train_seconds = trained
    specs = {
        "diffkfc": ("diffkfc", SamplerConfig(r=2000.0, s=1.0,
                                             tg_step_window=10)),
        "diffkfc_no_tg": ("diffkfc", SamplerConfig(r=0.0, s=1.0)),
        "grad": ("grad", SamplerConfig(grad_scale=1.0)),
        "text-only": ("text-only", SamplerConfig(r=0.0, s=1.0)),
    }
    report = evaluate_strategies(bundle_kf, bundle_unc, corpus, specs,
                                 EvalConfig(trials=50, rate=0.05, seed=0,
                                            gens_per_trial=3))
    pt = report["per_trial"]
    d_kerr = np.array(pt["diffkfc"]["k_err"])
    frac_a = float(((d_kerr < np.array(pt["grad"]["k_err"]))
                    & (d_kerr < np.array(pt["text-only"]["k_err"]))).mean())
    # each trial is judged against its own sequence's junction smoothness:
    # roughness varies an order of magnitude across prompts, so a single
    # pooled reference would reduce half the comparisons to coin flips
    real = np.array(report["real_k_trans_per_trial"])
    d_kt = np.abs(np.array(pt["diffkfc"]["k_trans"]) - real)
    n_kt = np.abs(np.array(pt["diffkfc_no_tg"]["k_trans"]) - real)
    frac_b = float((d_kt < n_kt).mean())
    frac_c = float((np.array(pt["diffkfc"]["ade"])
                    < np.array(pt["text-only"]["ade"])).mean())
    ok = (frac_a >= 0.80 and frac_b >= 0.70 and frac_c >= 0.90
          and train_seconds <= 30 * 60)
    _report(8, ok, f"k_err_wins={frac_a:.2f} tg_closer={frac_b:.2f} "
                   f"ade_wins={frac_c:.2f} train={train_seconds:.0f}s")
    assert train_seconds <= 30 * 60
    assert frac_a >= 0.80
    assert frac_b >= 0.70
    assert frac_c >= 0.90


def test_criterion_9_rate_trend(corpus, trained):
    bundle_kf, _, train_seconds = trained
    t0 = time.monotonic()
    report = ablate_rates(bundle_kf, corpus, (0.0, 0.02, 0.05, 0.10),
                          trials=50, seed=1,
                          sampler_cfg=SamplerConfig(r=2000.0, s=1.0,
                                                    tg_step_window=10))
    elapsed = time.monotonic() - t0
    ratio = report.get("k_err_zero_to_max_ratio", 0.0)
    ok = (report["ade_monotone_nonincreasing"]
          and report["k_err_monotone_nonincreasing"] and ratio >= 5.0
          and train_seconds + elapsed <= 45 * 60)
    rows = " ".join(f"{r['rate']:.2f}:(ade={r['ade']:.3f},"
                    f"kerr={r['k_err']:.3f})" for r in report["rows"])
    _report(9, ok, f"{rows} ratio={ratio:.1f} time={elapsed:.0f}s")
    assert report["ade_monotone_nonincreasing"]
    assert report["k_err_monotone_nonincreasing"]
    assert ratio >= 5.0
    assert train_seconds + elapsed <= 45 * 60


def test_criterion_10_cli_determinism(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(
        {"corpus": {"size": 10, "n_max": 24, "seed": 5},
         "train": {"T": 10, "steps": 6, "batch": 4, "d": 16, "layers": 2,
                   "heads": 2, "ff_width": 32, "dma_blocks": 4}}))

    def run_all(tag):
        d = tmp_path / tag
        d.mkdir()
        corpus = d / "corpus.jsonl"
        ckpt = d / "ckpt"
        assert main(["gen-data", "--config", str(cfg_path),
                     "--out", str(corpus)]) == 0
        assert main(["train", "--config", str(cfg_path), "--quiet",
                     "--corpus", str(corpus), "--out", str(ckpt)]) == 0
        run = d / "run.json"
        run.write_text(json.dumps({"checkpoint": str(ckpt), "length": 16,
                                   "seed": 3}))
        motion = d / "motion.jsonl"
        assert main(["sample", "--config", str(run),
                     "--out", str(motion)]) == 0
        rep = d / "report.json"
        assert main(["evaluate", "--corpus", str(corpus),
                     "--checkpoint", str(ckpt), "--strategy", "diffkfc",
                     "--trials", "2", "--r", "1.0", "--seed", "0",
                     "--out", str(rep)]) == 0
        abl = d / "ablation.json"
        assert main(["ablate", "--corpus", str(corpus),
                     "--checkpoint", str(ckpt), "--rate", "0.0",
                     "--rate", "0.1", "--trials", "2", "--r", "1.0",
                     "--seed", "0", "--out", str(abl)]) == 0
        files = [corpus, ckpt / "manifest.json", ckpt / "params.bin",
                 ckpt / "loss_log.csv", motion, rep,
                 rep.with_suffix(".json.txt"), abl,
                 abl.with_suffix(".json.txt")]
        blobs = {}
        for f in files:
            name = os.path.relpath(f, d)
            data = open(f, "rb").read()
            # reports embed no paths; checkpoints and motions are pure
            blobs[name] = hashlib.sha256(data).hexdigest()
        return blobs

    a = run_all("a")
    b = run_all("b")
    ok = a == b
    _report(10, ok)
    assert a == b

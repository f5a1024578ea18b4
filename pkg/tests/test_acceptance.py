"""End-to-end acceptance checks, one per shipped guarantee.

Each test prints a single PASS/FAIL line straight to the terminal
(bypassing capture) so a full run reads as a nine-line report. The
desk-scale ablation matrix is trained once in a session fixture and
shared between the learning-gap check and the heatmap check.
"""

import time
from dataclasses import replace

import numpy as np
import pytest

import _oracles as ref
from cmr.blocks import (NetworkConfig, block_b_forward, build_network,
                        load_network, network_forward, neutralize,
                        transfer_parameters)
from cmr.cme import CmeParams, cme_forward, cme_forward_naive, discrepancy
from cmr.harness.ablate import run_ablation, run_reduction_sweep, summarize_ablation
from cmr.harness.bench import benchmark
from cmr.harness.train import (TrainConfig, evaluate, train,
                               variant_network_config)
from cmr.harness.viz import capture_maps, gate_group_maps, mask_mass_fraction
from cmr.sme import SmeParams, pointwise_cosine, sme_forward, sme_forward_naive
from cmr.synthdata import SynthConfig, generate_clip, motion_mask
from cmr.tensor.core import Tensor, grad_check, mul, sum_all
from cmr.tensor.ops import cross_entropy_loss, softmax_lastdim
from cmr.tensor.rng import stream


def report(capsys, number: int, ok: bool, detail: str):
    with capsys.disabled():
        print(f"\nCRITERION {number}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"criterion {number}: {detail}"


def rand_cme(channels: int, r: int, seed: int) -> CmeParams:
    p = CmeParams.init(channels, r, r, seed=seed)
    rng = stream(50, seed)
    p.w3.data[:] = rng.normal(scale=0.6, size=p.w3.shape)
    p.b3.data[:] = rng.normal(scale=0.3, size=p.b3.shape)
    return p


def rand_sme(channels: int, seed: int) -> SmeParams:
    p = SmeParams.init(channels, seed=seed)
    rng = stream(51, seed)
    p.bn.gamma.data[:] = rng.normal(scale=0.6, size=channels)
    p.bn.beta.data[:] = rng.normal(scale=0.2, size=channels)
    return p


def test_criterion_1_invariant_suite(capsys):
    t0 = time.monotonic()
    worst = {"softmax": 0.0, "cosine_bound": 0.0, "scale": 0.0, "perm": 0.0,
             "sme_ident": 0.0}
    for seed in range(100):
        rng = stream(52, seed)

        x = Tensor(rng.normal(size=(2, 5, 7)) * 10.0)
        rows = softmax_lastdim(x).data.sum(axis=-1)
        worst["softmax"] = max(worst["softmax"], float(np.abs(rows - 1.0).max()))

        clip = Tensor(rng.normal(size=(1, 4, 8, 5, 5)))
        p = rand_cme(8, 2, seed)
        cap: dict = {}
        cme_forward(clip, p, capture=cap)
        g = cap["gate"].data
        assert 0.0 < g.min() and g.max() < 1.0, "gate leaves (0,1)"

        keys = Tensor(rng.normal(size=(2, 4, 3)))
        d = discrepancy(keys).d.data
        assert np.array_equal(d, d.swapaxes(1, 2)), "discrepancy not symmetric"

        pair = Tensor(rng.normal(size=(1, 3, 6, 4, 4)))
        s = pointwise_cosine(pair).data
        worst["cosine_bound"] = max(worst["cosine_bound"],
                                    float(np.abs(s).max()) - 1.0)
        scaled = pointwise_cosine(Tensor(pair.data * 3.7)).data
        worst["scale"] = max(worst["scale"], float(np.abs(scaled - s).max()))

        perm = rng.permutation(4)
        out = cme_forward(clip, p).data
        out_perm = cme_forward(Tensor(clip.data[:, perm]), p).data
        worst["perm"] = max(worst["perm"],
                            float(np.abs(out_perm - out[:, perm]).max()))

        szero = SmeParams.init(6, seed=seed)          # gamma = 0 at init
        v = sme_forward(pair, szero).data
        worst["sme_ident"] = max(worst["sme_ident"],
                                 float(np.abs(v - pair.data).max()))

        static = Tensor(np.broadcast_to(rng.normal(size=(1, 1, 6, 4, 4)),
                                        (1, 3, 6, 4, 4)).copy())
        srand = rand_sme(6, seed)
        srand.bn.beta.data[:] = 0.0
        vs = sme_forward(static, srand).data
        assert np.array_equal(vs, static.data), "static input not exact identity"

    elapsed = time.monotonic() - t0
    ok = (worst["softmax"] <= 1e-9 and worst["cosine_bound"] <= 1e-12
          and worst["scale"] <= 1e-9 and worst["perm"] <= 1e-9
          and worst["sme_ident"] <= 1e-15 and elapsed < 60.0)
    report(capsys, 1, ok,
           f"invariants over 100 seeds in {elapsed:.1f}s "
           f"(softmax {worst['softmax']:.1e}, scale {worst['scale']:.1e}, "
           f"perm {worst['perm']:.1e}, sme {worst['sme_ident']:.1e})")


def test_criterion_2_gradient_checks(capsys):
    t0 = time.monotonic()
    errs = {}
    rng = stream(53, 0)
    coeff = {s: Tensor(stream(53, 1, i).normal(size=s))
             for i, s in enumerate([(1, 4, 8, 5, 5), (1, 3, 6, 4, 4),
                                    (1, 4, 8, 5, 5), (1, 4, 8, 5, 5)])}

    x = Tensor(rng.normal(size=(1, 4, 8, 5, 5)), requires_grad=True)
    p = rand_cme(8, 2, 0)
    errs["cme_forward"] = grad_check(
        lambda t: sum_all(mul(cme_forward(t, p), coeff[(1, 4, 8, 5, 5)])), x)

    xs = Tensor(rng.normal(size=(1, 3, 6, 4, 4)), requires_grad=True)
    sp = rand_sme(6, 0)
    errs["sme_forward"] = grad_check(
        lambda t: sum_all(mul(sme_forward(t, sp), coeff[(1, 3, 6, 4, 4)])), xs)

    from cmr.tim import TimParams, tim_forward
    xt = Tensor(rng.normal(size=(1, 4, 8, 5, 5)), requires_grad=True)
    tp = TimParams.init(8)
    tp.wt.data[:] = rng.normal(scale=0.5, size=tp.wt.shape)
    errs["tim_forward"] = grad_check(
        lambda t: sum_all(mul(tim_forward(t, tp), coeff[(1, 4, 8, 5, 5)])), xt)

    net1 = build_network(NetworkConfig(stages=((1, 8),), input_channels=8,
                                       classes=2, r1=2, r2=2, frames=4,
                                       stem_stride=1), seed=2)
    blk = net1.stages[0][0]
    blk.cme.w3.data[:] = rng.normal(scale=0.5, size=blk.cme.w3.shape)
    blk.sme.bn.gamma.data[:] = rng.normal(scale=0.5, size=8)
    xb = Tensor(rng.normal(size=(1, 4, 8, 5, 5)), requires_grad=True)
    errs["block_b_forward"] = grad_check(
        lambda t: sum_all(mul(block_b_forward(t, blk), coeff[(1, 4, 8, 5, 5)])), xb)

    net = build_network(NetworkConfig(stages=((1, 8),), input_channels=8,
                                      classes=2, r1=2, r2=2, frames=2,
                                      stem_stride=1), seed=3)
    for blocks in net.stages:
        for b in blocks:
            b.cme.w3.data[:] = rng.normal(scale=0.5, size=b.cme.w3.shape)
            b.sme.bn.gamma.data[:] = rng.normal(scale=0.5, size=8)
    xn = Tensor(rng.normal(size=(1, 2, 8, 8, 8)), requires_grad=True)
    labels = Tensor(np.array([1.0]))
    errs["full_network"] = grad_check(
        lambda t: cross_entropy_loss(network_forward(t, net), labels), xn)

    elapsed = time.monotonic() - t0
    worst = max(errs.values())
    ok = worst < 1e-4 and elapsed < 300.0
    detail = ", ".join(f"{k} {v:.1e}" for k, v in errs.items())
    report(capsys, 2, ok, f"gradient checks in {elapsed:.0f}s: {detail}")


def test_criterion_3_oracle_equivalence(capsys):
    worst_cme = 0.0
    worst_sme = 0.0
    for seed in range(50):
        rng = stream(54, seed)
        x = Tensor(rng.normal(size=(2, 3, 4, 4, 4)))
        p = rand_cme(4, 2, 100 + seed)
        worst_cme = max(worst_cme, float(np.abs(
            cme_forward(x, p).data - cme_forward_naive(x, p)).max()))
        sp = rand_sme(4, 100 + seed)
        worst_sme = max(worst_sme, float(np.abs(
            sme_forward(x, sp).data - sme_forward_naive(x, sp)).max()))
    ok = worst_cme <= 1e-10 and worst_sme <= 1e-10
    report(capsys, 3, ok,
           f"vectorized vs scalar-loop oracles over 50 seeds "
           f"(cme {worst_cme:.1e}, sme {worst_sme:.1e})")


def test_criterion_4_neutralization(capsys):
    cfg = NetworkConfig()
    control_cfg = replace(cfg, cme_placement="none", sme_placement="none",
                          with_tim=False)
    full = build_network(cfg, seed=4)
    control = build_network(control_cfg, seed=5)
    transfer_parameters(full, control)
    neutralize(full)
    x = Tensor(stream(55, 0).normal(size=(2, 8, 1, 32, 32)))
    gap = float(np.abs(network_forward(x, full).data
                       - network_forward(x, control).data).max())
    ok = gap <= 1e-9
    report(capsys, 4, ok, f"neutralized logits match plain-2D control, gap {gap:.1e}")


@pytest.fixture(scope="session")
def ablation_matrix(tmp_path_factory):
    out = tmp_path_factory.mktemp("ablation")
    rows = run_ablation(TrainConfig(), SynthConfig(), out, seeds=(0, 1, 2))
    return out, rows


def test_criterion_5_desk_scale_learning(capsys, ablation_matrix):
    _, rows = ablation_matrix
    stats = {k: v["top1_mean"] for k, v in summarize_ablation(rows).items()}
    base, cme, sme = stats["baseline"], stats["+CME"], stats["+SME"]
    both = stats["+CME&SME"]
    checks = {
        "combined >= baseline+5pts": both >= base + 0.05,
        "cme >= baseline-1pt": cme >= base - 0.01,
        "sme >= baseline-1pt": sme >= base - 0.01,
        "combined >= max(single)-1pt": both >= max(cme, sme) - 0.01,
        "combined >= 0.80": both >= 0.80,
    }
    ok = all(checks.values())
    failed = [k for k, v in checks.items() if not v]
    detail = (f"mean top-1 baseline {base:.3f}, +CME {cme:.3f}, +SME {sme:.3f}, "
              f"+CME&SME {both:.3f}" + (f"; failed: {failed}" if failed else ""))
    report(capsys, 5, ok, detail)


def test_criterion_6_reduction_sweep(capsys, tmp_path):
    tcfg = TrainConfig(epochs=3)
    dcfg = SynthConfig(train_size=256, val_size=64)
    rows = run_reduction_sweep(tcfg, dcfg, tmp_path, rs=(1, 4, 8), seeds=(0,))
    macs = [r["total_macs"] for r in rows]
    table = (tmp_path / "reduction_sweep.csv").read_text()
    ok = (len(rows) == 3 and macs[0] > macs[1] > macs[2]
          and table.startswith("r,seed,top1,top5,total_macs,cme_macs"))
    report(capsys, 6, ok,
           "macs decrease over r=1,4,8: " + " > ".join(str(m) for m in macs))


def test_criterion_7_benchmark(capsys, tmp_path):
    t0 = time.monotonic()
    rep = benchmark(t_values=(4, 8, 16), batches=(1, 8),
                    out_csv=tmp_path / "bench.csv")
    elapsed = time.monotonic() - t0
    ok = len(rep.entries) == 7 * 3 * 2 and elapsed < 120.0
    for batch in (1, 8):
        meds = [rep.entry("cme_discrepancy", t, batch).median_ms for t in (4, 8, 16)]
        ok = ok and meds[0] < meds[1] < meds[2]
    report(capsys, 7, ok,
           f"bench report complete in {elapsed:.0f}s; discrepancy medians "
           f"batch1 {[round(rep.entry('cme_discrepancy', t, 1).median_ms, 3) for t in (4, 8, 16)]} ms")


def test_criterion_8_heatmap_localization(capsys, ablation_matrix):
    out, _ = ablation_matrix
    ckpt = out / "plus_cme_and_sme_s0" / "checkpoint.cmrt"
    dcfg = SynthConfig(seed=0, noise_sigma=0.0)
    index = dcfg.train_size  # first validation video
    net = load_network(ckpt)
    lc = generate_clip(dcfg, index)
    cap = capture_maps(net, lc.clip)

    mask = motion_mask(dcfg, index)
    t, h, w = mask.shape
    # The stride-2 stem halves feature maps; pool the pixel mask to match.
    pooled = mask.reshape(t, h // 2, 2, w // 2, 2).any(axis=(2, 4))

    sme_maps = cap["sme_weight"].data[0]
    sme_frac = mask_mass_fraction(sme_maps, pooled)

    feats = cap["block_input"].data[0]
    gates = cap["gate"].data[0]
    top, bot, _ = gate_group_maps(feats, gates)
    top_mass = float(top[pooled].sum())
    bot_mass = float(bot[pooled].sum())

    ok = sme_frac >= 0.60 and top_mass > bot_mass
    report(capsys, 8, ok,
           f"sme mass in motion mask {sme_frac:.2f} (need >= 0.60); "
           f"top-gated group mass {top_mass:.2f} > bottom {bot_mass:.2f}")


def test_criterion_9_determinism(capsys, tmp_path):
    dcfg = SynthConfig(train_size=32, val_size=16, frames=4, clip_len=8)
    tcfg = TrainConfig(epochs=2, batch_size=4, seed=7)
    ncfg = variant_network_config("+CME&SME", dcfg, stages=((1, 8),))
    texts = []
    evals = []
    for tag in ("a", "b"):
        _, ckpt = train(tcfg, ncfg, dcfg, tmp_path / tag)
        texts.append((tmp_path / tag / "metrics.csv").read_text())
        evaluate(ckpt, dcfg, clips_per_video=2, out_csv=tmp_path / tag / "eval.csv")
        evals.append((tmp_path / tag / "eval.csv").read_text())

    def strip(text):
        return [",".join(line.split(",")[:5]) for line in text.strip().split("\n")]

    ok = strip(texts[0]) == strip(texts[1]) and strip(evals[0]) == strip(evals[1])
    report(capsys, 9, ok,
           "repeated train+eval metrics CSVs byte-identical outside wall-clock column")

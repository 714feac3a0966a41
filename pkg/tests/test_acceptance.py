"""Acceptance suite: one test per criterion, each printing a PASS line.

Full-scale attack and quality numbers need real pretrained backbones
and datasets, so acceptance is property-based on seeded toy models,
plus protocol fidelity of the CLI, metrics and API client.
"""
import json
import math
import time

import numpy as np
import pytest
import torch

from faceveil.cli import main as cli_main
from faceveil.ddim import ddim_invert, ddim_sample
from faceveil.denoisers import TwoParamDenoiser, ZeroDenoiser
from faceveil.encoders import (
    EncoderBundle,
    ToyFaceEmbedder,
    ToyImageEncoder,
    ToyPerceptualExtractor,
    ToyTextEncoder,
    embed_image,
    face_embed,
)
from faceveil.losses import (
    LossWeights,
    ensemble_attack_loss,
    identity_loss,
    makeup_direction_loss,
    visual_loss,
)
from faceveil.metrics import (
    VerificationThreshold,
    attack_success_rate,
    calibrate_threshold,
    fid,
    psnr,
    ssim,
)
from faceveil.mock_server import MockCompareServer, ScriptedResponse, confidence_from_cosine
from faceveil.api import ConfidenceRangeError, FaceCompareClient
from faceveil.pipeline import FineTuneConfig, run_adversarial_transfer, run_makeup_removal
from faceveil.regions import RegionMasks, hm_image
from faceveil.schedule import NoiseSchedule, discretize, make_linear_schedule
from faceveil.synthetic import BACKGROUND, toy_dataset, toy_face

# frozen 2026-08: full-discretization round trip measured 3.02e-4 mean
# abs error on the seeded 10-image set; pinned with headroom
ROUND_TRIP_PIN = 4e-4


def report(n: int, text: str) -> None:
    print(f"\nACCEPTANCE {n}: PASS - {text}")


# --- 1. DDIM analytics ---------------------------------------------------------


def test_criterion_1_ddim_analytics(toy_sched, toy_images, trained_denoiser):
    started = time.monotonic()
    # zero-noise closed forms, arbitrary schedule, float64
    gen = torch.Generator().manual_seed(0)
    betas = torch.rand(150, generator=gen, dtype=torch.float64) * 0.05 + 1e-4
    sched = NoiseSchedule(betas=betas)
    ts = discretize(120, 7)
    x0 = torch.randn(3, 8, 8, generator=gen, dtype=torch.float64)
    zero = ZeroDenoiser()
    ab = sched.alpha_bar(120)
    inv_err = float((ddim_invert(x0, zero, sched, ts) - math.sqrt(ab) * x0).abs().max())
    sam_err = float((ddim_sample(x0, zero, sched, ts) - x0 / math.sqrt(ab)).abs().max())
    assert inv_err < 1e-6 and sam_err < 1e-6

    # round trip at full discretization on the trained toy denoiser
    full = discretize(60, 60)
    errors = {}
    with torch.no_grad():
        for s, ts_s in [(60, full), (6, discretize(60, 6)), (12, discretize(60, 12)),
                        (20, discretize(60, 20))]:
            errs = []
            for img in toy_images:
                rec = ddim_sample(
                    ddim_invert(img, trained_denoiser, toy_sched, ts_s),
                    trained_denoiser, toy_sched, ts_s,
                )
                errs.append(float((rec - img).abs().mean()))
            errors[s] = (sum(errs) / len(errs), sorted(errs)[len(errs) // 2])
    assert errors[60][0] <= ROUND_TRIP_PIN
    med = {s: m for s, (_, m) in errors.items()}
    assert med[6] > med[12] > med[20]

    elapsed = time.monotonic() - started
    assert elapsed < 60.0
    report(1, f"closed forms exact, round trip {errors[60][0]:.2e} <= {ROUND_TRIP_PIN}, "
              f"median err {med[6]:.2e} > {med[12]:.2e} > {med[20]:.2e} ({elapsed:.1f}s)")


# --- 2. gradient checks ----------------------------------------------------------


def _central_diff(fn, x, idx, h=1e-5):
    xp, xm = x.clone(), x.clone()
    xp[idx] += h
    xm[idx] -= h
    return (float(fn(xp)) - float(fn(xm))) / (2 * h)


def test_criterion_2_gradient_checks():
    started = time.monotonic()
    gen = torch.Generator().manual_seed(23)
    x = torch.randn(3, 8, 8, generator=gen, dtype=torch.float64)
    x_prime = x + 0.4 + 0.2 * torch.randn(3, 8, 8, generator=gen, dtype=torch.float64)
    y = 1.5 * torch.randn(3, 8, 8, generator=gen, dtype=torch.float64) + 3.0
    y_hat = torch.randn(3, 8, 8, generator=gen, dtype=torch.float64)
    masks = RegionMasks(torch.randint(1, 4, (8, 8), generator=gen))
    x_star = torch.randn(3, 8, 8, generator=gen, dtype=torch.float64)

    enc = ToyImageEncoder(size=24, seed=61).double()
    embs = [ToyFaceEmbedder(size=12, seed=s).double() for s in (71, 72, 73)]
    perc = ToyPerceptualExtractor(size=6, seed=81).double()
    ident = ToyFaceEmbedder(size=12, seed=91).double()
    hm_target = hm_image(x_prime, y, masks, masks).detach()

    losses = {
        "direction": lambda xp: makeup_direction_loss(x, xp, y, y_hat, enc),
        "pixel(hm fixed)": lambda xp: (xp - hm_target).abs().mean(),
        "ensemble": lambda xp: ensemble_attack_loss(xp, x_star, embs),
        "visual": lambda xp: visual_loss(xp, x, perc, lambda_l1=0.7),
        "identity": lambda xp: identity_loss(xp, x, ident),
    }
    indices = [(0, 0, 0), (1, 3, 4), (2, 7, 7), (0, 5, 2), (2, 1, 6)]
    for name, fn in losses.items():
        leaf = x_prime.clone().requires_grad_(True)
        fn(leaf).backward()
        for idx in indices:
            fd = _central_diff(fn, x_prime, idx)
            assert float(leaf.grad[idx]) == pytest.approx(fd, rel=1e-3, abs=1e-9), name

    # gradient through a 3-step sampling chain wrt a 2-parameter denoiser
    sched = make_linear_schedule(100)
    ts = discretize(30, 3)
    latent = torch.randn(3, 4, 4, generator=gen, dtype=torch.float64)

    def chain_loss(a, b):
        with torch.no_grad():
            return ((ddim_sample(latent, TwoParamDenoiser(a, b), sched, ts) - 0.1) ** 2).mean()

    den = TwoParamDenoiser(0.12, -0.05)
    ((ddim_sample(latent, den, sched, ts) - 0.1) ** 2).mean().backward()
    h = 1e-6
    fd_a = (float(chain_loss(0.12 + h, -0.05)) - float(chain_loss(0.12 - h, -0.05))) / (2 * h)
    fd_b = (float(chain_loss(0.12, -0.05 + h)) - float(chain_loss(0.12, -0.05 - h))) / (2 * h)
    assert float(den.a.grad) == pytest.approx(fd_a, rel=1e-3)
    assert float(den.b.grad) == pytest.approx(fd_b, rel=1e-3)

    elapsed = time.monotonic() - started
    assert elapsed < 60.0
    report(2, f"five losses + 3-step chain match finite differences at 1e-3 ({elapsed:.1f}s)")


# --- 3. histogram-matching oracle -------------------------------------------------


def _brute_force_match(src, ref):
    src = np.asarray(src, dtype=np.float64)
    ref_sorted = np.sort(np.asarray(ref, dtype=np.float64))
    n, m = len(src), len(ref_sorted)
    order = np.argsort(src, kind="stable")
    ranks = np.empty(n)
    ranks[order] = np.arange(n)
    pos = np.full(n, 0.5 * (m - 1)) if n == 1 else ranks / (n - 1) * (m - 1)
    return np.interp(pos, np.arange(m), ref_sorted)


def test_criterion_3_histogram_matching_oracle():
    rng = np.random.default_rng(3)
    checked_equal = checked_interp = 0
    for case in range(200):
        h, w = rng.integers(2, 7, size=2)
        labels_x = torch.from_numpy(rng.integers(0, 4, size=(h, w))).long()
        if case % 2 == 0:
            labels_y = labels_x.clone()  # equal-length regions: exact
        else:
            labels_y = torch.from_numpy(rng.integers(0, 4, size=(h, w))).long()
        x = torch.from_numpy(rng.uniform(-1, 1, size=(3, h, w)))
        y = torch.from_numpy(rng.uniform(-1, 1, size=(3, h, w)))
        import warnings

        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            got = hm_image(x, y, RegionMasks(labels_x), RegionMasks(labels_y))
        want = x.clone()
        for region in (1, 2, 3):
            sel_x = labels_x == region
            sel_y = labels_y == region
            if not bool(sel_x.any()) or not bool(sel_y.any()):
                continue
            for c in range(3):
                matched = _brute_force_match(x[c][sel_x].numpy(), y[c][sel_y].numpy())
                want[c][sel_x] = torch.from_numpy(matched)
            if int(sel_x.sum()) == int(sel_y.sum()):
                checked_equal += 1
            else:
                checked_interp += 1
        tol = 0.0 if torch.equal(labels_x, labels_y) else 1e-6
        assert float((got - want).abs().max()) <= max(tol, 1e-9)

    # identity and constant-reference cases, exact
    x = torch.from_numpy(rng.uniform(-1, 1, size=(3, 5, 5)))
    labels = torch.from_numpy(rng.integers(1, 4, size=(5, 5))).long()
    masks = RegionMasks(labels)
    assert torch.equal(hm_image(x, x, masks, masks), x)
    const = torch.full((3, 5, 5), 0.25, dtype=torch.float64)
    out = hm_image(x, const, masks, masks)
    assert torch.equal(out[:, labels > 0], const[:, labels > 0])
    report(3, f"200 random instances match the brute-force oracle "
              f"({checked_equal} equal-length regions exact, {checked_interp} interpolated)")


# --- 4. threshold / ASR protocol -----------------------------------------------


def test_criterion_4_threshold_and_asr():
    import warnings

    rng = np.random.default_rng(4)
    for trial in range(500):
        n = int(rng.integers(1, 120))
        scores = np.round(rng.uniform(-1, 1, size=n), 3)
        far = 0.01 if trial % 2 == 0 else 0.1
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            thr = calibrate_threshold(scores, far)
        candidates = [v for v in np.unique(scores) if np.sum(scores >= v) / n <= far]
        want = min(candidates) if candidates else scores.max() + 1e-9
        assert thr.tau == pytest.approx(want, abs=1e-12)
        assert np.sum(scores >= thr.tau) / n <= far

    emb = ToyFaceEmbedder(size=16, seed=44)
    gen = torch.Generator().manual_seed(44)
    target = torch.randn(3, 32, 32, generator=gen)
    imgs = [torch.randn(3, 32, 32, generator=gen) for _ in range(25)]
    asrs = [
        attack_success_rate(
            imgs, target, emb, VerificationThreshold(t, 0.01, 1)
        )[0]
        for t in np.linspace(-1, 1, 21)
    ]
    assert all(a >= b for a, b in zip(asrs, asrs[1:]))
    self_asr, _ = attack_success_rate(
        [target.clone()] * 4, target, emb, VerificationThreshold(0.99, 0.01, 100)
    )
    assert self_asr == 1.0
    report(4, "500 calibrations match brute-force counting at FAR 0.01/0.1; "
              "ASR monotone; self-target ASR 1.0")


# --- 5. metric correctness -------------------------------------------------------


def test_criterion_5_metric_correctness():
    gen = torch.Generator().manual_seed(5)
    a = torch.rand(3, 16, 16, generator=gen, dtype=torch.float64) * 2 - 1
    b = torch.rand(3, 16, 16, generator=gen, dtype=torch.float64) * 2 - 1
    assert psnr(a, a.clone()) == math.inf
    assert ssim(a, a.clone()) == pytest.approx(1.0)
    rng = np.random.default_rng(5)
    feats = rng.normal(size=(40, 4))
    assert fid(feats, feats.copy()) == pytest.approx(0.0, abs=1e-6)

    # closed-form Gaussian oracle (scipy general sqrtm as the analytic side)
    from scipy import linalg

    mu_a, mu_b = np.array([0.5, -1.0]), np.array([-0.25, 0.75])
    t_a = np.array([[1.0, 0.3], [0.0, 0.8]])
    t_b = np.array([[0.6, 0.0], [0.4, 1.2]])

    def exact_points(mu, t):
        dim = len(mu)
        c = math.sqrt((2 * dim - 1) / 2)
        zs = []
        for i in range(dim):
            e = np.zeros(dim)
            e[i] = c
            zs += [e, -e]
        return np.asarray(zs) @ t.T + mu

    pa, pb = exact_points(mu_a, t_a), exact_points(mu_b, t_b)
    cross = linalg.sqrtm((t_a @ t_a.T) @ (t_b @ t_b.T))
    if np.iscomplexobj(cross):
        cross = cross.real
    want = float(
        (mu_a - mu_b) @ (mu_a - mu_b)
        + np.trace(t_a @ t_a.T) + np.trace(t_b @ t_b.T) - 2 * np.trace(cross)
    )
    assert fid(pa, pb) == pytest.approx(want, abs=1e-4)

    assert psnr(a, b) == pytest.approx(psnr(b, a), abs=1e-6)
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-6)
    fa = rng.normal(size=(30, 5))
    fb = rng.normal(loc=0.2, size=(26, 5))
    assert fid(fa, fb) == pytest.approx(fid(fb, fa), abs=1e-6)
    report(5, "PSNR/SSIM/FID identities exact, FID matches the Gaussian oracle "
              "at 1e-4, all symmetric at 1e-6")


# --- 6 & 7. toy end-to-end transfer and reduced-t0 preservation ------------------


@pytest.fixture(scope="module")
def transfer_setup(toy_sched, toy_images, trained_denoiser):
    data = toy_dataset(10, size=32, seed=7)
    encs = EncoderBundle(
        image=ToyImageEncoder(size=48, seed=1),
        text=ToyTextEncoder(size=48),
        perceptual=ToyPerceptualExtractor(size=6, seed=2),
        identity=ToyFaceEmbedder(size=24, seed=3),
    )
    ref, ref_labels = toy_face(50, size=32, makeup=1.0, seed=5)
    stage1 = run_makeup_removal(
        [ref], trained_denoiser, encs,
        FineTuneConfig(t_full=250, t0=60, s_inv=10, s_sam=4, epochs=4, base_lr=5e-4),
    )
    target, _ = toy_face(300, size=32, seed=5)
    return {
        "encs": encs,
        "ref": ref,
        "ref_masks": RegionMasks(ref_labels),
        "ref_clean": stage1.outputs[0],
        "sources": toy_images[:6],
        "masks": [RegionMasks(lab) for _, lab in data[:6]],
        "labels": [lab for _, lab in data[:6]],
        "target": target,
        "ensemble": [ToyFaceEmbedder(size=64, seed=s) for s in (7, 8, 9)],
        "denoiser": trained_denoiser,
    }


def _acceptance_cfg(t0=60, epochs=6, direction=2.0):
    return FineTuneConfig(
        t_full=250, t0=t0, s_inv=10, s_sam=4, epochs=epochs, base_lr=5e-4,
        weights=LossWeights(
            makeup=1, direction=direction, pixel=0.1, attack=8.0, visual=0.25, l1=1
        ),
    )


def _mean_cos(images, emb, target):
    total = 0.0
    with torch.no_grad():
        et = face_embed(emb, target)
        et = et / et.norm()
        for img in images:
            e = face_embed(emb, img)
            total += float((e / e.norm() * et).sum())
    return total / len(images)


def _mean_alignment(setup, outputs):
    with torch.no_grad():
        enc = setup["encs"].image
        dref = embed_image(enc, setup["ref"]) - embed_image(enc, setup["ref_clean"])
        dref = dref / dref.norm()
        vals = []
        for x, xp in zip(setup["sources"], outputs):
            dx = embed_image(enc, xp) - embed_image(enc, x)
            vals.append(float((dx / dx.norm() * dref).sum()))
    return sum(vals) / len(vals)


def _run_transfer(setup, cfg, sources=None, masks=None):
    return run_adversarial_transfer(
        sources or setup["sources"], masks or setup["masks"], setup["ref"],
        setup["ref_clean"], setup["target"], setup["ensemble"], setup["denoiser"],
        setup["encs"], cfg, ref_masks=setup["ref_masks"],
    )


def test_criterion_6_toy_end_to_end_transfer(transfer_setup):
    started = time.monotonic()
    setup = transfer_setup
    holdout = ToyFaceEmbedder(size=64, seed=1234)
    baseline = _mean_cos(setup["sources"], holdout, setup["target"])

    art = _run_transfer(setup, _acceptance_cfg())
    n = len(setup["sources"])
    first = art.log[0]["total"]
    final = sum(rec["total"] for rec in art.log[-n:]) / n
    assert final <= 0.5 * first  # (a) objective halves from iteration 1

    transferred = _mean_cos(art.outputs, holdout, setup["target"])
    assert transferred > baseline  # (b) black-box transfer direction

    ablated = _run_transfer(setup, _acceptance_cfg(direction=0.0))
    align_with = _mean_alignment(setup, art.outputs)
    align_without = _mean_alignment(setup, ablated.outputs)
    assert align_without < align_with  # (c) direction loss drives alignment

    elapsed = time.monotonic() - started
    assert elapsed < 600.0
    report(6, f"objective {first:.3f}->{final:.3f} (x{final / first:.2f}), held-out cosine "
              f"{baseline:.4f}->{transferred:.4f}, alignment {align_with:.3f} vs "
              f"{align_without:.3f} ablated ({elapsed:.1f}s)")


def test_criterion_7_reduced_t0_preserves_background(transfer_setup):
    setup = transfer_setup
    mads = {}
    for t0 in (60, 100, 200):
        art = _run_transfer(
            setup, _acceptance_cfg(t0=t0, epochs=3),
            sources=setup["sources"][:3], masks=setup["masks"][:3],
        )
        vals = []
        for x, xp, lab in zip(setup["sources"][:3], art.outputs, setup["labels"][:3]):
            bg = lab == BACKGROUND
            vals.append(float((xp - x).abs().mean(dim=0)[bg].mean()))
        mads[t0] = sum(vals) / len(vals)
    assert mads[60] <= mads[100] <= mads[200]
    report(7, f"background deviation nondecreasing in t0: "
              f"{mads[60]:.4f} <= {mads[100]:.4f} <= {mads[200]:.4f}")


# --- 8. CLI determinism ----------------------------------------------------------


def _snapshot(out):
    return {
        str(p.relative_to(out)): p.read_bytes()
        for p in sorted(out.rglob("*"))
        if p.is_file()
    }


def test_criterion_8_cli_determinism(cli_workspace, monkeypatch):
    ws = cli_workspace
    with MockCompareServer(fixed_score=58.25) as srv:
        monkeypatch.setenv("FACECOMPARE_ENDPOINT", srv.endpoint)
        transfer_out = ws.root / "out" / "det_transfer"
        plans = [
            ("remove-makeup", ["--out", str(ws.root / "out" / "det_removal")]),
            ("transfer", ["--out", str(transfer_out)]),
            ("protect", ["--run-dir", str(transfer_out), "--out", str(ws.root / "out" / "det_protect")]),
            ("evaluate", ["--run-dir", str(transfer_out), "--out", str(ws.root / "out" / "det_eval")]),
            ("calibrate-threshold", ["--out", str(ws.root / "out" / "det_calib")]),
            ("compare-api", ["--run-dir", str(transfer_out), "--out", str(ws.root / "out" / "det_api")]),
        ]
        from pathlib import Path

        for command, extra in plans:
            argv = [command, "--config", ws.config, *extra]
            out_dir = Path(extra[extra.index("--out") + 1])
            assert cli_main(argv) == 0, command
            first = _snapshot(out_dir)
            assert cli_main(argv) == 0, command
            second = _snapshot(out_dir)
            assert first.keys() == second.keys(), command
            diffs = [k for k in first if first[k] != second[k]]
            assert not diffs, f"{command}: non-deterministic files {diffs}"
    report(8, "all six subcommands reproduce byte-identical manifests, logs and outputs")


# --- 9. API client ---------------------------------------------------------------


def test_criterion_9_api_client_behaviors():
    img_a, _ = toy_face(1, size=16, seed=0)
    img_b, _ = toy_face(2, size=16, seed=0)
    fast = dict(backoff_base=0.01, backoff_factor=2.0, timeout=5.0)

    with MockCompareServer(fixed_score=73.5) as srv:
        client = FaceCompareClient(srv.endpoint, rate_limit_rps=500.0, **fast)
        assert client.compare(img_a, img_b).confidence == 73.5
        srv.push_script(429, 429)
        srv.request_times.clear()
        assert client.compare(img_a, img_b).confidence == 73.5
        assert len(srv.request_times) == 3
        srv.push_script(ScriptedResponse(body=json.dumps({"confidence": 120.0}).encode()))
        with pytest.raises(ConfidenceRangeError):
            client.compare(img_a, img_b)

    rps = 40.0
    emb = ToyFaceEmbedder(size=16, seed=9)
    protected = [toy_face(i, size=16, seed=2)[0] for i in range(8)]
    target, _ = toy_face(50, size=16, seed=2)
    with MockCompareServer(embedder=emb) as srv:
        client = FaceCompareClient(srv.endpoint, rate_limit_rps=rps, **fast)
        results, summary = client.batch_compare(protected, target)
        gaps = np.diff(sorted(srv.request_times))
    assert all(g >= 1.0 / rps - 0.010 for g in gaps)

    from faceveil.data import decode_png, encode_png

    tgt = decode_png(encode_png(target))
    with torch.no_grad():
        et = face_embed(emb, tgt)
        want = []
        for img in protected:
            e = face_embed(emb, decode_png(encode_png(img)))
            want.append(confidence_from_cosine(float((e * et).sum() / (e.norm() * et.norm()))))
    got = [r.confidence for r in results]
    assert got == pytest.approx(want, abs=1e-9)
    assert summary["mean"] == pytest.approx(float(np.mean(want)), abs=1e-9)
    report(9, "retry, rate-limit and validation verified against the mock; "
              "batch summary equals local recomputation")

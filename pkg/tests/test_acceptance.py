"""End-to-end acceptance suite: one test per shipping criterion.

Every test prints a single "[criterion NN] PASS ..." or "[criterion NN]
FAIL ..." line on the real stdout, so the verdicts stay visible even under
pytest's output capture. Criteria 08-10 share one desk-scale training run
(a few minutes of data generation and training, then three ablation
retrainings), so the whole file takes roughly half an hour on CPU;
everything else finishes in seconds.

Thresholds marked "pilot-calibrated" were pinned from a calibration run of
the exact same desk recipe: held-out PSNR 30.5 dB against a 19.2 dB
region-mean baseline, and a worst-of-50 transfer region-color delta of
0.26 in [-1, 1] units.

Run: pytest tests/test_acceptance.py -v
"""

import functools
import hashlib
import math
import sys
import time
from types import SimpleNamespace

import numpy as np
import pytest
import torch

import oracles
from scam.attention import (SemanticCrossAttention, sca_latents_self,
                            sca_latents_to_pixels, sca_pixels_to_latents)
from scam.checkpoint import load_checkpoint, save_checkpoint
from scam.config import desk_model_config, desk_run_config
from scam.data import SyntheticSpec, generate_synthetic, load_split_tensors
from scam.encoder import EncoderConfig, SatEncoder, SatOperation
from scam.evaluate import REPORT_KEYS, evaluation_report, fixed_pairs
from scam.generator import GeneratorConfig, ScamGenerator, ScamOperation
from scam.losses import (LossWeights, hinge_discriminator_loss,
                         hinge_generator_loss, l1_loss, perceptual_loss,
                         total_generator_loss)
from scam.masks import duplicated_bits, group_bits
from scam.metrics import EmbeddingSet, frechet_distance, reid_accuracy
from scam.training import fit, init_state
from scam.transfer import MixPlan, reconstruct, subject_transfer

# Pilot-calibrated desk-scale thresholds.
PSNR_THRESHOLD_DB = 24.0
TRANSFER_DELTA = 0.28
TRANSFER_PAIRS = 50
TRANSFER_MIN_PASSING = 45  # 90% of the fixed pairs

ABLATIONS = (
    ("conv-free", dict(use_conv=False, encoder_channels=(16, 16, 16))),
    ("no-self-attention", dict(use_self_attention=False)),
    ("no-generator-sat", dict(use_latent_sat=False)),
)


def _emit(num: int, ok: bool, elapsed: float, detail: str):
    status = "PASS" if ok else "FAIL"
    line = f"[criterion {num:02d}] {status} ({elapsed:.1f}s) {detail}".rstrip()
    print(line, file=sys.__stdout__, flush=True)


def criterion(num: int, budget_seconds: float | None = None):
    """Emit exactly one pass/fail line per criterion, and enforce the
    stated runtime budget where one applies to the test body itself."""

    def decorate(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            start = time.time()
            try:
                detail = fn(*args, **kwargs) or ""
            except BaseException as exc:
                text = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
                _emit(num, False, time.time() - start, text)
                raise
            elapsed = time.time() - start
            if budget_seconds is not None and elapsed > budget_seconds:
                _emit(num, False, elapsed, f"{detail} [over {budget_seconds:.0f}s budget]")
                raise AssertionError(
                    f"criterion {num} took {elapsed:.1f}s, budget {budget_seconds:.0f}s")
            _emit(num, True, elapsed, detail)

        return wrapper

    return decorate


def _log(tag: str):
    return lambda line: print(f"[{tag}] {line}", file=sys.__stdout__, flush=True)


def _digest(state) -> str:
    h = hashlib.sha256()
    for module in (state.encoder, state.generator, state.discriminator):
        for key, value in sorted(module.state_dict().items()):
            h.update(key.encode())
            h.update(value.detach().cpu().numpy().tobytes())
    return h.hexdigest()


@pytest.fixture(scope="session")
def desk_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk-data")
    manifests = generate_synthetic(SyntheticSpec(), str(root))
    train_images, train_labels = load_split_tensors(manifests["train"])
    test_images, test_labels = load_split_tensors(manifests["test"])
    return SimpleNamespace(
        manifests=manifests,
        train_images=train_images, train_labels=train_labels,
        test_images=test_images, test_labels=test_labels)


@pytest.fixture(scope="session")
def desk_model(desk_data):
    cfg = desk_run_config()
    state = init_state(cfg.model, cfg.train)
    start = time.time()
    fit(state, desk_data.train_images, desk_data.train_labels, log=_log("desk"))
    train_seconds = time.time() - start
    report = evaluation_report(state, desk_data.manifests["train"],
                               desk_data.manifests["test"],
                               num_pairs=TRANSFER_PAIRS)
    return SimpleNamespace(state=state, cfg=cfg, report=report,
                           train_seconds=train_seconds)


@criterion(1, budget_seconds=30.0)
def test_criterion_01_attention_matches_subset_softmax_oracle():
    rng = np.random.default_rng(11)
    worst = 0.0
    for trial in range(200):
        n = int(rng.integers(1, 65))
        m = int(rng.integers(1, 25))
        d_pixels = int(rng.integers(1, 17))
        d_latents = int(rng.integers(1, 17))
        heads = int(rng.choice([1, 2, 4]))
        attn = heads * int(rng.integers(1, 5))
        value = heads * int(rng.integers(1, 5))
        if trial % 2 == 0:
            dq, dk, nq, nk = d_pixels, d_latents, n, m
        else:
            dq, dk, nq, nk = d_latents, d_pixels, m, n
        module = SemanticCrossAttention(dq, dk, attn, value_dim=value,
                                        num_heads=heads).double()
        mask = (rng.random((nq, nk)) < 0.5).astype(np.float64)
        if trial % 4 == 0:
            mask[int(rng.integers(0, nq))] = 0.0
        queries = rng.standard_normal((nq, dq))
        keys = rng.standard_normal((nk, dk))
        with torch.no_grad():
            got = module(torch.from_numpy(queries), torch.from_numpy(keys),
                         torch.from_numpy(mask)).numpy()
        want = oracles.subset_attention(
            queries, keys, mask,
            *(module.state_dict()[name].double().numpy() for name in
              ("query_proj.weight", "query_proj.bias", "key_proj.weight",
               "key_proj.bias", "value_proj.weight", "value_proj.bias")),
            num_heads=heads, attn_dim=attn)
        worst = max(worst, float(np.abs(got - want).max()))
    assert worst < 1e-6, f"max |module - oracle| = {worst:.2e}"
    return f"200 randomized instances, max |diff| {worst:.2e}"


@criterion(2, budget_seconds=30.0)
def test_criterion_02_masked_pairs_get_exactly_zero_weight():
    torch.manual_seed(2)
    rng = np.random.default_rng(2)
    leaked = 0
    pairs_checked = 0
    for trial in range(50):
        num_labels = int(rng.integers(2, 5))
        per_label = int(rng.integers(1, 4))
        h = int(rng.integers(2, 7))
        w = int(rng.integers(2, 7))
        labels = torch.from_numpy(rng.integers(0, num_labels, size=(h, w)))
        if trial % 5 == 0:
            labels[labels == num_labels - 1] = 0  # leave a label unused
        bits = duplicated_bits(labels, num_labels, per_label)
        group = group_bits(num_labels, per_label)
        m = num_labels * per_label
        pixels = torch.randn(h * w, 6)
        latents = torch.randn(m, 8)
        p2l = SemanticCrossAttention(6, 8, 8, num_heads=2)
        l2p = SemanticCrossAttention(8, 6, 8, num_heads=2)
        grp = SemanticCrossAttention(8, 8, 8, num_heads=2)
        _, rec1 = sca_pixels_to_latents(p2l, pixels, latents, bits, capture=True)
        _, rec2 = sca_latents_to_pixels(l2p, latents, pixels, bits, capture=True)
        _, rec3 = sca_latents_self(grp, latents, group, capture=True)
        for rec, mask in ((rec1, bits), (rec2, bits.transpose(0, 1)), (rec3, group)):
            off = rec.weights * (1.0 - mask)
            leaked += int(torch.count_nonzero(off))
            pairs_checked += int((1.0 - mask).sum())
    assert leaked == 0, f"{leaked} masked pairs received weight"
    return f"50 passes x 3 orientations, {pairs_checked} masked pairs, 0 leaked"


@criterion(3, budget_seconds=60.0)
def test_criterion_03_conv_free_encoder_isolates_label_regions():
    rng = np.random.default_rng(3)
    for trial in range(20):
        num_labels = int(rng.integers(2, 5))
        per_label = int(rng.integers(1, 3))
        blocks = int(rng.integers(1, 3))
        width = int(rng.choice([8, 16]))
        side = int(rng.choice([6, 8, 10]))
        cfg = EncoderConfig(num_labels=num_labels, latents_per_label=per_label,
                            latent_dim=width, num_blocks=blocks,
                            conv_channels=(width,) * blocks, use_conv=False,
                            attn_dim=width, num_heads=2)
        torch.manual_seed(100 + trial)
        encoder = SatEncoder(cfg)
        labels = torch.from_numpy(rng.integers(0, num_labels, size=(1, side, side)))
        target = int(rng.integers(0, num_labels))
        region = labels[0] == target
        if not bool(region.any()):
            labels[0, 0, 0] = target
            region = labels[0] == target
        images = torch.randn(1, 3, side, side)
        bumped = images.clone()
        bumped[0, :, region] += torch.randn(3, int(region.sum()))
        with torch.no_grad():
            base = encoder(images, labels)
            moved = encoder(bumped, labels)
        for lb in range(num_labels):
            rows = slice(lb * per_label, (lb + 1) * per_label)
            diff = float((base[0, rows] - moved[0, rows]).abs().max())
            if lb == target:
                assert diff > 0.0, "perturbed label's latents did not react"
            else:
                assert diff < 1e-6, f"label {lb} latents drifted by {diff:.2e}"
    return "20 randomized conv-free cases, zero cross-label drift"


@criterion(4, budget_seconds=120.0)
def test_criterion_04_gradients_match_central_differences():
    rng = np.random.default_rng(4)
    torch.manual_seed(4)
    summaries = []

    def check(name, module, inputs, run):
        params = list(module.parameters()) + inputs
        for p in params:
            p.requires_grad_(True)
        loss = run()
        module.zero_grad()
        for p in inputs:
            p.grad = None
        loss.backward()
        analytic = [p.grad.detach().numpy().copy() for p in params]
        with torch.no_grad():
            numeric = oracles.central_difference_gradients(run, params)
        # floor=1e-3: a softmax row is invariant to a uniform shift of its
        # live logits, so the key bias has an exactly-zero true gradient;
        # central differences return rounding noise (~1e-10) there, which a
        # tighter floor would misread as a large relative error.
        worst = max(oracles.relative_error(a, n, floor=1e-3)
                    for a, n in zip(analytic, numeric))
        assert worst < 1e-4, f"{name}: worst relative error {worst:.2e}"
        summaries.append(f"{name} {worst:.1e}")

    queries = torch.randn(5, 3, dtype=torch.float64)
    keys = torch.randn(6, 4, dtype=torch.float64)
    mask = torch.from_numpy((rng.random((5, 6)) < 0.6).astype(np.float64))
    mask[2] = 0.0  # include a fully-masked query row
    attn = SemanticCrossAttention(3, 4, 4, value_dim=4, num_heads=2).double()
    attn_proj = torch.randn(5, 4, dtype=torch.float64)
    check("sca", attn, [queries, keys],
          lambda: (attn(queries, keys, mask) * attn_proj).sum())

    primary = torch.randn(5, 4, dtype=torch.float64)
    context = torch.randn(6, 3, dtype=torch.float64)
    sat_mask = torch.from_numpy((rng.random((5, 6)) < 0.6).astype(np.float64))
    sat = SatOperation(4, 3, 4, num_heads=2).double()
    sat_proj = torch.randn(5, 4, dtype=torch.float64)
    check("sat_operation", sat, [primary, context],
          lambda: (sat(primary, context, sat_mask) * sat_proj).sum())

    gcfg = GeneratorConfig(num_labels=2, latents_per_label=2, latent_dim=4,
                           num_blocks=1, base_resolution=3, channels=(4,),
                           attn_dim=4, num_heads=2)
    op = ScamOperation(gcfg, 4, 4).double()
    with torch.no_grad():
        op.noise_weight.fill_(0.35)
    features = torch.randn(1, 4, 3, 3, dtype=torch.float64)
    latents = torch.randn(1, 4, 4, dtype=torch.float64)
    labels = torch.from_numpy(rng.integers(0, 2, size=(1, 3, 3)))
    bits = duplicated_bits(labels, 2, 2, dtype=torch.float64)
    feat_proj = torch.randn(1, 4, 3, 3, dtype=torch.float64)
    lat_proj = torch.randn(1, 4, 4, dtype=torch.float64)

    def run_scam():
        gen = torch.Generator().manual_seed(40)  # same noise draw every call
        out, zs = op(features, latents, bits, noise_generator=gen)
        return (out * feat_proj).sum() + (zs * lat_proj).sum()

    check("scam_operation", op, [features, latents], run_scam)
    return "; ".join(summaries)


@criterion(5, budget_seconds=10.0)
def test_criterion_05_latent_count_changes_only_query_rows():
    def total_params(latents_per_label: int) -> int:
        cfg = desk_model_config()
        cfg.latents_per_label = latents_per_label
        encoder = SatEncoder(cfg.encoder_config())
        generator = ScamGenerator(cfg.generator_config())
        return (sum(p.numel() for p in encoder.parameters())
                + sum(p.numel() for p in generator.parameters()))

    small, big = total_params(4), total_params(8)
    cfg = desk_model_config()
    expected = (8 - 4) * cfg.num_labels * cfg.latent_dim
    assert big - small == expected, f"param delta {big - small} != {expected}"
    return f"params(k=8) - params(k=4) = {big - small} == 4*s*d = {expected}"


@criterion(6, budget_seconds=5.0)
def test_criterion_06_loss_arithmetic_matches_worked_examples():
    t = torch.tensor
    assert float(hinge_discriminator_loss(t([2.0]), t([-2.0]))) == 0.0
    assert float(hinge_discriminator_loss(t([0.0]), t([0.0]))) == 2.0
    assert float(hinge_discriminator_loss(t([0.5]), t([-0.25]))) == 1.25
    satisfied = hinge_discriminator_loss(t([1.0, 2.5, 1.0]), t([-1.0, -3.0, -1.5]))
    assert float(satisfied) == 0.0

    assert float(hinge_generator_loss(t([1.0, 1.0]))) == -1.0
    assert float(hinge_generator_loss(t([0.0]))) == 0.0
    scores = torch.zeros(4, requires_grad=True)
    hinge_generator_loss(scores).backward()
    assert torch.equal(scores.grad, torch.full((4,), -0.25))

    x = torch.rand(2, 3, 4, 4)
    assert float(l1_loss(x, x)) == 0.0
    assert float(l1_loss(torch.zeros(5), torch.full((5,), 0.5))) == 0.5

    taps = lambda img: [img]  # identity extractor with a single tap
    assert float(perceptual_loss(x, x, taps)) == 0.0
    assert float(perceptual_loss(torch.zeros(1, 2, 2), torch.ones(1, 2, 2), taps)) == 1.0

    assert float(total_generator_loss(t(1.0), t(0.1), t(0.2))) == 4.0
    gan_only = total_generator_loss(t(-0.5), t(9.9), t(3.3), LossWeights(0.0, 0.0))
    assert float(gan_only) == -0.5
    return "hinge/l1/perceptual/total worked examples reproduced exactly"


@criterion(7, budget_seconds=60.0)
def test_criterion_07_distribution_and_identity_metrics_behave():
    rng = np.random.default_rng(7)
    vecs = rng.standard_normal((200, 16))
    self_distance = frechet_distance(EmbeddingSet(vecs), EmbeddingSet(vecs.copy()))
    assert self_distance < 1e-6

    mc_rng = np.random.default_rng(3)
    n = 10_000
    mu_a, sd_a = 0.0, 1.0
    mu_b, sd_b = 1.0, 2.0
    mc = frechet_distance(
        EmbeddingSet(mc_rng.normal(mu_a, sd_a, size=(n, 1))),
        EmbeddingSet(mc_rng.normal(mu_b, sd_b, size=(n, 1))))
    want = oracles.gaussian_frechet_1d(mu_a, sd_a ** 2, mu_b, sd_b ** 2)
    assert abs(mc - want) < 0.05, f"MC {mc:.4f} vs closed form {want:.4f}"

    base = rng.standard_normal((40, 8))
    other = rng.standard_normal((40, 8))
    subject = EmbeddingSet(base)
    background = EmbeddingSet(other)
    assert reid_accuracy(subject, background, EmbeddingSet(base.copy())) == 1.0
    assert reid_accuracy(subject, background, EmbeddingSet(other.copy())) == 0.0
    return (f"self-FD {self_distance:.1e}; 1-D MC |{mc:.3f} - {want:.3f}| < 0.05; "
            "degenerate reid accuracy exact")


@criterion(8)
def test_criterion_08_desk_training_beats_region_mean_baseline(desk_data, desk_model):
    cfg = desk_model.cfg
    assert cfg.train.steps <= 5000
    assert cfg.train.batch_size == 8
    assert desk_model.train_seconds <= 3 * 3600, "CPU budget exceeded"
    report = desk_model.report
    assert report["num_test"] == 200
    assert report["psnr"] > report["baseline_psnr"], (
        f"psnr {report['psnr']:.2f} did not beat baseline {report['baseline_psnr']:.2f}")
    assert report["psnr"] >= PSNR_THRESHOLD_DB, (
        f"psnr {report['psnr']:.2f} below pilot threshold {PSNR_THRESHOLD_DB}")
    return (f"held-out psnr {report['psnr']:.2f} dB >= {PSNR_THRESHOLD_DB} dB and "
            f"> baseline {report['baseline_psnr']:.2f} dB "
            f"({cfg.train.steps} steps in {desk_model.train_seconds:.0f}s)")


@criterion(9)
def test_criterion_09_subject_transfer_preserves_region_colors(desk_data, desk_model):
    state = desk_model.state
    images, labels = desk_data.test_images, desk_data.test_labels
    num_labels = state.model_config.num_labels
    pairs = fixed_pairs(images.shape[0], TRANSFER_PAIRS)
    passing = 0
    worst = 0.0
    for subject_idx, background_idx in pairs:
        out = subject_transfer(state, images[subject_idx], labels[subject_idx],
                               images[background_idx], labels[background_idx])
        pose = labels[background_idx]
        bg = pose == 0
        delta = float((out[:, bg].mean(dim=1)
                       - images[background_idx][:, bg].mean(dim=1)).abs().max())
        for lb in range(1, num_labels):
            pose_region = pose == lb
            source_region = labels[subject_idx] == lb
            if not bool(pose_region.any()) or not bool(source_region.any()):
                continue
            diff = (out[:, pose_region].mean(dim=1)
                    - images[subject_idx][:, source_region].mean(dim=1)).abs().max()
            delta = max(delta, float(diff))
        worst = max(worst, delta)
        if delta <= TRANSFER_DELTA:
            passing += 1

    # Degenerate plans must collapse to plain reconstruction, bit for bit.
    si, bi = pairs[0]
    all_subject = MixPlan({lb: "subject" for lb in range(num_labels)}, num_labels)
    same_subject = subject_transfer(state, images[si], labels[si],
                                    images[bi], labels[bi],
                                    pose_labels=labels[si], plan=all_subject)
    assert torch.equal(same_subject, reconstruct(state, images[si], labels[si]))
    all_background = MixPlan({lb: "background" for lb in range(num_labels)}, num_labels)
    same_background = subject_transfer(state, images[si], labels[si],
                                       images[bi], labels[bi], plan=all_background)
    assert torch.equal(same_background, reconstruct(state, images[bi], labels[bi]))

    assert passing >= TRANSFER_MIN_PASSING, (
        f"only {passing}/{TRANSFER_PAIRS} pairs within {TRANSFER_DELTA}")
    return (f"{passing}/{TRANSFER_PAIRS} pairs within delta {TRANSFER_DELTA} "
            f"(worst {worst:.3f}); degenerate mixes bit-match reconstruction")


@criterion(10)
def test_criterion_10_ablations_train_and_report(desk_data, desk_model):
    reports = {}
    for name, tweaks in ABLATIONS:
        cfg = desk_run_config()
        for key, value in tweaks.items():
            setattr(cfg.model, key, value)
        cfg.model.validate()
        state = init_state(cfg.model, cfg.train)
        fit(state, desk_data.train_images, desk_data.train_labels,
            log=_log(f"ablation {name}"))
        report = evaluation_report(state, desk_data.manifests["train"],
                                   desk_data.manifests["test"],
                                   num_pairs=TRANSFER_PAIRS)
        assert tuple(report) == REPORT_KEYS, f"{name}: report schema mismatch"
        bad = [key for key in REPORT_KEYS if not math.isfinite(float(report[key]))]
        assert not bad, f"{name}: non-finite report values {bad}"
        reports[name] = report
    conv_free_rfid = reports["conv-free"]["r_fid"]
    full_rfid = desk_model.report["r_fid"]
    direction = "holds" if conv_free_rfid > full_rfid else "does not hold"
    return (f"3 ablations trained and reported; non-gating direction check "
            f"(conv-free r_fid {conv_free_rfid:.4f} vs full {full_rfid:.4f}): "
            f"{direction}")


@criterion(11, budget_seconds=300.0)
def test_criterion_11_training_reproducible_and_resumable(desk_data, tmp_path):
    cfg = desk_run_config()
    cfg.train.log_every = 1000
    cfg.train.checkpoint_every = 0
    images, labels = desk_data.train_images, desk_data.train_labels

    run_a = init_state(cfg.model, cfg.train)
    history_a = fit(run_a, images, labels, steps=60)
    run_b = init_state(cfg.model, cfg.train)
    history_b = fit(run_b, images, labels, steps=60)
    assert history_a == history_b, "fixed-seed loss curves diverged"
    assert _digest(run_a) == _digest(run_b), "fixed-seed weights diverged"

    path = str(tmp_path / "resume.ckpt")
    save_checkpoint(run_a, path)
    resumed = load_checkpoint(path)
    fit(resumed, images, labels, steps=61)
    fit(run_b, images, labels, steps=61)
    assert _digest(resumed) == _digest(run_b), "resumed step is not bit-exact"
    return "two 60-step runs identical; checkpointed 1-step resume bit-exact"

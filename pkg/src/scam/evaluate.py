"""Standard evaluation report over a trained model and a dataset.

One fixed schema for every variant (full model and ablations alike):
reconstruction quality on the test split, distribution distances against
reference sets, and re-identification scores over a deterministic list of
subject/background pairs.
"""

from __future__ import annotations

import torch

from .data import DatasetManifest, load_split_tensors
from .metrics import (RandomConvEmbedder, embed_images, psnr, reconstruction_fid,
                      region_mean_baseline, reid_accuracy, reid_similarity,
                      transfer_fid)
from .transfer import MixPlan, reconstruct, subject_transfer

REPORT_KEYS = ("psnr", "baseline_psnr", "r_fid", "s_fid",
               "reid_sim", "reid_acc", "num_test", "num_pairs")


def fixed_pairs(count: int, num_pairs: int) -> list:
    """Deterministic (subject, background) index pairs over a test split."""
    if count < 2:
        raise ValueError("need at least 2 test items to form pairs")
    offset = max(count // 2, 1)
    return [(i % count, (i + offset) % count) for i in range(num_pairs)]


def reconstruct_split(state, images: torch.Tensor, labels: torch.Tensor,
                      batch_size: int = 32) -> torch.Tensor:
    outs = []
    for start in range(0, images.shape[0], batch_size):
        outs.append(reconstruct(state, images[start:start + batch_size],
                                labels[start:start + batch_size]))
    return torch.cat(outs, dim=0)


def evaluation_report(state, train_manifest: DatasetManifest,
                      test_manifest: DatasetManifest, embedder=None,
                      num_pairs: int = 50, batch_size: int = 32,
                      background_labels=(0,)) -> dict:
    """-> dict with REPORT_KEYS. Deterministic for a fixed state and data."""
    embedder = embedder or RandomConvEmbedder()
    train_images, _ = load_split_tensors(train_manifest)
    test_images, test_labels = load_split_tensors(test_manifest)

    recon = reconstruct_split(state, test_images, test_labels, batch_size)
    psnr_values = [psnr(test_images[i], recon[i]) for i in range(test_images.shape[0])]
    baseline_values = [
        psnr(test_images[i], region_mean_baseline(test_images[i], test_labels[i]))
        for i in range(test_images.shape[0])
    ]

    ref_train = embed_images(train_images, embedder, source="train")
    emb_recon = embed_images(recon, embedder, source="reconstruction")
    r_fid = reconstruction_fid(ref_train, emb_recon)

    pairs = fixed_pairs(test_images.shape[0], num_pairs)
    plan = MixPlan.default(state.model_config.num_labels, background_labels)
    transfers = []
    for subj, bg in pairs:
        transfers.append(subject_transfer(
            state, test_images[subj], test_labels[subj],
            test_images[bg], test_labels[bg], plan=plan))
    transfers = torch.stack(transfers)

    ref_test = embed_images(test_images, embedder, source="test")
    emb_transfer = embed_images(transfers, embedder, source="transfer")
    s_fid = transfer_fid(ref_test, emb_transfer)

    subj_idx = torch.tensor([p[0] for p in pairs])
    bg_idx = torch.tensor([p[1] for p in pairs])
    emb_subjects = embed_images(test_images[subj_idx], embedder, source="subjects")
    emb_backgrounds = embed_images(test_images[bg_idx], embedder, source="backgrounds")
    sim = reid_similarity(emb_subjects, emb_transfer)
    acc = reid_accuracy(emb_subjects, emb_backgrounds, emb_transfer)

    return {
        "psnr": float(sum(psnr_values) / len(psnr_values)),
        "baseline_psnr": float(sum(baseline_values) / len(baseline_values)),
        "r_fid": float(r_fid),
        "s_fid": float(s_fid),
        "reid_sim": float(sim),
        "reid_acc": float(acc),
        "num_test": int(test_images.shape[0]),
        "num_pairs": int(len(pairs)),
    }


def format_report(report: dict) -> str:
    lines = [f"{key}={report[key]}" for key in REPORT_KEYS]
    return "\n".join(lines)

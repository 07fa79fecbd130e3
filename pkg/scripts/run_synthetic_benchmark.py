#!/usr/bin/env python
"""
Desk-scale synthetic benchmarks for both upsamplers

Implicit: one 112x112 image, 8 channels, 10 jittered views, 1000 steps.
JBU: a 20-image corpus trained for 300 steps, scored on 5 held-out images.
"""

import argparse
import json
from pathlib import Path

from featup.schemas.training import TrainConfig
from featup.services.synthetic import make_synthetic_sample
from featup.services.tensor_core import mean_cosine_similarity, resize_bilinear
from featup.services.trainer import (
    CorpusItem,
    InMemoryViewProvider,
    evaluate_reconstruction,
    train_implicit,
    train_jbu,
    upsample,
)
from featup.storage.checkpoint import save_checkpoint


def run_implicit(seed, out_dir):
    """Fit one image and compare against bilinear upsampling"""
    sample = make_synthetic_sample(seed, hi_res=112, channels=8, num_views=10)
    cfg = TrainConfig.implicit(steps=1000, kernel_size=15, seed=seed)
    checkpoint = train_implicit(sample.image, InMemoryViewProvider(sample.views), cfg)
    save_checkpoint(checkpoint, out_dir / "implicit.ckpt")

    size = sample.image.shape[-1]
    recovered = upsample(checkpoint, sample.image, None, size, size)
    baseline = resize_bilinear(sample.features, size, size)
    trace = checkpoint.loss_trace[:, 1]
    return {
        "cosine_implicit": mean_cosine_similarity(recovered, sample.ground_truth),
        "cosine_bilinear": mean_cosine_similarity(baseline, sample.ground_truth),
        "initial_loss": float(trace[0]),
        "final_loss": float(trace[-1]),
    }


def _corpus(seed, count, size):
    items = []
    for index in range(count):
        sample = make_synthetic_sample(seed * 1000 + index, hi_res=size, channels=8, num_views=4, max_zoom=2.0)
        items.append(CorpusItem(sample.image, sample.features, InMemoryViewProvider(sample.views)))
    return items


def run_jbu(seed, out_dir):
    """Train on 20 images and score held-out reconstruction against bilinear"""
    train = _corpus(seed, 20, 64)
    held_out = _corpus(seed + 1, 5, 64)
    cfg = TrainConfig.jbu(steps=300, seed=seed)
    checkpoint = train_jbu(train, cfg)
    save_checkpoint(checkpoint, out_dir / "jbu.ckpt")
    report = evaluate_reconstruction(checkpoint, held_out, seed=seed)
    return report.model_dump()


def main():
    """Run both benchmarks and write a JSON summary"""
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="benchmark_results")
    args = parser.parse_args()

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    print("="*60)
    print("Synthetic Upsampling Benchmarks")
    print("="*60)

    print("\n1. Implicit upsampler...")
    implicit = run_implicit(args.seed, out_dir)
    gain = implicit["cosine_implicit"] - implicit["cosine_bilinear"]
    print(f"   ✓ Cosine similarity: {implicit['cosine_implicit']:.4f} (bilinear {implicit['cosine_bilinear']:.4f}, gain {gain:+.4f})")
    print(f"   ✓ Loss: {implicit['initial_loss']:.4f} -> {implicit['final_loss']:.4f}")

    print("\n2. JBU stack...")
    jbu = run_jbu(args.seed, out_dir)
    print(f"   ✓ Held-out loss: {jbu['jbu_loss']:.4f} (bilinear {jbu['bilinear_loss']:.4f})")

    summary_path = out_dir / "summary.json"
    with open(summary_path, "w") as f:
        json.dump({"implicit": implicit, "jbu": jbu}, f, indent=2)

    print("\n" + "="*60)
    print("Acceptance")
    print("="*60)
    print(f"  Implicit cosine gain >= 0.05: {gain >= 0.05}")
    print(f"  Implicit loss ratio < 0.2: {implicit['final_loss'] < 0.2 * implicit['initial_loss']}")
    print(f"  JBU beats bilinear: {jbu['jbu_loss'] < jbu['bilinear_loss']}")
    print(f"\nSummary saved to: {summary_path}")


if __name__ == "__main__":
    main()

"""Text-guided makeup removal (stage 1).

A made-up reference face is inverted to its latent once with the frozen
denoiser, then a trainable copy is fine-tuned so the sampled
reconstruction moves along the text direction "face with makeup" ->
"face without makeup" while identity and perceptual terms hold the rest
of the face still. The resulting (reference, clean) pair defines the
makeup direction that stage 2 reuses.

Writes before/after PNGs under demos/output/.
"""
from pathlib import Path

import torch

from faceveil.data import save_image
from faceveil.denoisers import TinyConvDenoiser, pretrain_denoiser
from faceveil.encoders import (
    EncoderBundle,
    ToyFaceEmbedder,
    ToyImageEncoder,
    ToyPerceptualExtractor,
    ToyTextEncoder,
)
from faceveil.pipeline import FineTuneConfig, run_makeup_removal
from faceveil.schedule import make_linear_schedule
from faceveil.synthetic import toy_dataset, toy_face

torch.set_num_threads(1)
out = Path(__file__).parent / "output"
out.mkdir(exist_ok=True)

images = [img for img, _ in toy_dataset(10, size=32, seed=7)]
sched_cfg = dict(t_full=250, t0=60, s_inv=10, s_sam=4)
den = TinyConvDenoiser(hidden=8, t_full=250, seed=0)
pretrain_denoiser(den, images, make_linear_schedule(250), steps=400, lr=2e-3, seed=0)

encs = EncoderBundle(
    image=ToyImageEncoder(size=48, seed=1),
    text=ToyTextEncoder(size=48),
    perceptual=ToyPerceptualExtractor(size=6, seed=2),
    identity=ToyFaceEmbedder(size=24, seed=3),
)

ref, _ = toy_face(50, size=32, makeup=1.0, seed=5)
cfg = FineTuneConfig(**sched_cfg, epochs=6, base_lr=5e-4)
print(f"prompts: {cfg.prompt_makeup!r} -> {cfg.prompt_clean!r}")

art = run_makeup_removal([ref], den, encs, cfg)
print("\nper-iteration objective (weighted):")
for rec in art.log:
    print(f"  iter {rec['iter']}: total {rec['total']:.3f}  "
          f"(removal {rec['removal']:.3f}, identity {rec['identity']:.3f}, "
          f"perceptual {rec['perceptual']:.4f})")

y, y_hat = art.pairs[0]
save_image(y, out / "reference_makeup.png")
save_image(y_hat, out / "reference_clean.png")
delta = art.reference_directions[0]
print(f"\ncached makeup direction: dim {delta.shape[0]}, norm {float(delta.norm()):.3f}")
print(f"lip-region pixel shift (red channel): "
      f"{float((y - y_hat)[0].abs().mean()):.4f}")
print(f"wrote {out / 'reference_makeup.png'} and {out / 'reference_clean.png'}")

"""End-to-end workflow through the CLI.

Materializes a toy dataset and a config file, then chains the
subcommands the way a real experiment would run:

    transfer -> evaluate -> compare-api (against the mock service)

plus the ablation variant (--lambda-dir 0). Every run directory holds
an effective.cfg that reproduces it exactly when fed back to --config.
"""
import json
import os
from pathlib import Path

from faceveil.cli import main
from faceveil.mock_server import MockCompareServer
from faceveil.data import save_image
from faceveil.synthetic import toy_face, write_toy_dataset

root = Path(__file__).parent / "output" / "cli"
root.mkdir(parents=True, exist_ok=True)

write_toy_dataset(root / "train", 3, size=24, seed=7)
write_toy_dataset(root / "style", 1, size=24, makeup=1.0, seed=7, first_identity=200)
write_toy_dataset(root / "impostors", 5, photos_per_identity=2, size=24, seed=7,
                  first_identity=100)
# the mask lookup dir serves sources and reference alike
style_mask = root / "style" / "masks" / "face200_v0.mask.png"
(root / "train" / "masks" / "face200_v0.mask.png").write_bytes(style_mask.read_bytes())
target, _ = toy_face(300, size=24, seed=7)
save_image(target, root / "target.png")

config = root / "experiment.cfg"
config.write_text(f"""\
[dataset]
sources_dir = {root}/train/images
masks_dir = {root}/train/masks
reference = {root}/style/images/face200_v0.png
target = {root}/target.png
impostor_dir = {root}/impostors

[models]
face_embedders = toy-face-24#a, toy-face-24#b, toy-face-24#c
eval_embedder = toy-face-24#holdout
identity_embedder = toy-face-24#id
image_encoder = toy-image-48
text_encoder = toy-text-48
perceptual = toy-perc-6
feature_extractor = toy-image-48
pretrain_steps = 60

[finetune]
t_full = 120
t0 = 30
s_inv = 5
s_sam = 3
epochs = 2
base_lr = 0.0005

[run]
seed = 7
far = 0.1
out_dir = {root}/runs/transfer
""")

print("== transfer")
assert main(["transfer", "--config", str(config)]) == 0

print("== transfer, direction-loss ablation")
assert main(["transfer", "--config", str(config), "--lambda-dir", "0",
             "--out", str(root / "runs" / "ablation")]) == 0

print("== evaluate")
assert main(["evaluate", "--config", str(config),
             "--run-dir", str(root / "runs" / "transfer"),
             "--out", str(root / "runs" / "eval")]) == 0
report = json.loads((root / "runs" / "eval" / "report.json").read_text())
print(f"   tau {report['tau']:.4f} @ FAR {report['far']}, ASR {report['asr']:.2f}, "
      f"PSNR {report['psnr_mean']:.1f} dB, SSIM {report['ssim_mean']:.3f}, "
      f"FID {report['fid']:.3f}")

print("== compare-api (mock service)")
with MockCompareServer(fixed_score=61.5) as server:
    os.environ["FACECOMPARE_ENDPOINT"] = server.endpoint
    assert main(["compare-api", "--config", str(config),
                 "--run-dir", str(root / "runs" / "transfer"),
                 "--out", str(root / "runs" / "api")]) == 0
    del os.environ["FACECOMPARE_ENDPOINT"]
report = json.loads((root / "runs" / "api" / "report.json").read_text())
print(f"   confidences {report['confidences']}, mean {report['summary']['mean']}")

print(f"\nrun directories under {root / 'runs'}; each effective.cfg reproduces its run")

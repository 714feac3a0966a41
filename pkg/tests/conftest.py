from types import SimpleNamespace

import pytest
import torch

from faceveil.data import save_image
from faceveil.denoisers import TinyConvDenoiser, pretrain_denoiser
from faceveil.schedule import make_linear_schedule
from faceveil.synthetic import toy_dataset, toy_face, write_toy_dataset

TOY_T_FULL = 250


@pytest.fixture(scope="session", autouse=True)
def _single_thread():
    torch.set_num_threads(1)


@pytest.fixture(scope="session")
def toy_sched():
    return make_linear_schedule(TOY_T_FULL)


@pytest.fixture(scope="session")
def toy_images():
    return [img for img, _ in toy_dataset(10, size=32, seed=7)]


@pytest.fixture(scope="session")
def trained_denoiser(toy_sched, toy_images):
    """A small denoiser fitted to the toy faces; frozen by convention."""
    den = TinyConvDenoiser(hidden=8, t_full=TOY_T_FULL, seed=0)
    pretrain_denoiser(den, toy_images, toy_sched, steps=400, lr=2e-3, seed=0)
    return den


BASE_CONFIG = """\
[dataset]
sources_dir = {root}/train/images
masks_dir = {root}/train/masks
reference = {root}/style/images/face200_v0.png
target = {root}/target.png
impostor_dir = {root}/impostors

[models]
denoiser = toy-conv-8
image_encoder = toy-image-48
text_encoder = toy-text-48
face_embedders = toy-face-24#a, toy-face-24#b, toy-face-24#c
eval_embedder = toy-face-24#holdout
identity_embedder = toy-face-24#id
perceptual = toy-perc-6
feature_extractor = toy-image-48
pretrain_steps = 60
pretrain_lr = 0.002

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
max_impostor_pairs = 40
out_dir = {root}/out/default
"""


@pytest.fixture(scope="session")
def cli_workspace(tmp_path_factory):
    """Datasets plus a base config for driving whole CLI commands."""
    root = tmp_path_factory.mktemp("cliws")
    write_toy_dataset(root / "train", 2, size=24, makeup=0.0, seed=7, first_identity=0)
    write_toy_dataset(root / "style", 1, size=24, makeup=1.0, seed=7, first_identity=200)
    write_toy_dataset(
        root / "impostors", 4, photos_per_identity=2, size=24, seed=7, first_identity=100
    )
    # masks_dir is the single lookup dir: the reference mask lives there too
    style_mask = root / "style" / "masks" / "face200_v0.mask.png"
    (root / "train" / "masks" / "face200_v0.mask.png").write_bytes(style_mask.read_bytes())
    target, _ = toy_face(300, size=24, seed=7)
    save_image(target, root / "target.png")
    cfg_path = root / "base.cfg"
    cfg_path.write_text(BASE_CONFIG.format(root=root))
    return SimpleNamespace(root=root, config=str(cfg_path))

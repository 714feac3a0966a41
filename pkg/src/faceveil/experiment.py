"""Experiment orchestration: wire config to models, data, stages, files.

Each command materializes a run directory:

    <out_dir>/
      effective.cfg      canonical effective config (feed it back via --config)
      manifest.json      RunManifest: config_hash, artifact & output paths
      loss_log.jsonl     one record per fine-tuning iteration
      outputs/*.png      stage outputs
      artifacts/*.pt     frozen and tuned denoiser weights
      report.json        metric reports (evaluate / calibrate / compare-api)

Runs are deterministic: single-threaded torch, all randomness derived
from the config seed through named streams.
"""
from __future__ import annotations

import json
import os
from pathlib import Path

import torch

from . import seeding
from .api import FaceCompareClient
from .config import ConfigError, ExperimentConfig, RunManifest, config_hash, load_config, save_config
from .data import Dataset, impostor_scores, load_image, mask_path_for, save_image
from .ddim import Denoiser
from .denoisers import pretrain_denoiser
from .encoders import EncoderBundle, embed_image
from .metrics import attack_success_rate, calibrate_threshold, fid, psnr, ssim
from .pipeline import StageArtifacts, protect, run_adversarial_transfer, run_makeup_removal
from .regions import load_label_map
from .registry import DENOISERS, FACE_EMBEDDERS, IMAGE_ENCODERS, PERCEPTUAL_EXTRACTORS, TEXT_ENCODERS


def setup_determinism(seed: int) -> None:
    torch.set_num_threads(1)
    torch.manual_seed(seed)


def build_encoders(cfg: ExperimentConfig) -> EncoderBundle:
    return EncoderBundle(
        image=IMAGE_ENCODERS.build(cfg.image_encoder, seed=cfg.seed),
        text=TEXT_ENCODERS.build(cfg.text_encoder, seed=cfg.seed),
        perceptual=PERCEPTUAL_EXTRACTORS.build(cfg.perceptual, seed=cfg.seed),
        identity=FACE_EMBEDDERS.build(cfg.identity_embedder, seed=cfg.seed),
    )


def build_ensemble(cfg: ExperimentConfig):
    return [FACE_EMBEDDERS.build(name, seed=cfg.seed) for name in cfg.face_embedders]


def prepare_backbone(cfg: ExperimentConfig, images) -> Denoiser:
    """Build the configured denoiser and give it a seeded pretraining on
    the run's own images, standing in for a pretrained backbone."""
    den = DENOISERS.build(cfg.denoiser, seed=cfg.seed, t_full=cfg.finetune.t_full)
    if cfg.pretrain_steps > 0:
        pretrain_denoiser(
            den, list(images), cfg.finetune.schedule(), steps=cfg.pretrain_steps,
            lr=cfg.pretrain_lr, seed=seeding.derive_seed(cfg.seed, "backbone-pretrain"),
        )
    return den


def _run_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out_dir)
    (out / "outputs").mkdir(parents=True, exist_ok=True)
    (out / "artifacts").mkdir(exist_ok=True)
    return out


def _write_loss_log(records: list[dict], path: Path) -> None:
    with path.open("w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _write_report(report: dict, out: Path) -> Path:
    path = out / "report.json"
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return path


def _finish(cfg: ExperimentConfig, out: Path, manifest: RunManifest) -> Path:
    save_config(cfg, out / "effective.cfg")
    manifest.config_path = "effective.cfg"
    path = out / "manifest.json"
    manifest.write(path)
    manifest.validate_paths(out)
    return path


def _save_stage(cfg: ExperimentConfig, out: Path, art: StageArtifacts) -> dict[str, str]:
    torch.save(art.frozen.state_dict(), out / "artifacts" / "frozen.pt")
    torch.save(art.tuned.state_dict(), out / "artifacts" / "tuned.pt")
    _write_loss_log(art.log, out / "loss_log.jsonl")
    return {
        "frozen": "artifacts/frozen.pt",
        "tuned": "artifacts/tuned.pt",
        "loss_log": "loss_log.jsonl",
    }


def _load_sources(cfg: ExperimentConfig):
    cfg.require_paths("sources_dir")
    paths = sorted(Path(cfg.sources_dir).glob("*.png"))
    if not paths:
        raise FileNotFoundError(f"no PNG images under {cfg.sources_dir}")
    return paths, [load_image(p) for p in paths]


def _load_masks(cfg: ExperimentConfig, image_paths, images):
    cfg.require_paths("masks_dir")
    masks = []
    for p, img in zip(image_paths, images):
        mp = mask_path_for(p, Path(cfg.masks_dir))
        if not mp.exists():
            raise FileNotFoundError(f"missing mask file {mp}")
        masks.append(load_label_map(mp, expected_shape=tuple(img.shape[1:])))
    return masks


def cmd_remove_makeup(cfg: ExperimentConfig) -> Path:
    """Stage 1 on the configured reference image."""
    setup_determinism(cfg.seed)
    cfg.require_paths("reference")
    out = _run_dir(cfg)
    ref = load_image(cfg.reference)
    backbone = prepare_backbone(cfg, [ref])
    art = run_makeup_removal([ref], backbone, build_encoders(cfg), cfg.finetune)
    clean_path = out / "outputs" / f"{Path(cfg.reference).stem}.clean.png"
    save_image(art.outputs[0], clean_path)
    artifact_paths = _save_stage(cfg, out, art)
    manifest = RunManifest(
        command="remove-makeup",
        config_hash=config_hash(cfg),
        seed=cfg.seed,
        config_path="",
        artifact_paths=artifact_paths,
        records=[
            {
                "input": str(cfg.reference),
                "output": str(clean_path.relative_to(out)),
                "final_loss": art.log[-1]["total"],
            }
        ],
    )
    return _finish(cfg, out, manifest)


def cmd_transfer(cfg: ExperimentConfig) -> Path:
    """Stage 2 over the source set; runs stage 1 first unless a clean
    reference override is configured."""
    setup_determinism(cfg.seed)
    cfg.require_paths("reference", "target", "masks_dir")
    out = _run_dir(cfg)
    src_paths, sources = _load_sources(cfg)
    masks = _load_masks(cfg, src_paths, sources)
    ref = load_image(cfg.reference)
    ref_masks = load_label_map(
        mask_path_for(Path(cfg.reference), Path(cfg.masks_dir)),
        expected_shape=tuple(ref.shape[1:]),
    )
    target = load_image(cfg.target)
    encs = build_encoders(cfg)
    backbone = prepare_backbone(cfg, sources + [ref])
    if cfg.reference_clean:
        cfg.require_paths("reference_clean")
        ref_clean = load_image(cfg.reference_clean)
    else:
        stage1 = run_makeup_removal([ref], backbone, encs, cfg.finetune)
        ref_clean = stage1.outputs[0]
    ensemble = build_ensemble(cfg)
    art = run_adversarial_transfer(
        sources, masks, ref, ref_clean, target, ensemble, backbone, encs,
        cfg.finetune, ref_masks=ref_masks,
    )
    records = []
    for path, protected in zip(src_paths, art.outputs):
        out_path = out / "outputs" / f"{path.stem}.protected.png"
        save_image(protected, out_path)
        records.append(
            {
                "input": str(path),
                "output": str(out_path.relative_to(out)),
                "target_cosines": art.log[-1]["target_cosines"],
            }
        )
    artifact_paths = _save_stage(cfg, out, art)
    save_image(ref, out / "artifacts" / "reference.png")
    save_image(ref_clean, out / "artifacts" / "reference_clean.png")
    artifact_paths["reference"] = "artifacts/reference.png"
    artifact_paths["reference_clean"] = "artifacts/reference_clean.png"
    manifest = RunManifest(
        command="transfer",
        config_hash=config_hash(cfg),
        seed=cfg.seed,
        config_path="",
        artifact_paths=artifact_paths,
        records=records,
    )
    return _finish(cfg, out, manifest)


def _load_trained(run_dir: Path, cfg: ExperimentConfig) -> StageArtifacts:
    trained_cfg = load_config(run_dir / "effective.cfg")
    frozen = DENOISERS.build(
        trained_cfg.denoiser, seed=trained_cfg.seed, t_full=trained_cfg.finetune.t_full
    )
    frozen.load_state_dict(torch.load(run_dir / "artifacts" / "frozen.pt", weights_only=True))
    tuned = frozen.clone()
    tuned.load_state_dict(torch.load(run_dir / "artifacts" / "tuned.pt", weights_only=True))
    return StageArtifacts(
        stage="transfer", config=trained_cfg.finetune, frozen=frozen, tuned=tuned,
        latents=[], outputs=[], log=[],
    )


def cmd_protect(cfg: ExperimentConfig) -> Path:
    """Apply a finished transfer run's tuned model to new images."""
    setup_determinism(cfg.seed)
    cfg.require_paths("run_dir")
    run_dir = Path(cfg.run_dir)
    out = _run_dir(cfg)
    artifacts = _load_trained(run_dir, cfg)
    src_paths, sources = _load_sources(cfg)
    records = []
    for path, x in zip(src_paths, sources):
        shielded = protect(x, artifacts, cfg.finetune)
        out_path = out / "outputs" / f"{path.stem}.protected.png"
        save_image(shielded, out_path)
        records.append({"input": str(path), "output": str(out_path.relative_to(out))})
    manifest = RunManifest(
        command="protect",
        config_hash=config_hash(cfg),
        seed=cfg.seed,
        config_path="",
        artifact_paths={"source_run": str(run_dir)},
        records=records,
    )
    return _finish(cfg, out, manifest)


def _protected_pairs(run_dir: Path) -> tuple[list, list]:
    manifest = RunManifest.read(run_dir / "manifest.json")
    sources, protected = [], []
    for rec in manifest.records:
        sources.append(load_image(rec["input"]))
        protected.append(load_image(run_dir / rec["output"]))
    return sources, protected


def cmd_evaluate(cfg: ExperimentConfig) -> Path:
    """Metric report over a finished transfer/protect run."""
    setup_determinism(cfg.seed)
    cfg.require_paths("run_dir", "impostor_dir", "target")
    out = _run_dir(cfg)
    run_dir = Path(cfg.run_dir)
    sources, protected = _protected_pairs(run_dir)
    emb = FACE_EMBEDDERS.build(cfg.eval_embedder, seed=cfg.seed)
    scores = impostor_scores(
        Dataset.open(cfg.impostor_dir), emb, max_pairs=cfg.max_impostor_pairs,
        seed=seeding.derive_seed(cfg.seed, "impostor-subsample"),
    )
    thr = calibrate_threshold(scores, cfg.far)
    target = load_image(cfg.target)
    asr, per_image = attack_success_rate(protected, target, emb, thr)
    psnrs = [psnr(a, b) for a, b in zip(protected, sources)]
    ssims = [ssim(a, b) for a, b in zip(protected, sources)]
    extractor = IMAGE_ENCODERS.build(cfg.feature_extractor, seed=cfg.seed)
    with torch.no_grad():
        feats_p = [embed_image(extractor, x).numpy() for x in protected]
        feats_s = [embed_image(extractor, x).numpy() for x in sources]
    report = {
        "model_name": cfg.eval_embedder,
        "tau": thr.tau,
        "far": thr.far,
        "n_impostor_pairs": thr.n_impostor_pairs,
        "asr": asr,
        "scores": per_image,
        "psnr_mean": sum(psnrs) / len(psnrs),
        "ssim_mean": sum(ssims) / len(ssims),
        "fid": fid(feats_p, feats_s),
        "n_images": len(protected),
        "config_hash": config_hash(cfg),
    }
    report_path = _write_report(report, out)
    manifest = RunManifest(
        command="evaluate", config_hash=config_hash(cfg), seed=cfg.seed,
        config_path="", report_path=str(report_path.relative_to(out)),
    )
    return _finish(cfg, out, manifest)


def cmd_calibrate_threshold(cfg: ExperimentConfig) -> Path:
    setup_determinism(cfg.seed)
    cfg.require_paths("impostor_dir")
    out = _run_dir(cfg)
    emb = FACE_EMBEDDERS.build(cfg.eval_embedder, seed=cfg.seed)
    scores = impostor_scores(
        Dataset.open(cfg.impostor_dir), emb, max_pairs=cfg.max_impostor_pairs,
        seed=seeding.derive_seed(cfg.seed, "impostor-subsample"),
    )
    thr = calibrate_threshold(scores, cfg.far)
    report = {
        "model_name": cfg.eval_embedder,
        "tau": thr.tau,
        "far": thr.far,
        "n_impostor_pairs": thr.n_impostor_pairs,
        "config_hash": config_hash(cfg),
    }
    report_path = _write_report(report, out)
    manifest = RunManifest(
        command="calibrate-threshold", config_hash=config_hash(cfg), seed=cfg.seed,
        config_path="", report_path=str(report_path.relative_to(out)),
    )
    return _finish(cfg, out, manifest)


def cmd_compare_api(cfg: ExperimentConfig) -> Path:
    """Send a run's protected images to a face-compare service.

    The endpoint and key come from the config or the FACECOMPARE_ENDPOINT
    / FACECOMPARE_KEY environment variables. Latencies are not persisted
    so reports stay byte-reproducible.
    """
    setup_determinism(cfg.seed)
    cfg.require_paths("run_dir", "target")
    endpoint = cfg.endpoint or os.environ.get("FACECOMPARE_ENDPOINT", "")
    if not endpoint:
        raise ConfigError("no compare endpoint: set [api] endpoint or FACECOMPARE_ENDPOINT")
    api_key = cfg.api_key or os.environ.get("FACECOMPARE_KEY", "")
    out = _run_dir(cfg)
    _, protected = _protected_pairs(Path(cfg.run_dir))
    target = load_image(cfg.target)
    client = FaceCompareClient(
        endpoint, api_key, rate_limit_rps=cfg.rate_limit_rps,
        max_retries=cfg.max_retries, backoff_base=cfg.backoff_base,
        backoff_factor=cfg.backoff_factor, timeout=cfg.api_timeout,
    )
    results, summary = client.batch_compare(protected, target)
    report = {
        "provider": client.provider,
        "confidences": [r.confidence if r else None for r in results],
        "summary": summary,
        "n_images": len(protected),
        "config_hash": config_hash(cfg),
    }
    report_path = _write_report(report, out)
    manifest = RunManifest(
        command="compare-api", config_hash=config_hash(cfg), seed=cfg.seed,
        config_path="", report_path=str(report_path.relative_to(out)),
    )
    return _finish(cfg, out, manifest)

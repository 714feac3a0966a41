"""Experiment configuration and run manifests.

Config files are INI-style "key = value" sections. The effective config
(file values plus CLI overrides) serializes canonically with sections
and keys sorted; its sha256 is the config_hash that ties a run to its
manifest and makes reruns verifiable.
"""
from __future__ import annotations

import configparser
import hashlib
import io
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .losses import LossWeights
from .pipeline import FineTuneConfig


class ConfigError(ValueError):
    """Invalid or incomplete experiment configuration."""


@dataclass
class ExperimentConfig:
    # [dataset]
    sources_dir: str = ""
    masks_dir: str = ""
    reference: str = ""
    reference_clean: str = ""
    target: str = ""
    impostor_dir: str = ""
    # [models]
    denoiser: str = "toy-conv-8"
    image_encoder: str = "toy-image-64"
    text_encoder: str = "toy-text-64"
    face_embedders: tuple[str, ...] = (
        "toy-face-32#a",
        "toy-face-32#b",
        "toy-face-32#c",
    )
    eval_embedder: str = "toy-face-32#holdout"
    identity_embedder: str = "toy-face-32#id"
    perceptual: str = "toy-perc-6"
    feature_extractor: str = "toy-image-64"
    pretrain_steps: int = 300
    pretrain_lr: float = 1e-3
    # [run]
    seed: int = 0
    out_dir: str = "out/run"
    far: float = 0.01
    max_impostor_pairs: int = 1000
    run_dir: str = ""  # exported by a previous subcommand; input to protect/evaluate
    # [api]
    endpoint: str = ""
    api_key: str = ""
    rate_limit_rps: float = 8.0
    max_retries: int = 3
    backoff_base: float = 0.5
    backoff_factor: float = 2.0
    api_timeout: float = 10.0
    # [finetune] + [weights]
    finetune: FineTuneConfig = field(default_factory=FineTuneConfig)

    def require(self, *names: str) -> None:
        for name in names:
            if not getattr(self, name):
                raise ConfigError(f"config field {name!r} is required for this command")

    def require_paths(self, *names: str) -> None:
        self.require(*names)
        for name in names:
            if not Path(getattr(self, name)).exists():
                raise ConfigError(f"{name} = {getattr(self, name)!r} does not exist")


_SECTIONS = {
    "dataset": (
        "sources_dir", "masks_dir", "reference", "reference_clean", "target",
        "impostor_dir",
    ),
    "models": (
        "denoiser", "image_encoder", "text_encoder", "face_embedders",
        "eval_embedder", "identity_embedder", "perceptual", "feature_extractor",
        "pretrain_steps", "pretrain_lr",
    ),
    "run": ("seed", "out_dir", "far", "max_impostor_pairs", "run_dir"),
    "api": (
        "endpoint", "api_key", "rate_limit_rps", "max_retries", "backoff_base",
        "backoff_factor", "api_timeout",
    ),
}

_FINETUNE_KEYS = (
    "t0", "s_inv", "s_sam", "epochs", "base_lr", "lr_step", "lr_slope",
    "lr_mode", "prompt_clean", "prompt_makeup", "t_full", "beta_start",
    "beta_end", "norm_eps", "hm_detach_target", "seed",
)
_WEIGHT_KEYS = tuple(f.name for f in fields(LossWeights))


def _coerce(raw: str, like) -> object:
    if isinstance(like, bool):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    if isinstance(like, tuple):
        return tuple(s.strip() for s in raw.split(",") if s.strip())
    return raw


def load_config(path: str | Path) -> ExperimentConfig:
    """Parse an INI config file into an ExperimentConfig."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    cfg = ExperimentConfig()
    try:
        for section, keys in _SECTIONS.items():
            if not parser.has_section(section):
                continue
            for key, raw in parser.items(section):
                if key not in keys:
                    raise ConfigError(f"unknown key {key!r} in [{section}]")
                setattr(cfg, key, _coerce(raw, getattr(cfg, key)))
        ft: dict = {}
        if parser.has_section("finetune"):
            defaults = FineTuneConfig()
            for key, raw in parser.items("finetune"):
                if key not in _FINETUNE_KEYS:
                    raise ConfigError(f"unknown key {key!r} in [finetune]")
                ft[key] = _coerce(raw, getattr(defaults, key))
        wts: dict = {}
        if parser.has_section("weights"):
            for key, raw in parser.items("weights"):
                if key not in _WEIGHT_KEYS:
                    raise ConfigError(f"unknown key {key!r} in [weights]")
                wts[key] = float(raw)
        ft.setdefault("seed", cfg.seed)  # run seed unless set explicitly
        cfg.finetune = FineTuneConfig(**ft, weights=LossWeights(**wts))
    except (ValueError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    return cfg


def canonical_text(cfg: ExperimentConfig) -> str:
    """Effective config as sorted INI text; reparsing reproduces cfg."""
    out = io.StringIO()
    sections: dict[str, dict[str, object]] = {
        name: {k: getattr(cfg, k) for k in keys} for name, keys in _SECTIONS.items()
    }
    sections["finetune"] = {
        k: getattr(cfg.finetune, k) for k in _FINETUNE_KEYS
    }
    sections["weights"] = {k: getattr(cfg.finetune.weights, k) for k in _WEIGHT_KEYS}
    for section in sorted(sections):
        out.write(f"[{section}]\n")
        for key in sorted(sections[section]):
            value = sections[section][key]
            if isinstance(value, tuple):
                value = ", ".join(value)
            out.write(f"{key} = {value}\n")
        out.write("\n")
    return out.getvalue()


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(canonical_text(cfg).encode()).hexdigest()


def save_config(cfg: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(canonical_text(cfg))


@dataclass
class RunManifest:
    """What a run produced and how to reproduce it."""

    command: str
    config_hash: str
    seed: int
    config_path: str
    artifact_paths: dict[str, str] = field(default_factory=dict)
    report_path: str = ""
    records: list[dict] = field(default_factory=list)

    def write(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")

    @classmethod
    def read(cls, path: str | Path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text()))

    def validate_paths(self, root: Path) -> None:
        missing = [
            p
            for p in [self.config_path, self.report_path, *self.artifact_paths.values()]
            + [r["output"] for r in self.records if "output" in r]
            if p and not (root / p).exists()
        ]
        if missing:
            raise FileNotFoundError(f"manifest lists missing paths: {missing}")

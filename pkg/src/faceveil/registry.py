"""Name-keyed factories for pluggable models.

Config files refer to encoders, embedders and denoisers by names like
``toy-face-32`` or ``toy-face-32#holdout``: ``<family>-<size>`` with an
optional ``#tag`` suffix. The tag changes nothing but the derived seed,
giving cheap independent variants (e.g. an attack ensemble plus a
held-out member). Real pretrained adapters register under new family
names without touching any caller.
"""
from __future__ import annotations

import re
from typing import Any, Callable

from . import seeding

_NAME_RE = re.compile(r"^(?P<family>[a-z][a-z0-9-]*?)-(?P<size>\d+)(?:#(?P<tag>\w+))?$")


class Registry:
    def __init__(self, kind: str):
        self.kind = kind
        self._factories: dict[str, Callable[..., Any]] = {}

    def register(self, family: str):
        def deco(fn):
            self._factories[family] = fn
            return fn

        return deco

    def build(self, name: str, *, seed: int = 0, **extra: Any) -> Any:
        m = _NAME_RE.match(name)
        if not m:
            raise KeyError(f"malformed {self.kind} name {name!r} (want family-size[#tag])")
        family = m.group("family")
        if family not in self._factories:
            known = ", ".join(sorted(self._factories))
            raise KeyError(f"unknown {self.kind} family {family!r} (known: {known})")
        derived = seeding.derive_seed(seed, f"{self.kind}:{name}")
        return self._factories[family](size=int(m.group("size")), seed=derived, **extra)


IMAGE_ENCODERS = Registry("image_encoder")
TEXT_ENCODERS = Registry("text_encoder")
FACE_EMBEDDERS = Registry("face_embedder")
PERCEPTUAL_EXTRACTORS = Registry("perceptual")
DENOISERS = Registry("denoiser")

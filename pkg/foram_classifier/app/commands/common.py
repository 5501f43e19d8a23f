"""Shared plumbing for the command modules: artifact paths, echo, loaders."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from ..core.config import RunConfig, dump_config
from ..core.errors import ClassMismatchError
from ..core.utils import require
from ..services.backbone.convnet import SmallConvNet
from ..services.backbone.handle import BUILTIN, BackboneHandle, load_backbone, save_builtin
from ..services.dataset.augment import AugmentConfig
from ..services.dataset.manifest import DatasetManifest, load_manifest
from ..services.nn.checkpoint import load_head

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunContext:
    """Resolved config plus every artifact location under ``paths.out``."""

    cfg: RunConfig

    @property
    def out(self) -> Path:
        return Path(self.cfg.paths.out)

    def resolve(self, path: Path) -> Path:
        path = Path(path)
        return path if path.is_absolute() else self.out / path

    @property
    def plates_dir(self) -> Path:
        return self.resolve(self.cfg.paths.plates)

    @property
    def data_dir(self) -> Path:
        return self.resolve(self.cfg.paths.data)

    @property
    def manifest_path(self) -> Path:
        return self.out / "manifest.json"

    @property
    def cache_dir(self) -> Path:
        return self.out / "cache"

    @property
    def backbone_path(self) -> Path:
        return self.out / "backbone.npz"

    @property
    def head_path(self) -> Path:
        return self.out / "head.npz"

    @property
    def finetuned_backbone_path(self) -> Path:
        return self.out / "backbone_finetuned.npz"

    @property
    def finetuned_head_path(self) -> Path:
        return self.out / "head_finetuned.npz"

    def artifact(self, name: str) -> Path:
        return self.out / name

    @property
    def augment(self) -> AugmentConfig:
        return AugmentConfig.from_section(self.cfg.augment)


def echo_config(cfg: RunConfig, command: str) -> None:
    """Print the resolved config; feeding it back with --config reproduces the run."""
    print(f"# {command}: resolved config (seed={cfg.seed})")
    print(dump_config(cfg), end="")


def check_class_names(expected: Sequence[str], actual: Sequence[str], what: str) -> None:
    if list(expected) != list(actual):
        raise ClassMismatchError(f"{what} class names {list(actual)} do not match {list(expected)}")


def open_manifest(ctx: RunContext) -> DatasetManifest:
    manifest = load_manifest(require(ctx.manifest_path, "dataset manifest"))
    check_class_names(ctx.cfg.class_names, manifest.class_names, "manifest")
    return manifest


def open_backbone(ctx: RunContext, create_missing: bool = False, path: Path | None = None) -> BackboneHandle:
    """Load the configured backbone.

    For the builtin kind a missing checkpoint is either an error or, with
    ``create_missing``, replaced by a freshly initialised network.
    """
    path = path or ctx.backbone_path
    if ctx.cfg.backbone.kind == BUILTIN and not path.exists():
        if not create_missing:
            require(path, "builtin backbone checkpoint")
        logger.warning(
            "No builtin backbone at %s; saving a randomly initialised one (run pretrain-backbone for a trained one)",
            path,
        )
        save_builtin(path, SmallConvNet.initialize(ctx.cfg.seed), seed=ctx.cfg.seed, trained=False)
    return load_backbone(ctx.cfg.backbone, path, trainable_blocks=())


def open_head(ctx: RunContext, path: Path | None = None):
    params, meta = load_head(require(path or ctx.head_path, "classifier head checkpoint"))
    check_class_names(ctx.cfg.class_names, params.class_names, "checkpoint")
    return params, meta

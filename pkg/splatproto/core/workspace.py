"""
On-disk layout of a splatproto run directory.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Union

from .backbone import BackboneParams
from .config import RunConfig, write_config
from .disentangler import DisentangleState
from .errors import ConfigError, MissingArtifactError
from .objects import (BackboneCheckpoint, DisentangleCheckpoint, read_checkpoint,
                      write_checkpoint)
from .splat_io import SplatDataset

logger = logging.getLogger(__name__)


class Workspace:
    """Represents a run directory."""

    def __init__(self, path: Union[str, Path] = "splatproto-run", dataset_dir: Optional[Union[str, Path]] = None):
        """Initialize the workspace; the dataset may live elsewhere."""
        self.root = Path(path).resolve()
        self._dataset_dir = Path(dataset_dir).resolve() if dataset_dir else None

    @property
    def dataset_dir(self) -> Path:
        return self._dataset_dir or self.root / "dataset"

    @property
    def manifest_path(self) -> Path:
        return self.dataset_dir / "manifest.json"

    @property
    def ply_dir(self) -> Path:
        return self.dataset_dir / "ply"

    @property
    def backbone_path(self) -> Path:
        return self.root / "backbone.ckpt"

    @property
    def train_report_path(self) -> Path:
        return self.root / "train_report.json"

    @property
    def disentangle_path(self) -> Path:
        return self.root / "disentangle.ckpt"

    @property
    def registry_path(self) -> Path:
        return self.root / "registry.json"

    @property
    def explanations_dir(self) -> Path:
        return self.root / "explanations"

    @property
    def eval_report_path(self) -> Path:
        return self.root / "eval_report.json"

    @property
    def eval_table_path(self) -> Path:
        return self.root / "eval_report.txt"

    @property
    def ablation_path(self) -> Path:
        return self.root / "ablation.json"

    @property
    def ablation_table_path(self) -> Path:
        return self.root / "ablation.txt"

    def config_echo_path(self, command: str) -> Path:
        return self.root / f"config.{command}.json"

    def prepare_dataset_dir(self, force: bool = False) -> None:
        """Refuse to write into a non-empty dataset directory unless forced."""
        if self.dataset_dir.exists() and any(self.dataset_dir.iterdir()) and not force:
            raise ConfigError(f"{self.dataset_dir} is not empty (use --force to overwrite)")
        self.ply_dir.mkdir(parents=True, exist_ok=True)

    def load_dataset(self) -> SplatDataset:
        if not self.manifest_path.exists():
            raise MissingArtifactError(str(self.manifest_path), "generate")
        return SplatDataset.from_manifest(self.manifest_path)

    def save_backbone(self, params: BackboneParams) -> str:
        return write_checkpoint(self.backbone_path, BackboneCheckpoint(params))

    def load_backbone(self) -> BackboneParams:
        if not self.backbone_path.exists():
            raise MissingArtifactError(str(self.backbone_path), "train")
        return read_checkpoint(self.backbone_path, "backbone").params

    def save_disentangle(self, state: DisentangleState) -> str:
        self.write_json(self.registry_path, {"version": 1, **state.registry.to_dict()})
        return write_checkpoint(self.disentangle_path, DisentangleCheckpoint(state))

    def load_disentangle(self) -> DisentangleState:
        if not self.disentangle_path.exists():
            raise MissingArtifactError(str(self.disentangle_path), "disentangle")
        return read_checkpoint(self.disentangle_path, "disentangle").state

    def write_json(self, path: Path, data: Dict[str, Any]) -> Path:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            json.dump(data, f, indent=2, sort_keys=True)
        return path

    def write_text(self, path: Path, text: str) -> Path:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text if text.endswith("\n") else text + "\n")
        return path

    def echo_config(self, command: str, config: RunConfig) -> Path:
        return write_config(config, self.config_echo_path(command))

"""
Prototype explanations for single predictions.

A prediction is explained by its most important channels, the voxel where
each channel peaks, the primitives inside that voxel and the matching
fragments of the channel's prototype samples.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Union

import numpy as np

from .backbone import BackboneParams, forward
from .disentangler import DisentangleState, PrototypeRegistry, locate_channels, transform_voxels
from .errors import ConfigError, DataError, EmptySubsetError, GroupIndexError, RegistryError
from .splat_io import LabeledSample, SplatCloud, write_ply

logger = logging.getLogger(__name__)

MANIFEST_VERSION = 1
MANIFEST_NAME = "explanation.json"


@dataclass
class PrototypeFragment:
    sample_id: str
    voxel: int
    activation: float
    primitive_ids: np.ndarray
    primitives: SplatCloud


@dataclass
class ChannelEvidence:
    channel: int
    importance: float
    voxel: int
    primitive_ids: np.ndarray
    primitives: SplatCloud
    prototypes: List[PrototypeFragment] = field(default_factory=list)


@dataclass
class Explanation:
    sample_id: str
    label: int
    predicted: int
    logits: np.ndarray
    channels: List[ChannelEvidence]
    feature_mode: str

    def to_dict(self, files: Optional[Dict] = None) -> Dict:
        files = files or {}
        channels = []
        for rank, ev in enumerate(self.channels):
            channels.append({
                "rank": rank,
                "channel": ev.channel,
                "importance": ev.importance,
                "voxel": ev.voxel,
                "n_primitives": int(len(ev.primitive_ids)),
                "file": files.get(("query", rank)),
                "prototypes": [
                    {
                        "sample_id": p.sample_id,
                        "voxel": p.voxel,
                        "activation": p.activation,
                        "n_primitives": int(len(p.primitive_ids)),
                        "file": files.get(("proto", rank, j)),
                    }
                    for j, p in enumerate(ev.prototypes)
                ],
            })
        return {
            "version": MANIFEST_VERSION,
            "sample_id": self.sample_id,
            "label": self.label,
            "predicted": self.predicted,
            "logits": [float(x) for x in self.logits],
            "feature_mode": self.feature_mode,
            "channels": channels,
        }


def channel_importance(z_tilde, W_prime, predicted: int) -> np.ndarray:
    """w'_{y,c} * relu(z~_c) for every channel c."""
    W_prime = np.asarray(W_prime, dtype=np.float64)
    if not 0 <= predicted < W_prime.shape[0]:
        raise ConfigError(f"class {predicted} outside [0, {W_prime.shape[0]})")
    return W_prime[predicted] * np.maximum(np.asarray(z_tilde, dtype=np.float64), 0.0)


def top_channels(scores, m: int) -> np.ndarray:
    """The m highest-scoring channels; ties go to the lower channel id."""
    scores = np.asarray(scores)
    if not 1 <= m <= len(scores):
        raise ConfigError(f"top-m must lie in [1, {len(scores)}], got {m}")
    order = np.lexsort((np.arange(len(scores)), -scores))
    return order[:m]


def localize(Ht, c: int, counts) -> int:
    """Voxel where channel c peaks, among occupied voxels."""
    _, voxels = locate_channels(np.asarray(Ht)[c:c + 1], counts)
    return int(voxels[0])


def extract_subset(sample: LabeledSample, voxel: int) -> np.ndarray:
    """Ids of the primitives whose stored voxel index is `voxel`."""
    n_voxels = sample.grid_size ** 3
    if not 0 <= voxel < n_voxels:
        raise GroupIndexError(f"voxel {voxel} outside [0, {n_voxels})")
    if sample.voxel_counts[voxel] == 0:
        raise EmptySubsetError(f"voxel {voxel} of sample '{sample.sample_id}' holds no primitives")
    return np.flatnonzero(sample.voxel_index == voxel)


def retrieve_prototypes(
    registry: PrototypeRegistry,
    c: int,
    load_sample: Callable[[str], LabeledSample]
) -> List[PrototypeFragment]:
    """Fragments of the registry samples of channel c at their stored voxels."""
    fragments = []
    for entry in registry[c]:
        try:
            sample = load_sample(entry.sample_id)
        except (KeyError, DataError, FileNotFoundError):
            raise RegistryError(f"registry references unknown sample '{entry.sample_id}'")
        ids = extract_subset(sample, entry.voxel)
        fragments.append(PrototypeFragment(
            sample_id=entry.sample_id,
            voxel=entry.voxel,
            activation=entry.activation,
            primitive_ids=ids,
            primitives=sample.cloud.subset(ids),
        ))
    return fragments


def explain(
    sample: LabeledSample,
    params: BackboneParams,
    state: DisentangleState,
    m: int,
    load_sample: Optional[Callable[[str], LabeledSample]] = None
) -> Explanation:
    """
    Explain the compensated prediction for one sample.

    Only channels with positive importance are kept, so fewer than m channels
    may be returned.
    """
    trace = forward(sample, params)
    Ht = transform_voxels(np.asarray(trace.H.data, dtype=np.float64), state.U)
    z_tilde = state.transformed(trace.z.data)
    logits = state.W_prime @ z_tilde
    predicted = int(np.argmax(logits))

    scores = channel_importance(z_tilde, state.W_prime, predicted)
    evidence = []
    for c in top_channels(scores, m):
        if scores[c] <= 0:
            break
        voxel = localize(Ht, int(c), sample.voxel_counts)
        ids = extract_subset(sample, voxel)
        evidence.append(ChannelEvidence(
            channel=int(c),
            importance=float(scores[c]),
            voxel=voxel,
            primitive_ids=ids,
            primitives=sample.cloud.subset(ids),
            prototypes=retrieve_prototypes(state.registry, int(c), load_sample) if load_sample else [],
        ))
    if not evidence:
        logger.warning("sample '%s': no channel has positive importance", sample.sample_id)
    return Explanation(
        sample_id=sample.sample_id,
        label=sample.label,
        predicted=predicted,
        logits=logits,
        channels=evidence,
        feature_mode=sample.cloud.feature_mode,
    )


def export_explanation(expl: Explanation, out_dir: Union[str, Path], text: bool = False) -> List[Path]:
    """
    Write one PLY per query subset and prototype fragment plus a JSON manifest.

    Returns:
        Written paths, manifest last
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: List[Path] = []
    files: Dict = {}
    for rank, ev in enumerate(expl.channels):
        name = f"query_rank{rank}_c{ev.channel}.ply"
        written.append(write_ply(ev.primitives, out_dir / name, expl.feature_mode, text=text))
        files[("query", rank)] = name
        for j, proto in enumerate(ev.prototypes):
            name = f"proto_rank{rank}_c{ev.channel}_{j}.ply"
            written.append(write_ply(proto.primitives, out_dir / name, expl.feature_mode, text=text))
            files[("proto", rank, j)] = name

    manifest = out_dir / MANIFEST_NAME
    with open(manifest, "w") as f:
        json.dump(expl.to_dict(files), f, indent=2, sort_keys=True)
    written.append(manifest)
    return written

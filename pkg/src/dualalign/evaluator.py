"""Test-time inference and subject-level evaluation.

Inference is the main classifier applied to shared-encoder features of each
target slice; the auxiliary classifier is never used at test time. Predicted
slices are resampled (nearest-neighbor) back to their pre-resampling shape
and restacked, so metrics are computed in the volume's original geometry.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .core import LabelVolume, Volume3D
from .errors import EmptyDataset
from .metrics import MetricsReport, asd_per_class, dice_per_class
from .preprocess import PreprocessConfig, normalize, resize_image, resize_labels, take_slice
from .state import SifaState
from .synthetic import Subject

_CHUNK = 8  # slices per forward pass


def restack_slices(slices: Sequence[np.ndarray], axis: int) -> np.ndarray:
    """Inverse of slicing: stack 2D arrays back along the original axis."""
    return np.stack(list(slices), axis=axis)


def segment_volume(state: SifaState, volume: Volume3D,
                   cfg: PreprocessConfig) -> LabelVolume:
    """Slice-wise segmentation of a preprocessed volume, restacked to 3D."""
    nets = state.nets
    nets.eval()
    axis = cfg.axis
    res = (cfg.target_resolution, cfg.target_resolution)
    n_slices = volume.shape[axis]
    orig_shape = take_slice(volume.voxels, axis, 0).shape

    planes = np.stack(
        [resize_image(take_slice(volume.voxels, axis, k), res) for k in range(n_slices)]
    )
    pred_slices = []
    with torch.no_grad():
        for start in range(0, n_slices, _CHUNK):
            chunk = torch.from_numpy(planes[start : start + _CHUNK]).unsqueeze(1)
            chunk = chunk.to(next(nets.seg_main.parameters()).device)
            logits = nets.seg_main(nets.encoder(chunk).deep)
            pred = F.softmax(logits, dim=1).argmax(dim=1).cpu().numpy()
            for p in pred.astype(np.int32):
                pred_slices.append(resize_labels(p, orig_shape))
    stacked = restack_slices(pred_slices, axis)
    return LabelVolume(stacked, state.arch.num_classes, volume.spacing)


def evaluate_dataset(
    state: SifaState,
    subjects: Sequence[Subject],
    cfg: PreprocessConfig,
    class_names: Sequence[str] = (),
) -> MetricsReport:
    """Normalize, segment and score every subject; aggregate per class."""
    if not subjects:
        raise EmptyDataset("no subjects to evaluate")
    report = MetricsReport(state.arch.num_classes, list(class_names))
    for subj in subjects:
        pred = segment_volume(state, normalize(subj.volume), cfg)
        report.add_subject(
            subj.subject_id,
            dice_per_class(pred, subj.labels),
            asd_per_class(pred, subj.labels),
        )
    return report

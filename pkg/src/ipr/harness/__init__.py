"""Synthetic scenes, a virtual depth sensor, and evaluation metrics."""
from .metrics import EmptyUnion, OverlapScores, f1_score, iou, overlap
from .scenes import (FAMILIES, Capture, SceneObject, SyntheticScene, UnstableScene, capture,
                     carve_visible_space, default_camera, generate_scene, in_contact,
                     observe_sequence, sample_shape)

__all__ = ["EmptyUnion", "OverlapScores", "f1_score", "iou", "overlap", "FAMILIES", "Capture",
           "SceneObject", "SyntheticScene", "UnstableScene", "capture", "carve_visible_space",
           "default_camera", "generate_scene", "in_contact", "observe_sequence", "sample_shape"]

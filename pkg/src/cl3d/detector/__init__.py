from .checkpoint import load_checkpoint, save_checkpoint
from .decode import Detection, decode, sigmoid
from .grid import BevGrid, gaussian_radius, gaussian_value, kernel_sigma, render_target_heatmap
from .loss import LossConfig, Targets, build_targets, detection_loss, focal_loss
from .model import DetectorConfig, DetectorState, FeatureMaps, backward, forward, init_state, prepare_input
from .train import AugmentConfig, TrainConfig, TrainingDiverged, TrainSample, train_epoch, train_step


def encode(cur, prev, state: DetectorState) -> FeatureMaps:
    """Feature maps for one frame pair (point arrays or frames)."""
    cur = getattr(cur, "points", cur)
    prev = getattr(prev, "points", prev)
    dtype = state.params["enc.w1"].dtype
    maps, _ = forward(state, prepare_input(cur, prev, state.cfg.grid, dtype), with_cache=False)
    return maps


__all__ = [
    "AugmentConfig", "BevGrid", "Detection", "DetectorConfig", "DetectorState", "FeatureMaps", "LossConfig",
    "Targets", "TrainConfig", "TrainSample", "TrainingDiverged", "backward", "build_targets", "decode",
    "detection_loss", "encode", "focal_loss", "forward", "gaussian_radius", "gaussian_value", "init_state",
    "kernel_sigma", "load_checkpoint", "prepare_input", "render_target_heatmap", "save_checkpoint", "sigmoid",
    "train_epoch", "train_step",
]

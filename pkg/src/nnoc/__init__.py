"""Lossless coding of voxelized point-cloud geometry.

The octree is coded one resolution at a time; a small perceptron turns the
binary 3D context of every candidate voxel into an occupancy probability for
a binary arithmetic coder.
"""

__version__ = "0.1.0"

from .codec import Bitstream, bpov, decode, encode
from .context import ContextHistogram, collect_training_contexts, template_offsets
from .geometry import VoxelSet, build_pyramid, voxelize
from .model import ModelParams, TrainConfig, forward, init_for_variant, load_model, save_model, train
from .variants import VARIANTS, get_variant

__all__ = [
    "Bitstream",
    "ContextHistogram",
    "ModelParams",
    "TrainConfig",
    "VARIANTS",
    "VoxelSet",
    "bpov",
    "build_pyramid",
    "collect_training_contexts",
    "decode",
    "encode",
    "forward",
    "get_variant",
    "init_for_variant",
    "load_model",
    "save_model",
    "template_offsets",
    "train",
    "voxelize",
]

from .build import (NETWORKS, REFERENCE_PARAMS, NetworkSpec, build_network, count_parameters,
                    inspect_network, parameter_breakdown, recal_delta)
from .checkpoint import load_checkpoint, load_weights, read_checkpoint, save_checkpoint
from .drnet import DRNet
from .encoders import ResNetEncoder, VGGEncoder, build_encoder
from .phase import PhaseRNN
from .segmenters import AdaptNet, DeepPyram, UNet

__all__ = [
    "NETWORKS", "REFERENCE_PARAMS", "NetworkSpec", "build_network", "count_parameters",
    "inspect_network", "parameter_breakdown", "recal_delta", "load_checkpoint", "load_weights",
    "read_checkpoint", "save_checkpoint", "DRNet", "ResNetEncoder", "VGGEncoder", "build_encoder",
    "PhaseRNN", "AdaptNet", "DeepPyram", "UNet",
]

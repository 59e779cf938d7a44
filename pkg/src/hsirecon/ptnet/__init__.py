"""PTNet reconstruction network, its layers and checkpoint format."""

from hsirecon.ptnet.checkpoint import load_checkpoint, load_weights, read_checkpoint, save_weights
from hsirecon.ptnet.layers import BatchNorm2d, ChannelAttention, Conv2d, Module, RABlock
from hsirecon.ptnet.model import BRANCHES, PTNet, PtnetConfig, count_parameters, parameter_shapes

__all__ = [
    "BRANCHES", "BatchNorm2d", "ChannelAttention", "Conv2d", "Module", "PTNet", "PtnetConfig",
    "RABlock", "count_parameters", "load_checkpoint", "load_weights", "parameter_shapes",
    "read_checkpoint", "save_weights",
]

"""Convolutional networks with Gaussian-mixture filters."""

__version__ = "0.1.0"

from .config import NetworkConfig, load_config, parse_config
from .estimator import CompNetClassifier
from .gaussian import GaussianComponent, KernelGeometry
from .layers import CompFilterBank
from .model_io import load_model, save_model
from .network import Network
from .tensor import DenseFilterBank

__all__ = [
    "CompFilterBank",
    "CompNetClassifier",
    "DenseFilterBank",
    "GaussianComponent",
    "KernelGeometry",
    "Network",
    "NetworkConfig",
    "load_config",
    "load_model",
    "parse_config",
    "save_model",
]

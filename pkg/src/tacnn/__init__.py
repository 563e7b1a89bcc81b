"""Tensor-kernel convolutional classifiers in plain numpy."""
from .layers import Model, ModelSpec, cnn_spec, parameter_count, tacnn_spec
from .tensor_core import PatchState, TensorKernel, contract

__version__ = "0.1.0"
__all__ = ["Model", "ModelSpec", "PatchState", "TensorKernel", "cnn_spec", "contract", "parameter_count", "tacnn_spec"]

"""Masked vector quantization: N:M pruning, masked k-means, quantized
codebooks, a bit-exact container and an analytical accelerator model."""

from mvq.clustering import Codebook, run_common_kmeans, run_masked_kmeans
from mvq.codec import CompressedLayer, compression_ratio, decompress, deserialize, serialize
from mvq.pipeline import LayerSettings, compress_tensor, run_ablation
from mvq.quantization import QuantizedCodebook, dequantize_codebook, quantize_codebook
from mvq.sparsity import NmPattern, prune_nm
from mvq.tensor import GroupedMatrix, WeightTensor, group_weights, ungroup_weights

__all__ = [
    "Codebook",
    "CompressedLayer",
    "GroupedMatrix",
    "LayerSettings",
    "NmPattern",
    "QuantizedCodebook",
    "WeightTensor",
    "compress_tensor",
    "compression_ratio",
    "decompress",
    "dequantize_codebook",
    "deserialize",
    "group_weights",
    "prune_nm",
    "quantize_codebook",
    "run_ablation",
    "run_common_kmeans",
    "run_masked_kmeans",
    "serialize",
    "ungroup_weights",
]

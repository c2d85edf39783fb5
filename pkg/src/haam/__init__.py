"""Semi-supervised node classification on multiplex graphs with product-composed
low-/high-pass Chebyshev filters, learnable compatibility matrices and a sparse
proximal consensus."""

from haam.consensus import ConsensusConfig, ConsensusResult, predict_labels, proximal_consensus
from haam.dataio import DatasetBundle, SplitSpec, load_dataset, make_splits, save_dataset
from haam.graph import DimensionGraph, MultiplexGraph, RescaledLaplacian, homophily_ratio, symmetrize
from haam.model import ModelState, TrainConfig, train
from haam.synthgen import SynthConfig, generate

__version__ = "0.1.0"

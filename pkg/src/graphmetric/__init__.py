"""Graph metric learning with restricted projected Wasserstein distances."""

from .data import FeatureRecipe, Graph, GraphDataset, stratified_split, tud_load
from .embed import SgcnParams, embed, init_params, load_params, save_params
from .evaluate import DistanceMatrix, EvalProtocol, distance_matrix, kernel_matrix, run_protocol
from .ot import DiscreteDistribution, TransportPlan, exact_w2_oracle, pw2, rpw2, sw2, wasserstein_1d
from .train import TrainConfig, nca_loss, nccml_loss, train

__version__ = "0.1.0"

__all__ = [
    "DiscreteDistribution", "DistanceMatrix", "EvalProtocol", "FeatureRecipe", "Graph",
    "GraphDataset", "SgcnParams", "TrainConfig", "TransportPlan", "distance_matrix", "embed",
    "exact_w2_oracle", "init_params", "kernel_matrix", "load_params", "nca_loss", "nccml_loss",
    "pw2", "rpw2", "run_protocol", "save_params", "stratified_split", "sw2", "train",
    "tud_load", "wasserstein_1d",
]

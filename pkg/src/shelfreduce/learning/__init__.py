from .dbscan import NOISE, dbscan, elbow_eps, k_distance, standardize
from .forest import ForestModel, forest_top_k, train_forest
from .library import StrategyLibrary, baseline_sample
from .net import StrategyNet, loss_and_grad, net_top_k, train_strategy_net

__all__ = [
    "NOISE", "dbscan", "elbow_eps", "k_distance", "standardize",
    "ForestModel", "forest_top_k", "train_forest",
    "StrategyLibrary", "baseline_sample",
    "StrategyNet", "loss_and_grad", "net_top_k", "train_strategy_net",
]

"""Predictors sharing one train/predict contract."""

from .base import FLOORS, REGISTRY, Model, ModelError, Standardizer, make_model, normalize_kind, train
from .baselines import LagModel, LinearModel, MeanModel
from .hurdle import RFGCNModel
from .neural import Adam, GCNModel, GCNNet, GCNRegressor, MLPModel, MLPNet
from .persist import dumps, load, loads, save
from .trees import Booster, BoostingModel, Forest, RandomForestModel

KINDS = ("lag", "mean", "linreg", "rf", "gbt", "mlp", "gcn", "rf_gcn")

__all__ = [
    "Adam",
    "Booster",
    "BoostingModel",
    "FLOORS",
    "Forest",
    "GCNModel",
    "GCNNet",
    "GCNRegressor",
    "KINDS",
    "LagModel",
    "LinearModel",
    "MLPModel",
    "MLPNet",
    "MeanModel",
    "Model",
    "ModelError",
    "REGISTRY",
    "RFGCNModel",
    "RandomForestModel",
    "Standardizer",
    "dumps",
    "load",
    "loads",
    "make_model",
    "normalize_kind",
    "save",
    "train",
]

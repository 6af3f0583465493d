"""Inbetweening of line drawings through vertex correspondence on vector graphs."""
from .geom import LineGraph, Matching, load_graph, save_graph, rasterize
from .model import ModelConfig, ModelParams, load_params, save_params
from .pipeline import inbetween

__all__ = ["LineGraph", "Matching", "load_graph", "save_graph", "rasterize", "ModelConfig", "ModelParams",
           "load_params", "save_params", "inbetween"]
__version__ = "0.1.0"

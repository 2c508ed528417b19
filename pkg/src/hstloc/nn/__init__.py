from .layers import ACTIVATIONS, Activation, Conv1D, Dense, Flatten, LayerSpec, Reshape, init_params
from .losses import LOSSES, loss_eval
from .network import Network, TreeNetwork
from .optim import AdamState, PlateauSchedulerState, adam_step, plateau_step

__all__ = [
    "ACTIVATIONS", "LOSSES", "Activation", "AdamState", "Conv1D", "Dense", "Flatten", "LayerSpec",
    "Network", "PlateauSchedulerState", "Reshape", "TreeNetwork", "adam_step", "init_params",
    "loss_eval", "plateau_step",
]

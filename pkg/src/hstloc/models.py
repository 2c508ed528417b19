"""Architectures of the SAE, the linked-DNN / linked-CNNLoc stage networks and
their conventionally trained multi-head references."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import ScalerParams, SitePlan, unscale_coords
from .errors import ConfigError
from .nn import Activation, Conv1D, Dense, Flatten, Network, Reshape, TreeNetwork
from .nn.network import as_seed_sequence
from .staged import TrainConfig, fit, make_objective

MODEL_KINDS = ("linked-dnn", "linked-cnnloc", "reference-dnn", "reference-cnnloc")
STAGE_COUNT = {"linked-dnn": 2, "linked-cnnloc": 3, "reference-dnn": 1, "reference-cnnloc": 1}

# target block -> source block at the previous stage
LINKS = {
    "linked-dnn": {2: {"E_L": "E_BF", "H_L": "H_BF"}},
    "linked-cnnloc": {2: {"E_F": "E_B"}, 3: {"E_L": "E_F", "C_L": "C_F"}},
}
# stage-1 block initialized from the pre-trained SAE encoder
PRETRAINED_ENCODER = {"linked-dnn": "E_BF", "linked-cnnloc": "E_B", "reference-dnn": "E", "reference-cnnloc": "E"}


@dataclass(frozen=True)
class SaeConfig:
    input_dim: int = 520
    encoder: tuple[int, ...] = (520, 260, 130)
    activation: str = "elu"

    @property
    def decoder(self) -> tuple[int, ...]:
        return tuple(reversed(self.encoder[:-1])) + (self.input_dim,)

    @property
    def code_dim(self) -> int:
        return self.encoder[-1]


@dataclass(frozen=True)
class LinkedDnnConfig:
    sae: SaeConfig = field(default_factory=SaeConfig)
    common: tuple[int, ...] = (520, 520)
    activation: str = "elu"
    location_hidden: int = 520
    location_activation: str = "tanh"


@dataclass(frozen=True)
class LinkedCnnlocConfig:
    sae: SaeConfig = field(default_factory=SaeConfig)
    building_hidden: tuple[int, ...] = (130, 130)
    conv: tuple[tuple[int, int], ...] = ((99, 22), (66, 22), (33, 22))  # (out_channels, kernel_len)
    activation: str = "elu"

    def conv_output(self) -> tuple[int, int]:
        length, channels = self.sae.code_dim, 1
        for out_ch, k in self.conv:
            length, channels = length - k + 1, out_ch
        return length, channels


def _dense_stack(widths, in_dim, activation):
    layers = []
    for w in widths:
        layers += [Dense(in_dim, w), Activation(activation)]
        in_dim = w
    return layers, in_dim


class _Builder:
    """Accumulates layers and their block ranges."""

    def __init__(self):
        self.layers, self.blocks = [], {}

    def add(self, symbol, layers):
        start = len(self.layers)
        self.layers += layers
        self.blocks[symbol] = (start, len(self.layers))

    def build(self, input_shape, seed, dtype):
        return Network(input_shape, self.layers, self.blocks, seed, dtype)


def _encoder(sae: SaeConfig):
    layers, _ = _dense_stack(sae.encoder, sae.input_dim, sae.activation)
    return layers


def build_sae(cfg: SaeConfig, seed=0, dtype=np.float32) -> Network:
    b = _Builder()
    b.add("encoder", _encoder(cfg))
    dec, width = _dense_stack(cfg.decoder[:-1], cfg.code_dim, cfg.activation)
    b.add("decoder", dec + [Dense(width, cfg.input_dim), Activation("linear")])
    return b.build((cfg.input_dim,), seed, dtype)


def pretrain_sae(sae: Network, features, train: TrainConfig) -> list[np.ndarray]:
    """Reconstruction training (MSE); returns copies of the encoder weights."""
    fit(sae, features, features, make_objective("mse"), train)
    return [a.copy() for a in sae.block_params("encoder")]


def _dnn_parts(cfg: LinkedDnnConfig, site: SitePlan):
    common, width = _dense_stack(cfg.common, cfg.sae.code_dim, cfg.activation)
    classifier = [Dense(width, site.n_buildings + site.n_floors), Activation("sigmoid")]
    regressor = [Dense(width, cfg.location_hidden), Activation(cfg.location_activation),
                 Dense(cfg.location_hidden, 2), Activation("linear")]
    return _encoder(cfg.sae), common, classifier, regressor, width


def build_linked_dnn(cfg: LinkedDnnConfig, role: str, site: SitePlan | None, seed=0, dtype=np.float32):
    """``role`` is ``reference``, ``stage1`` or ``stage2``."""
    if site is None:
        raise ConfigError("a site plan is required")
    if cfg.sae.input_dim != site.n_aps:
        cfg = LinkedDnnConfig(SaeConfig(site.n_aps, cfg.sae.encoder, cfg.sae.activation),
                              cfg.common, cfg.activation, cfg.location_hidden, cfg.location_activation)
    enc, common, classifier, regressor, width = _dnn_parts(cfg, site)
    shape = (cfg.sae.input_dim,)
    b = _Builder()
    if role == "stage1":
        b.add("E_BF", enc)
        b.add("H_BF", common)
        b.add("C", classifier)
        return b.build(shape, seed, dtype)
    if role == "stage2":
        b.add("E_L", enc)
        b.add("H_L", common)
        b.add("R", regressor)
        return b.build(shape, seed, dtype)
    if role == "reference":
        seeds = as_seed_sequence(seed).spawn(3)
        b.add("E", enc)
        b.add("H", common)
        trunk = b.build(shape, seeds[0], dtype)
        heads = {
            "building_floor": Network((width,), classifier, {"C": (0, len(classifier))}, seeds[1], dtype),
            "location": Network((width,), regressor, {"R": (0, len(regressor))}, seeds[2], dtype),
        }
        return TreeNetwork(trunk, heads)
    raise ConfigError(f"unknown linked-DNN role {role!r}")


def _conv_stack(cfg: LinkedCnnlocConfig):
    layers, channels = [Reshape((cfg.sae.code_dim, 1))], 1
    for out_ch, k in cfg.conv:
        layers += [Conv1D(channels, out_ch, k), Activation(cfg.activation)]
        channels = out_ch
    return layers


def build_linked_cnnloc(cfg: LinkedCnnlocConfig, role: str, site: SitePlan | None, seed=0, dtype=np.float32):
    """``role`` is ``reference``, ``stage1``, ``stage2`` or ``stage3``."""
    if site is None:
        raise ConfigError("a site plan is required")
    if cfg.sae.input_dim != site.n_aps:
        cfg = LinkedCnnlocConfig(SaeConfig(site.n_aps, cfg.sae.encoder, cfg.sae.activation),
                                 cfg.building_hidden, cfg.conv, cfg.activation)
    enc = _encoder(cfg.sae)
    hidden, width = _dense_stack(cfg.building_hidden, cfg.sae.code_dim, cfg.activation)
    building = hidden + [Dense(width, site.n_buildings), Activation("softmax")]
    flat = int(np.prod(cfg.conv_output()))
    floor = [Flatten(), Dense(flat, site.n_floors), Activation("softmax")]
    location = [Flatten(), Dense(flat, 2), Activation("linear")]
    shape = (cfg.sae.input_dim,)
    b = _Builder()
    if role == "stage1":
        b.add("E_B", enc)
        b.add("B", building)
        return b.build(shape, seed, dtype)
    if role == "stage2":
        b.add("E_F", enc)
        b.add("C_F", _conv_stack(cfg))
        b.add("H_F", floor)
        return b.build(shape, seed, dtype)
    if role == "stage3":
        b.add("E_L", enc)
        b.add("C_L", _conv_stack(cfg))
        b.add("H_L", location)
        return b.build(shape, seed, dtype)
    if role == "reference":
        seeds = as_seed_sequence(seed).spawn(5)
        code = (cfg.sae.code_dim,)
        conv = _conv_stack(cfg)
        conv_out = cfg.conv_output()
        b.add("E", enc)
        conv_tree = TreeNetwork(
            Network(code, conv, {"C": (0, len(conv))}, seeds[2], dtype),
            {
                "floor": Network(conv_out, floor, {"F": (0, len(floor))}, seeds[3], dtype),
                "location": Network(conv_out, location, {"L": (0, len(location))}, seeds[4], dtype),
            },
        )
        return TreeNetwork(b.build(shape, seeds[0], dtype), {
            "building": Network(code, building, {"B": (0, len(building))}, seeds[1], dtype),
            "conv": conv_tree,
        })
    raise ConfigError(f"unknown linked-CNNLoc role {role!r}")


def build_stage_networks(kind: str, site: SitePlan, seed=0, dtype=np.float32, cfg=None) -> list:
    """One network per training stage (a single multi-head network for references)."""
    if kind not in MODEL_KINDS:
        raise ConfigError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")
    if kind.endswith("dnn"):
        builder, cfg = build_linked_dnn, cfg or LinkedDnnConfig()
    else:
        builder, cfg = build_linked_cnnloc, cfg or LinkedCnnlocConfig()
    if kind.startswith("reference"):
        return [builder(cfg, "reference", site, seed, dtype)]
    seeds = as_seed_sequence(seed).spawn(STAGE_COUNT[kind])
    return [builder(cfg, f"stage{s + 1}", site, seeds[s], dtype) for s in range(STAGE_COUNT[kind])]


# -- inference ---------------------------------------------------------------------

def decode_groups(outputs: np.ndarray, site: SitePlan) -> tuple[np.ndarray, np.ndarray]:
    """Building / floor ids from a concatenated classification output.
    ``argmax`` returns the first maximum, so ties go to the lowest index."""
    nb, nf = site.n_buildings, site.n_floors
    return outputs[:, :nb].argmax(axis=1), outputs[:, nb:nb + nf].argmax(axis=1)


@dataclass
class ModelBundle:
    kind: str
    site: SitePlan
    scaler: ScalerParams | None
    networks: list  # one per stage, parameters loaded


def predict(bundle: ModelBundle, features: np.ndarray, batch: int = 1024):
    """Return ``(building, floor, coords)`` with coordinates in meters.

    Building and floor come from the classification stages, coordinates
    from the final regression stage.
    """
    if bundle.scaler is None:
        raise ConfigError("model bundle has no scaler parameters")
    nets = bundle.networks
    x = np.asarray(features, dtype=nets[0].dtype)
    parts = []
    for s in range(0, len(x), batch):
        xb = x[s:s + batch]
        if bundle.kind == "linked-dnn":
            b, f = decode_groups(nets[0](xb), bundle.site)
            xy = nets[1](xb)
        elif bundle.kind == "linked-cnnloc":
            b = nets[0](xb).argmax(axis=1)
            f = nets[1](xb).argmax(axis=1)
            xy = nets[2](xb)
        elif bundle.kind == "reference-dnn":
            out = nets[0](xb)
            b, f = decode_groups(out["building_floor"], bundle.site)
            xy = out["location"]
        elif bundle.kind == "reference-cnnloc":
            out = nets[0](xb)
            b, f, xy = out["building"].argmax(axis=1), out["floor"].argmax(axis=1), out["location"]
        else:
            raise ConfigError(f"unknown model kind {bundle.kind!r}")
        parts.append((b, f, xy))
    building = np.concatenate([p[0] for p in parts])
    floor = np.concatenate([p[1] for p in parts])
    coords = unscale_coords(np.concatenate([p[2] for p in parts]).astype(np.float64), bundle.scaler)
    return building, floor, coords

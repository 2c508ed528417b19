"""Sequential and multi-head networks built from :mod:`hstloc.nn.layers`."""

from __future__ import annotations

import copy

import numpy as np

from ..errors import ShapeError
from .layers import LayerSpec, init_params


def as_seed_sequence(seed) -> np.random.SeedSequence:
    return seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)


class Network:
    """An ordered stack of layers partitioned into named blocks.

    ``blocks`` maps a block symbol to a half-open layer range ``(start, stop)``.
    The ranges must tile the whole stack in order, so every parameterized
    layer belongs to exactly one block.
    """

    def __init__(
        self,
        input_shape: tuple[int, ...],
        layers: list[LayerSpec],
        blocks: dict[str, tuple[int, int]],
        seed=0,
        dtype=np.float32,
    ):
        self.input_shape = tuple(input_shape)
        self.layers = list(layers)
        self.dtype = np.dtype(dtype)
        self.blocks = dict(blocks)
        self._check_blocks()

        self.shapes = [self.input_shape]
        for i, layer in enumerate(self.layers):
            try:
                self.shapes.append(layer.output_shape(self.shapes[-1]))
            except ShapeError as exc:
                raise ShapeError(str(exc), layer_index=i) from None

        seeds = as_seed_sequence(seed).spawn(len(self.layers))
        self.params = [init_params(layer, s, self.dtype) for layer, s in zip(self.layers, seeds)]

    def _check_blocks(self):
        pos = 0
        for symbol, (start, stop) in sorted(self.blocks.items(), key=lambda kv: kv[1]):
            if start != pos or stop <= start:
                raise ShapeError(f"block {symbol!r} range {(start, stop)} is not contiguous with the previous block")
            pos = stop
        if pos != len(self.layers):
            raise ShapeError(f"blocks cover {pos} of {len(self.layers)} layers")

    @property
    def output_shape(self) -> tuple[int, ...]:
        return self.shapes[-1]

    def forward(self, x: np.ndarray) -> list[np.ndarray]:
        """Return the input followed by every layer's output. Parameters are not touched."""
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"input shape {x.shape[1:]} != {self.input_shape}", layer_index=0)
        acts = [x]
        for layer, p in zip(self.layers, self.params):
            acts.append(layer.forward(p, acts[-1]))
        return acts

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[-1]

    def outputs(self, acts):
        return acts[-1]

    def backward(self, acts: list[np.ndarray], grad: np.ndarray):
        """Backpropagate ``grad`` (d loss / d output).

        Returns ``(grad_input, grads)`` where ``grads`` is keyed like
        :meth:`parameters`.
        """
        if grad.shape != acts[-1].shape:
            raise ShapeError(f"output gradient shape {grad.shape} != {acts[-1].shape}", len(self.layers) - 1)
        grads = {}
        for i in range(len(self.layers) - 1, -1, -1):
            grad, g = self.layers[i].backward(self.params[i], acts[i], acts[i + 1], grad)
            for name, value in g.items():
                grads[f"{i}.{name}"] = value
        return grad, grads

    def parameters(self) -> dict[str, np.ndarray]:
        return {f"{i}.{name}": arr for i, p in enumerate(self.params) for name, arr in p.items()}

    def block_of(self, key: str) -> str:
        i = int(key.split(".")[0])
        for symbol, (start, stop) in self.blocks.items():
            if start <= i < stop:
                return symbol
        raise KeyError(key)

    def block_params(self, symbol: str) -> list[np.ndarray]:
        start, stop = self.blocks[symbol]
        return [arr for p in self.params[start:stop] for _, arr in sorted(p.items())]

    def block_shapes(self, symbol: str) -> list[tuple[int, ...]]:
        return [a.shape for a in self.block_params(symbol)]

    def set_block_params(self, symbol: str, arrays: list[np.ndarray]) -> None:
        """Overwrite a block with copies of ``arrays`` (ordered as :meth:`block_params`)."""
        expected = self.block_shapes(symbol)
        got = [tuple(np.shape(a)) for a in arrays]
        if got != expected:
            raise ShapeError(f"block {symbol!r}: shapes {got} do not match {expected}")
        it = iter(arrays)
        start, stop = self.blocks[symbol]
        for p in self.params[start:stop]:
            for name in sorted(p):
                p[name] = np.array(next(it), dtype=self.dtype, copy=True)

    def fresh_block_params(self, symbol: str, seed) -> list[np.ndarray]:
        """Randomly initialized arrays for ``symbol``, without touching the network."""
        start, stop = self.blocks[symbol]
        seeds = as_seed_sequence(seed).spawn(stop - start)
        fresh = [init_params(self.layers[i], s, self.dtype) for i, s in zip(range(start, stop), seeds)]
        return [arr for p in fresh for _, arr in sorted(p.items())]

    def reinit_block(self, symbol: str, seed) -> None:
        self.set_block_params(symbol, self.fresh_block_params(symbol, seed))

    def param_count(self, symbol: str | None = None) -> int:
        arrays = self.block_params(symbol) if symbol else self.parameters().values()
        return int(sum(a.size for a in arrays))

    def astype(self, dtype) -> "Network":
        net = copy.deepcopy(self)
        net.dtype = np.dtype(dtype)
        net.params = [{k: v.astype(dtype) for k, v in p.items()} for p in self.params]
        return net


class TreeNetwork:
    """A shared trunk feeding several heads; heads may themselves branch.

    Used for the conventionally trained multi-output reference models.
    ``outputs`` is a flat dict keyed by leaf-head name.
    """

    def __init__(self, trunk: Network, heads: dict[str, "Network | TreeNetwork"]):
        self.trunk = trunk
        self.heads = dict(heads)
        for name, head in self.heads.items():
            if head_input(head) != trunk.output_shape:
                raise ShapeError(f"head {name!r} expects {head_input(head)}, trunk emits {trunk.output_shape}")
        symbols = list(trunk.blocks)
        for head in self.heads.values():
            symbols += list(head.blocks)
        if len(set(symbols)) != len(symbols):
            raise ShapeError(f"duplicate block symbols in {symbols}")

    @property
    def input_shape(self):
        return self.trunk.input_shape

    @property
    def blocks(self) -> dict[str, tuple[int, int]]:
        out = dict(self.trunk.blocks)
        for head in self.heads.values():
            out.update(head.blocks)
        return out

    @property
    def dtype(self):
        return self.trunk.dtype

    def forward(self, x):
        trunk_acts = self.trunk.forward(x)
        return trunk_acts, {name: head.forward(trunk_acts[-1]) for name, head in self.heads.items()}

    def __call__(self, x):
        return self.outputs(self.forward(x))

    def outputs(self, state) -> dict[str, np.ndarray]:
        _, head_states = state
        out = {}
        for name, head in self.heads.items():
            o = head.outputs(head_states[name])
            if isinstance(o, dict):
                out.update(o)
            else:
                out[name] = o
        return out

    def leaf_names(self) -> list[str]:
        names = []
        for name, head in self.heads.items():
            names += head.leaf_names() if isinstance(head, TreeNetwork) else [name]
        return names

    def backward(self, state, grads_out: dict[str, np.ndarray]):
        trunk_acts, head_states = state
        grads = {}
        grad_trunk = np.zeros_like(trunk_acts[-1])
        for name, head in self.heads.items():
            if isinstance(head, TreeNetwork):
                g_in, g = head.backward(head_states[name], grads_out)
            else:
                g_in, g = head.backward(head_states[name], grads_out[name])
            grad_trunk += g_in
            grads.update({f"{name}/{k}": v for k, v in g.items()})
        grad_x, g = self.trunk.backward(trunk_acts, grad_trunk)
        grads.update({f"trunk/{k}": v for k, v in g.items()})
        return grad_x, grads

    def parameters(self):
        params = {f"trunk/{k}": v for k, v in self.trunk.parameters().items()}
        for name, head in self.heads.items():
            params.update({f"{name}/{k}": v for k, v in head.parameters().items()})
        return params

    def _owner(self, symbol):
        if symbol in self.trunk.blocks:
            return self.trunk
        for head in self.heads.values():
            if symbol in head.blocks:
                return head
        raise KeyError(symbol)

    def block_of(self, key: str) -> str:
        part, rest = key.split("/", 1)
        return (self.trunk if part == "trunk" else self.heads[part]).block_of(rest)

    def block_params(self, symbol):
        return self._owner(symbol).block_params(symbol)

    def block_shapes(self, symbol):
        return self._owner(symbol).block_shapes(symbol)

    def set_block_params(self, symbol, arrays):
        self._owner(symbol).set_block_params(symbol, arrays)

    def fresh_block_params(self, symbol, seed):
        return self._owner(symbol).fresh_block_params(symbol, seed)

    def reinit_block(self, symbol, seed):
        self._owner(symbol).reinit_block(symbol, seed)

    def param_count(self, symbol: str | None = None) -> int:
        if symbol:
            return self._owner(symbol).param_count(symbol)
        return int(sum(a.size for a in self.parameters().values()))


def head_input(net: "Network | TreeNetwork"):
    return net.input_shape

"""Candidate operations, mixed-op relaxation, cell DAG and discretization.

A cell has two input nodes and ``n`` intermediate nodes. Every earlier node
feeds every intermediate node through one edge; an edge is either a
softmax-weighted mixture of all candidate ops (supernet) or a single chosen
op (discrete model). The cell output concatenates the intermediate nodes and
projects back to the cell width with a 1x1 convolution.
"""

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConstructionError, DimensionError, InvalidEncodingError


class OpKind(IntEnum):
    std_conv_3 = 0
    std_conv_5 = 1
    std_conv_7 = 2
    sep_conv_3 = 3
    sep_conv_5 = 4
    sep_conv_7 = 5
    dil2_conv_3 = 6
    dil3_conv_3 = 7


ALL_OPS = tuple(OpKind)
NUM_OPS = len(ALL_OPS)

# kind -> (separable, kernel size, dilation)
_GEOMETRY = {
    OpKind.std_conv_3: (False, 3, 1),
    OpKind.std_conv_5: (False, 5, 1),
    OpKind.std_conv_7: (False, 7, 1),
    OpKind.sep_conv_3: (True, 3, 1),
    OpKind.sep_conv_5: (True, 5, 1),
    OpKind.sep_conv_7: (True, 7, 1),
    OpKind.dil2_conv_3: (False, 3, 2),
    OpKind.dil3_conv_3: (False, 3, 3),
}


def op_param_shapes(kind, channels):
    separable, k, _ = _GEOMETRY[kind]
    if separable:
        return {"dw": (channels, 1, k, k), "pw": (channels, channels, 1, 1)}
    return {"w": (channels, channels, k, k)}


def apply_op(kind, x, params):
    """Run candidate op ``kind``: its convolution(s) followed by ReLU."""
    separable, _, dilation = _GEOMETRY[kind]
    if separable:
        c = x.shape[1]
        y = ad.conv2d(x, params["dw"], groups=c)
        y = ad.conv2d(y, params["pw"])
    else:
        y = ad.conv2d(x, params["w"], dilation=dilation)
    return ad.relu(y)


@dataclass(frozen=True)
class CellTopology:
    num_intermediate: int = 2
    num_inputs: int = 2
    edges: tuple = None

    def __post_init__(self):
        if self.num_inputs != 2:
            raise ConstructionError("cells take exactly two inputs")
        if self.num_intermediate < 1:
            raise ConstructionError("a cell needs at least one intermediate node")
        if self.edges is None:
            edges = tuple((i, j) for j in range(2, 2 + self.num_intermediate) for i in range(j))
            object.__setattr__(self, "edges", edges)
        else:
            edges = tuple(tuple(e) for e in self.edges)
            last = 2 + self.num_intermediate
            for i, j in edges:
                if j < 2:
                    raise ConstructionError(f"edge ({i},{j}) points into an input node")
                if not 0 <= i < j < last:
                    raise ConstructionError(f"edge ({i},{j}) violates node order")
            object.__setattr__(self, "edges", edges)

    @property
    def num_edges(self):
        return len(self.edges)

    def incoming(self, node):
        return [(e, i) for e, (i, j) in enumerate(self.edges) if j == node]

    @classmethod
    def for_edges(cls, num_edges):
        """Full topology whose edge count is ``num_edges``."""
        n, total = 0, 0
        while total < num_edges:
            total += 2 + n
            n += 1
        if total != num_edges:
            raise ConstructionError(f"no full cell topology has {num_edges} edges")
        return cls(num_intermediate=n)


@dataclass
class ArchEncoding:
    """Architecture logits, one row of ``NUM_OPS`` per cell edge."""

    logits: np.ndarray

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64)
        if self.logits.ndim != 2 or self.logits.shape[1] != NUM_OPS:
            raise DimensionError(f"logits must be [E, {NUM_OPS}], got {self.logits.shape}")

    @classmethod
    def uniform(cls, num_edges):
        return cls(np.zeros((num_edges, NUM_OPS)))

    @property
    def num_edges(self):
        return self.logits.shape[0]

    def probabilities(self):
        z = self.logits - self.logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class DiscreteArch:
    chosen: tuple
    topology: CellTopology = field(default_factory=CellTopology)
    channels: int = 16
    cells: int = 3

    def __post_init__(self):
        object.__setattr__(self, "chosen", tuple(OpKind(c) for c in self.chosen))
        if len(self.chosen) != self.topology.num_edges:
            raise ConstructionError(
                f"{len(self.chosen)} ops for {self.topology.num_edges} edges")

    def to_dict(self):
        return {
            "num_intermediate": self.topology.num_intermediate,
            "edges": [list(e) for e in self.topology.edges],
            "ops": [k.name for k in self.chosen],
            "channels": self.channels,
            "cells": self.cells,
        }

    @classmethod
    def from_dict(cls, d):
        topo = CellTopology(num_intermediate=d["num_intermediate"],
                            edges=tuple(tuple(e) for e in d["edges"]))
        return cls(chosen=tuple(OpKind[name] for name in d["ops"]), topology=topo,
                   channels=d["channels"], cells=d["cells"])


def discretize(arch, topology=None, channels=16, cells=3):
    """Pick the argmax op on every edge; ties go to the lowest OpKind."""
    logits = arch.logits if isinstance(arch, ArchEncoding) else np.asarray(arch)
    if np.isnan(logits).any():
        raise InvalidEncodingError("architecture logits contain NaN")
    if topology is None:
        topology = CellTopology.for_edges(logits.shape[0])
    if logits.shape[0] != topology.num_edges:
        raise ConstructionError(f"{logits.shape[0]} logit rows for {topology.num_edges} edges")
    chosen = tuple(OpKind(int(i)) for i in np.argmax(logits, axis=1))
    return DiscreteArch(chosen=chosen, topology=topology, channels=channels, cells=cells)


# forward passes -----------------------------------------------------------------

def _edge_params(params, prefix, kind):
    head = f"{prefix}{kind.name}."
    return {k[len(head):]: v for k, v in params.items() if k.startswith(head)}


def _weighted_sum(x, weights, params, prefix, kinds):
    out = None
    for o, kind in enumerate(kinds):
        term = weights[o] * apply_op(kind, x, _edge_params(params, prefix, kind))
        out = term if out is None else out + term
    return out


def mixed_op_forward(x, edge_logits, edge_params, kinds=ALL_OPS, prefix=""):
    """Softmax(edge_logits)-weighted sum of the candidate op outputs.

    ``edge_params`` maps ``"<kind name>.<w|dw|pw>"`` (optionally behind
    ``prefix``) to kernels. ``kinds`` restricts the candidate list.
    """
    edge_logits = ad.as_tensor(edge_logits)
    if edge_logits.shape != (len(kinds),):
        raise DimensionError(f"{edge_logits.shape} logits for {len(kinds)} ops")
    c = x.shape[1]
    for kind in kinds:
        for name, shape in op_param_shapes(kind, c).items():
            p = edge_params.get(f"{prefix}{kind.name}.{name}")
            if p is None or p.shape != shape:
                got = None if p is None else p.shape
                raise DimensionError(f"{kind.name}.{name}: expected {shape}, got {got}")
    return _weighted_sum(x, ad.softmax(edge_logits), edge_params, prefix, kinds)


def cell_forward(in_a, in_b, arch, params, topology=None, prefix=""):
    """One cell. ``arch`` is either logits ([E, 8] array/Tensor or
    ArchEncoding) for the supernet, or a DiscreteArch / sequence of OpKind.
    """
    if in_a.shape != in_b.shape:
        raise DimensionError(f"cell inputs differ: {in_a.shape} vs {in_b.shape}")
    if isinstance(arch, DiscreteArch):
        topology = arch.topology
        arch = arch.chosen
    topology = topology or CellTopology()
    if isinstance(arch, ArchEncoding):
        arch = arch.logits
    if isinstance(arch, (Tensor, np.ndarray)):
        weights = ad.softmax(ad.as_tensor(arch), axis=-1)
        edge_fn = lambda e, x: _weighted_sum(x, weights[e], params, f"{prefix}edge{e}.", ALL_OPS)
    else:
        chosen = tuple(OpKind(k) for k in arch)
        edge_fn = lambda e, x: apply_op(chosen[e], x, _edge_params(params, f"{prefix}edge{e}.", chosen[e]))
    nodes = [in_a, in_b]
    for j in range(2, 2 + topology.num_intermediate):
        acc = None
        for e, i in topology.incoming(j):
            term = edge_fn(e, nodes[i])
            acc = term if acc is None else acc + term
        nodes.append(acc)
    cat = ad.concat(nodes[2:], axis=1) if topology.num_intermediate > 1 else nodes[2]
    return ad.conv2d(cat, params[f"{prefix}proj.w"])


class CellStack:
    """Stem conv, a chain of cells, and a head conv back to 2 channels.

    Each cell reads the outputs of the two cells before it; the first cell
    sees the stem output twice. ``arch=None`` builds the supernet.
    """

    def __init__(self, channels=16, cells=3, topology=None, arch=None, in_channels=2):
        if arch is not None:
            topology = arch.topology
            channels, cells = arch.channels, arch.cells
        self.channels = channels
        self.cells = cells
        self.topology = topology or CellTopology()
        self.arch = arch
        self.in_channels = in_channels

    @property
    def is_supernet(self):
        return self.arch is None

    def param_shapes(self):
        c, topo = self.channels, self.topology
        shapes = {"stem.w": (c, self.in_channels, 3, 3)}
        for ci in range(self.cells):
            for e in range(topo.num_edges):
                kinds = ALL_OPS if self.arch is None else (self.arch.chosen[e],)
                for kind in kinds:
                    for name, shape in op_param_shapes(kind, c).items():
                        shapes[f"cell{ci}.edge{e}.{kind.name}.{name}"] = shape
            shapes[f"cell{ci}.proj.w"] = (c, topo.num_intermediate * c, 1, 1)
        shapes["head.w"] = (self.in_channels, c, 3, 3)
        return shapes

    def init_params(self, rng, dtype=np.float64):
        params = {}
        for name, shape in self.param_shapes().items():
            fan_in = int(np.prod(shape[1:]))
            if name.endswith(".w") and name.split(".")[-2] in {k.name for k in ALL_OPS}:
                std = np.sqrt(2.0 / fan_in)
            elif name.endswith(".dw") or name.endswith(".pw"):
                std = np.sqrt(2.0 / fan_in)
            elif name == "head.w":
                std = 0.1 * np.sqrt(1.0 / fan_in)
            else:
                std = np.sqrt(1.0 / fan_in)
            params[name] = (rng.standard_normal(shape) * std).astype(dtype)
        return params

    def forward(self, params, x, alpha=None):
        if self.arch is None:
            if alpha is None:
                raise ConstructionError("supernet forward needs architecture logits")
            arch = ad.as_tensor(alpha)
        else:
            arch = self.arch.chosen
        stem = ad.conv2d(x, params["stem.w"])
        prev_prev, prev = stem, stem
        for ci in range(self.cells):
            out = cell_forward(prev_prev, prev, arch, params, self.topology, prefix=f"cell{ci}.")
            prev_prev, prev = prev, out
        return ad.conv2d(prev, params["head.w"])

"""ConvLSTM cell, sequence layer, two-layer network and checkpoint I/O.

Per time step the cell computes (``*`` is same-padded convolution, ``.`` the
elementwise product, ``g`` the configured cell activation)::

    I = sigmoid(W_xi * X + W_hi * H_prev + W_ci . C_prev + b_i)
    F = sigmoid(W_xf * X + W_hf * H_prev + W_cf . C_prev + b_f)
    C = F . C_prev + I . g(W_xc * X + W_hc * H_prev + b_c)
    O = sigmoid(W_xo * X + W_ho * H_prev + W_co . C + b_o)
    H = O . g(C)

The network is layer1 (full sequence) -> layer2 (last state) -> 1x1 linear head.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .tensor import (
    ACTIVATIONS,
    NonFiniteError,
    ShapeError,
    as_grid,
    conv2d_same,
    sigmoid,
)

GATES = ("i", "f", "c", "o")
INPUT_KERNELS = tuple(f"W_x{g}" for g in GATES)
STATE_KERNELS = tuple(f"W_h{g}" for g in GATES)
PEEPHOLES = ("W_ci", "W_cf", "W_co")
BIASES = tuple(f"b_{g}" for g in GATES)
CELL_TENSORS = INPUT_KERNELS + STATE_KERNELS + PEEPHOLES + BIASES
LAYERS = ("layer1", "layer2")
GATE_NAMES = {"i": "input gate", "f": "forget gate", "c": "cell candidate", "o": "output gate"}

CHECKPOINT_MAGIC = "# convlstm-rain checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetworkSpec:
    layer1_filters: int = 128
    layer2_filters: int = 64
    kernel: tuple[int, int] = (2, 2)
    activation: str = "relu"
    input_channels: int = 11
    grid: tuple[int, int] = (2, 2)
    peepholes: bool = True

    def __post_init__(self):
        if self.layer1_filters < 1 or self.layer2_filters < 1:
            raise ValueError("filter counts must be >= 1")
        if len(self.kernel) != 2 or min(self.kernel) < 1:
            raise ValueError(f"kernel dims must be >= 1, got {self.kernel}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {sorted(ACTIVATIONS)}, got {self.activation!r}")
        if self.input_channels < 1 or min(self.grid) < 1:
            raise ValueError("input_channels and grid dims must be >= 1")

    def layer_shapes(self, layer):
        """(filters, in_channels) for ``layer1``/``layer2``."""
        if layer == "layer1":
            return self.layer1_filters, self.input_channels
        return self.layer2_filters, self.layer1_filters

    def param_shapes(self):
        """Ordered mapping of parameter name -> shape."""
        kh, kw = self.kernel
        h, w = self.grid
        shapes = {}
        for layer in LAYERS:
            filters, in_ch = self.layer_shapes(layer)
            for name in INPUT_KERNELS:
                shapes[f"{layer}.{name}"] = (filters, in_ch, kh, kw)
            for name in STATE_KERNELS:
                shapes[f"{layer}.{name}"] = (filters, filters, kh, kw)
            for name in PEEPHOLES:
                shapes[f"{layer}.{name}"] = (filters, h, w)
            for name in BIASES:
                shapes[f"{layer}.{name}"] = (filters,)
        shapes["head.W"] = (1, self.layer2_filters, 1, 1)
        shapes["head.b"] = (1,)
        return shapes

    def frozen_names(self):
        """Parameters held at zero (peepholes when the no-peephole mode is selected)."""
        if self.peepholes:
            return ()
        return tuple(f"{layer}.{name}" for layer in LAYERS for name in PEEPHOLES)


@dataclass(frozen=True)
class CellParams:
    W_xi: np.ndarray
    W_xf: np.ndarray
    W_xc: np.ndarray
    W_xo: np.ndarray
    W_hi: np.ndarray
    W_hf: np.ndarray
    W_hc: np.ndarray
    W_ho: np.ndarray
    W_ci: np.ndarray
    W_cf: np.ndarray
    W_co: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_c: np.ndarray
    b_o: np.ndarray

    @classmethod
    def from_flat(cls, params, prefix):
        return cls(**{name: params[f"{prefix}.{name}"] for name in CELL_TENSORS})

    @property
    def filters(self):
        return self.W_xi.shape[0]

    @property
    def in_channels(self):
        return self.W_xi.shape[1]

    @property
    def grid(self):
        return self.W_ci.shape[1:]

    def validate(self):
        f, c, kh, kw = self.W_xi.shape
        h, w = self.grid
        expect = {}
        for name in INPUT_KERNELS:
            expect[name] = (f, c, kh, kw)
        for name in STATE_KERNELS:
            expect[name] = (f, f, kh, kw)
        for name in PEEPHOLES:
            expect[name] = (f, h, w)
        for name in BIASES:
            expect[name] = (f,)
        for name, shape in expect.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ShapeError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise NonFiniteError(f"{name} contains non-finite values")

    def stacked(self):
        """Gate-stacked input kernel, state kernel and bias, gate order i, f, c, o."""
        wx = np.concatenate([getattr(self, n) for n in INPUT_KERNELS], axis=0)
        wh = np.concatenate([getattr(self, n) for n in STATE_KERNELS], axis=0)
        b = np.concatenate([getattr(self, n) for n in BIASES], axis=0)
        return wx, wh, b


@dataclass(frozen=True)
class CellState:
    H: np.ndarray
    C: np.ndarray

    @classmethod
    def zeros(cls, filters, grid, batch_shape=()):
        shape = tuple(batch_shape) + (filters,) + tuple(grid)
        return cls(np.zeros(shape), np.zeros(shape))


def _check_gate(arr, gate):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite pre-activation in {GATE_NAMES[gate]}")


def cell_step(params, x, prev, activation="tanh"):
    """Advance one ConvLSTM cell by one time step; returns the new :class:`CellState`."""
    params.validate()
    x = as_grid(x, "x")
    if x.shape[-3] != params.in_channels:
        raise ShapeError(f"x has {x.shape[-3]} channels, cell expects {params.in_channels}")
    if x.shape[-2:] != params.grid:
        raise ShapeError(f"x grid {x.shape[-2:]} does not match peephole grid {params.grid}")
    state_shape = x.shape[:-3] + (params.filters,) + params.grid
    if prev.H.shape != state_shape or prev.C.shape != state_shape:
        raise ShapeError(f"previous state shapes {prev.H.shape}/{prev.C.shape}, expected {state_shape}")
    g = ACTIVATIONS[activation][0]
    p = params

    a_i = conv2d_same(x, p.W_xi) + conv2d_same(prev.H, p.W_hi) + p.W_ci * prev.C + p.b_i[:, None, None]
    _check_gate(a_i, "i")
    i = sigmoid(a_i)
    a_f = conv2d_same(x, p.W_xf) + conv2d_same(prev.H, p.W_hf) + p.W_cf * prev.C + p.b_f[:, None, None]
    _check_gate(a_f, "f")
    f = sigmoid(a_f)
    a_c = conv2d_same(x, p.W_xc) + conv2d_same(prev.H, p.W_hc) + p.b_c[:, None, None]
    _check_gate(a_c, "c")
    c = f * prev.C + i * g(a_c)
    a_o = conv2d_same(x, p.W_xo) + conv2d_same(prev.H, p.W_ho) + p.W_co * c + p.b_o[:, None, None]
    _check_gate(a_o, "o")
    o = sigmoid(a_o)
    return CellState(H=o * g(c), C=c)


def _run_layer(params, seq, activation, keep_cache=False):
    """Unrolled layer over ``seq`` shaped (batch, time, channels, h, w).

    Returns the stacked hidden states (batch, time, filters, h, w) and, when
    requested, the per-step intermediates needed for backpropagation.
    """
    g = ACTIVATIONS[activation][0]
    batch, steps = seq.shape[:2]
    n = params.filters
    wx, wh, b = params.stacked()
    # input contributions for every step in one pass
    xin = conv2d_same(seq, wx, b, validate=False)
    h_prev = np.zeros((batch, n) + params.grid)
    c_prev = np.zeros_like(h_prev)
    hs = np.empty((batch, steps, n) + params.grid)
    cache = [] if keep_cache else None
    for t in range(steps):
        a = xin[:, t] + conv2d_same(h_prev, wh, validate=False)
        a_i = a[:, :n] + params.W_ci * c_prev
        a_f = a[:, n:2 * n] + params.W_cf * c_prev
        a_c = a[:, 2 * n:3 * n]
        i = sigmoid(a_i)
        f = sigmoid(a_f)
        gc = g(a_c)
        c = f * c_prev + i * gc
        a_o = a[:, 3 * n:] + params.W_co * c
        o = sigmoid(a_o)
        gC = g(c)
        h = o * gC
        hs[:, t] = h
        if keep_cache:
            cache.append(dict(c_prev=c_prev, i=i, f=f, a_c=a_c, gc=gc, c=c, o=o, gC=gC))
        h_prev, c_prev = h, c
    if not (np.isfinite(hs).all() and np.isfinite(c_prev).all()):
        _diagnose(params, seq, activation)
    return hs, cache


def _diagnose(params, seq, activation):
    """Replay a layer step by step so the error names the first bad gate."""
    state = CellState.zeros(params.filters, params.grid, seq.shape[:1])
    for t in range(seq.shape[1]):
        try:
            state = cell_step(params, seq[:, t], state, activation)
        except NonFiniteError as exc:
            raise NonFiniteError(f"step {t}: {exc}") from None
        if not (np.isfinite(state.H).all() and np.isfinite(state.C).all()):
            raise NonFiniteError(f"non-finite cell state at step {t}")
    raise NonFiniteError("non-finite layer output")


def _as_seq(seq, name="sequence"):
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 5:
        raise ShapeError(f"{name} must be (batch, time, channels, h, w), got shape {seq.shape}")
    if seq.shape[1] == 0:
        raise ShapeError(f"{name} is empty (zero time steps)")
    if not np.all(np.isfinite(seq)):
        raise NonFiniteError(f"{name} contains non-finite values")
    return seq


def layer_forward(params, seq, return_sequences=False, activation="tanh"):
    """Run a ConvLSTM layer from zero initial state over a (batch, time, C, h, w) sequence.

    Returns every hidden state (batch, time, filters, h, w) when
    ``return_sequences`` is true, else only the last one (batch, filters, h, w).
    """
    params.validate()
    seq = _as_seq(seq)
    if seq.shape[2] != params.in_channels or seq.shape[3:] != params.grid:
        raise ShapeError(
            f"sequence frames are {seq.shape[2:]}, layer expects ({params.in_channels}, *{params.grid})"
        )
    hs, _ = _run_layer(params, seq, activation)
    return hs if return_sequences else hs[:, -1]


def _check_batch(spec, batch):
    batch = _as_seq(batch, "batch")
    if batch.shape[2] != spec.input_channels:
        raise ShapeError(f"batch has {batch.shape[2]} channels, network expects {spec.input_channels}")
    if batch.shape[3:] != tuple(spec.grid):
        raise ShapeError(f"batch grid {batch.shape[3:]} does not match network grid {tuple(spec.grid)}")
    return batch


def forward_with_cache(spec, params, batch, keep_cache=True):
    """Network forward pass that also returns the intermediates used by backprop."""
    batch = _check_batch(spec, batch)
    cell1 = CellParams.from_flat(params, "layer1")
    cell2 = CellParams.from_flat(params, "layer2")
    hs1, cache1 = _run_layer(cell1, batch, spec.activation, keep_cache)
    hs2, cache2 = _run_layer(cell2, hs1, spec.activation, keep_cache)
    h_last = hs2[:, -1]
    pred = conv2d_same(h_last, params["head.W"], params["head.b"], validate=False)
    cache = dict(batch=batch, hs1=hs1, hs2=hs2, cache1=cache1, cache2=cache2, h_last=h_last)
    return pred, cache


def network_forward(spec, params, batch):
    """Predict a (batch, 1, h, w) field in normalized units from a (batch, time, C, h, w) input."""
    pred, _ = forward_with_cache(spec, params, batch, keep_cache=False)
    return pred


def init_params(spec, seed):
    """Glorot-uniform kernels, zero peepholes and biases, forget-gate bias 1.0."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in spec.param_shapes().items():
        if len(shape) == 4:
            limit = glorot_limit(shape)
            params[name] = rng.uniform(-limit, limit, size=shape)
        elif name.endswith(".b_f"):
            params[name] = np.ones(shape)
        else:
            params[name] = np.zeros(shape)
    return params


def glorot_limit(shape):
    out_ch, in_ch, kh, kw = shape
    return math.sqrt(6.0 / (in_ch * kh * kw + out_ch * kh * kw))


def check_params(spec, params):
    shapes = spec.param_shapes()
    missing = [k for k in shapes if k not in params]
    extra = [k for k in params if k not in shapes]
    if missing or extra:
        raise ShapeError(f"parameter set mismatch: missing {missing}, unexpected {extra}")
    for name, shape in shapes.items():
        if params[name].shape != shape:
            raise ShapeError(f"{name} has shape {params[name].shape}, expected {shape}")


# --- checkpoint I/O -------------------------------------------------------

_SPEC_PARSERS = {
    "layer1_filters": int,
    "layer2_filters": int,
    "kernel": lambda s: tuple(int(v) for v in s.split(",")),
    "activation": str,
    "input_channels": int,
    "grid": lambda s: tuple(int(v) for v in s.split(",")),
    "peepholes": lambda s: s == "true",
}


def _fmt_spec_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def save_checkpoint(path, spec, params, meta=None):
    """Write a text checkpoint.

    Layout: a magic line, ``format_version=1``, ``spec.<field>=<value>`` lines,
    optional ``meta.<key>=<value>`` lines, then for every tensor a line
    ``tensor <name> <dim> <dim> ...`` followed by its row-major values, one
    shortest-round-trip decimal per line.
    """
    check_params(spec, params)
    lines = [CHECKPOINT_MAGIC, f"format_version={CHECKPOINT_VERSION}"]
    for key, value in asdict(spec).items():
        lines.append(f"spec.{key}={_fmt_spec_value(tuple(value) if isinstance(value, list) else value)}")
    for key, value in (meta or {}).items():
        lines.append(f"meta.{key}={value}")
    for name in spec.param_shapes():
        arr = params[name]
        lines.append("tensor " + " ".join([name] + [str(d) for d in arr.shape]))
        lines.extend(repr(float(v)) for v in arr.ravel())
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path):
    """Read a checkpoint written by :func:`save_checkpoint`; returns ``(spec, params, meta)``."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a convlstm-rain checkpoint")
    if lines[1] != f"format_version={CHECKPOINT_VERSION}":
        raise ValueError(f"{path}: unsupported checkpoint version line {lines[1]!r}")
    spec_kw, meta, params = {}, {}, {}
    pos = 2
    while pos < len(lines) and not lines[pos].startswith("tensor "):
        key, _, value = lines[pos].partition("=")
        section, _, field = key.partition(".")
        if section == "spec":
            if field not in _SPEC_PARSERS:
                raise ValueError(f"{path}:{pos + 1}: unknown spec field {field!r}")
            spec_kw[field] = _SPEC_PARSERS[field](value)
        elif section == "meta":
            meta[field] = value
        else:
            raise ValueError(f"{path}:{pos + 1}: unexpected header line {lines[pos]!r}")
        pos += 1
    spec = NetworkSpec(**spec_kw)
    while pos < len(lines):
        parts = lines[pos].split()
        if parts[0] != "tensor":
            raise ValueError(f"{path}:{pos + 1}: expected a tensor header")
        name, shape = parts[1], tuple(int(d) for d in parts[2:])
        size = math.prod(shape)
        values = lines[pos + 1:pos + 1 + size]
        if len(values) != size:
            raise ValueError(f"{path}: tensor {name} is truncated")
        params[name] = np.array([float(v) for v in values], dtype=np.float64).reshape(shape)
        pos += 1 + size
    check_params(spec, params)
    return spec, params, meta


__all__ = [
    "CellParams",
    "CellState",
    "NetworkSpec",
    "cell_step",
    "layer_forward",
    "network_forward",
    "forward_with_cache",
    "init_params",
    "glorot_limit",
    "save_checkpoint",
    "load_checkpoint",
    "CELL_TENSORS",
    "LAYERS",
]

"""Plain, simple-highway and squared-residual tanh MLPs on the autodiff tape.

Hidden layer ``k`` computes ``h = W q + b`` and then one of

* plain:            ``q = tanh(h)``
* simple highway:   ``q = tanh(h) + h``       (on skip layers)
* squared residual: ``q = tanh(h) + h * h``   (on skip layers)

Skip layers are the hidden layers whose 1-based index is a multiple of
``skip_period`` (default 2: layers 2, 4, ...). The output layer is affine.
The skip reuses ``h``, so all three architectures have identical parameter
counts.

:func:`forward_jets` also propagates first and second derivatives with
respect to chosen input coordinates through the same layers, so PDE
residuals become ordinary tape expressions whose parameter gradients are
exact.
"""
from __future__ import annotations

import enum
import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, resolve_dtype

PRNG_ID = "numpy.random.PCG64(SeedSequence([seed, stream]))"


class Arch(str, enum.Enum):
    PLAIN = "plain"
    SIMPLE_HIGHWAY = "simplehw"
    SQUARED_RESIDUAL = "sqrresnet"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            names = ", ".join(a.value for a in cls)
            raise ValueError(f"unknown architecture {value!r} (expected one of {names})") from None


ALL_ARCHS = (Arch.PLAIN, Arch.SIMPLE_HIGHWAY, Arch.SQUARED_RESIDUAL)


@dataclass(frozen=True)
class NetConfig:
    d_in: int
    d_out: int
    n_layers: int
    n_neurons: int = 50
    arch: Arch = Arch.PLAIN
    skip_period: int = 2
    seed: int = 12345
    precision: str = "f64"

    def __post_init__(self):
        object.__setattr__(self, "arch", Arch.parse(self.arch))
        for name in ("d_in", "d_out", "n_layers", "n_neurons", "skip_period"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        resolve_dtype(self.precision)

    @property
    def widths(self):
        return [self.d_in] + [self.n_neurons] * self.n_layers + [self.d_out]


@dataclass
class LayerParams:
    W: np.ndarray  # (out_width, in_width)
    b: np.ndarray  # (out_width,)


@dataclass
class MLPParams:
    layers: list = field(default_factory=list)

    @property
    def n_params(self):
        return sum(ly.W.size + ly.b.size for ly in self.layers)

    @property
    def dtype(self):
        return self.layers[0].W.dtype

    def flatten(self):
        """Concatenate ``W1, b1, W2, b2, ...`` into one float64 vector."""
        return np.concatenate([np.concatenate([ly.W.ravel(), ly.b]) for ly in self.layers]).astype(np.float64)

    def with_flat(self, vec, dtype=None):
        """New params of the same layout filled from ``vec``."""
        dtype = dtype or self.dtype
        out, pos = [], 0
        for ly in self.layers:
            nw, nb = ly.W.size, ly.b.size
            W = np.asarray(vec[pos:pos + nw], dtype=dtype).reshape(ly.W.shape)
            pos += nw
            b = np.asarray(vec[pos:pos + nb], dtype=dtype)
            pos += nb
            out.append(LayerParams(W, b))
        if pos != len(vec):
            raise ValueError(f"flat vector has {len(vec)} entries, layout needs {pos}")
        return MLPParams(out)

    def copy(self):
        return MLPParams([LayerParams(ly.W.copy(), ly.b.copy()) for ly in self.layers])


def glorot_bound(fan_in, fan_out):
    return math.sqrt(6.0 / (fan_in + fan_out))


def init_glorot(config: NetConfig) -> MLPParams:
    """Glorot-uniform weights, zero biases.

    Layer ``k`` (1-based) draws from its own PCG64 stream seeded by
    ``SeedSequence([seed, k])``, so a layer's weights do not depend on the
    other layers' shapes.
    """
    dtype = resolve_dtype(config.precision)
    widths = config.widths
    layers = []
    for k in range(1, len(widths)):
        fan_in, fan_out = widths[k - 1], widths[k]
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([config.seed, k])))
        bound = glorot_bound(fan_in, fan_out)
        W = rng.uniform(-bound, bound, size=(fan_out, fan_in)).astype(dtype)
        layers.append(LayerParams(W, np.zeros(fan_out, dtype=dtype)))
    return MLPParams(layers)


def zero_params(config: NetConfig) -> MLPParams:
    dtype = resolve_dtype(config.precision)
    w = config.widths
    return MLPParams([LayerParams(np.zeros((w[k], w[k - 1]), dtype), np.zeros(w[k], dtype)) for k in range(1, len(w))])


def has_skip(layer, skip_period):
    """Whether 1-based hidden layer ``layer`` carries the skip term."""
    return layer % skip_period == 0


def count_skips(n_layers, skip_period):
    return sum(has_skip(k, skip_period) for k in range(1, n_layers + 1))


def bind(params, tape: Tape):
    """Register ``params`` on ``tape`` once; returns ``[(W_id, b_id), ...]``.

    Repeated calls with the same params object on the same tape reuse the
    nodes, so several forward passes share one set of parameter adjoints.
    """
    if isinstance(params, BoundParams):
        return params
    for obj, ids in tape._bindings:
        if obj is params:
            return ids
    ids = BoundParams((tape.parameter(ly.W), tape.parameter(ly.b)) for ly in params.layers)
    tape._bindings.append((params, ids))
    return ids


class BoundParams(list):
    """Parameter node ids on a specific tape, in layer order."""


def _check_input(bound, tape, x):
    x = np.asarray(x)
    if x.ndim != 2:
        raise ValueError(f"input must be 2-D (n, d_in), got shape {x.shape}")
    d_in = tape.value(bound[0][0]).shape[1]
    if x.shape[1] != d_in:
        raise ValueError(f"input width {x.shape[1]} does not match d_in={d_in}")
    return x


def forward(params, arch, x, tape: Tape, skip_period=2):
    """Network output for batch ``x`` (n, d_in) as a tape node (n, d_out)."""
    arch = Arch.parse(arch)
    bound = bind(params, tape)
    x = _check_input(bound, tape, x)
    q = tape.constant(x)
    for k, (W, b) in enumerate(bound[:-1], start=1):
        h = tape.broadcast_add(tape.matmul(q, W, trans_b=True), b)
        q = tape.tanh(h)
        if arch is not Arch.PLAIN and has_skip(k, skip_period):
            skip = h if arch is Arch.SIMPLE_HIGHWAY else tape.square(h)
            q = tape.add(q, skip)
    W, b = bound[-1]
    return tape.broadcast_add(tape.matmul(q, W, trans_b=True), b)


@dataclass
class Jet:
    """Output plus first and second derivatives along one input coordinate."""

    u: int
    u_d: int
    u_dd: int | None


@dataclass
class JetBundle:
    """Shared value lane with derivative lanes for several coordinates."""

    u: int
    d: dict
    dd: dict

    def jet(self, coord):
        return Jet(self.u, self.d[coord], self.dd.get(coord))


def _add_opt(tape, a, b):
    if a is None:
        return b
    if b is None:
        return a
    return tape.add(a, b)


def forward_jets(params, arch, x, tape: Tape, first=(), second=(), skip_period=2):
    """Forward pass carrying derivative lanes.

    ``first`` lists input coordinates that need du/dx_c; ``second`` those
    that need d2u/dx_c2 (which implies the first derivative too). The value
    lane uses exactly the primitive sequence of :func:`forward`.

    Per hidden layer, with ``a = tanh(h)`` and ``s = 1 - a^2``::

        h_d  = W q_d          h_dd = W q_dd
        a_d  = s h_d          a_dd = -2 a s h_d^2 + s h_dd

    plus ``h_d, h_dd`` (simple highway) or ``2 h h_d, 2 (h_d^2 + h h_dd)``
    (squared residual) on skip layers.
    """
    arch = Arch.parse(arch)
    bound = bind(params, tape)
    x = _check_input(bound, tape, x)
    n, d_in = x.shape
    coords = sorted(set(first) | set(second))
    for c in coords:
        if not 0 <= c < d_in:
            raise ValueError(f"coordinate {c} out of range for d_in={d_in}")
    second = set(second)

    q = tape.constant(x)
    qd = {}
    qdd = {}
    for c in coords:
        seed = np.zeros((n, d_in))
        seed[:, c] = 1.0
        qd[c] = tape.constant(seed)
        if c in second:
            qdd[c] = None  # exactly zero at the input

    for k, (W, b) in enumerate(bound[:-1], start=1):
        h = tape.broadcast_add(tape.matmul(q, W, trans_b=True), b)
        hd = {c: tape.matmul(qd[c], W, trans_b=True) for c in coords}
        hdd = {c: (None if v is None else tape.matmul(v, W, trans_b=True)) for c, v in qdd.items()}
        a = tape.tanh(h)
        s = tape.subtract(tape.ones(tape.value(a).shape), tape.square(a)) if coords else None
        ad = {c: tape.multiply(s, hd[c]) for c in coords}
        add = {}
        if hdd:
            curv = tape.scale(tape.multiply(a, s), -2.0)
            for c in hdd:
                term = tape.multiply(curv, tape.square(hd[c]))
                if hdd[c] is not None:
                    term = tape.add(term, tape.multiply(s, hdd[c]))
                add[c] = term
        if arch is not Arch.PLAIN and has_skip(k, skip_period):
            if arch is Arch.SIMPLE_HIGHWAY:
                q = tape.add(a, h)
                qd = {c: tape.add(ad[c], hd[c]) for c in coords}
                qdd = {c: _add_opt(tape, add[c], hdd[c]) for c in add}
            else:
                q = tape.add(a, tape.square(h))
                qd = {c: tape.add(ad[c], tape.scale(tape.multiply(h, hd[c]), 2.0)) for c in coords}
                new = {}
                for c in add:
                    inner = tape.square(hd[c])
                    if hdd[c] is not None:
                        inner = tape.add(inner, tape.multiply(h, hdd[c]))
                    new[c] = tape.add(add[c], tape.scale(inner, 2.0))
                qdd = new
        else:
            q, qd, qdd = a, ad, add

    W, b = bound[-1]
    u = tape.broadcast_add(tape.matmul(q, W, trans_b=True), b)
    ud = {c: tape.matmul(qd[c], W, trans_b=True) for c in coords}
    udd = {}
    for c, v in qdd.items():
        if v is None:
            v = tape.constant(np.zeros(tape.value(u).shape))
        else:
            v = tape.matmul(v, W, trans_b=True)
        udd[c] = v
    return JetBundle(u, ud, udd)


def forward_jet(params, arch, x, coord, tape: Tape, skip_period=2) -> Jet:
    """Value, first and second derivative along input coordinate ``coord``."""
    d_in = np.asarray(x).shape[1]
    if not 0 <= coord < d_in:
        raise ValueError(f"coordinate {coord} out of range for d_in={d_in}")
    bundle = forward_jets(params, arch, x, tape, first=(coord,), second=(coord,), skip_period=skip_period)
    return bundle.jet(coord)


def predict(params, arch, x, skip_period=2, precision=None):
    """Plain numpy evaluation through a throwaway tape."""
    tape = Tape(precision or _precision_of(params))
    return tape.value(forward(params, arch, x, tape, skip_period)).copy()


def _precision_of(params):
    return "f32" if params.dtype == np.float32 else "f64"


def frobenius_norms(params: MLPParams):
    """Per-layer Frobenius norm of the weight matrices (biases excluded)."""
    return np.array([float(np.sqrt(np.sum(ly.W.astype(np.float64) ** 2))) for ly in params.layers])


# -- parameter snapshots -----------------------------------------------------
#
# Layout (all little-endian):
#   8 bytes   magic b"PSTBPAR1"
#   4 bytes   uint32 header length H
#   H bytes   UTF-8 JSON header: arch, n_layers, n_neurons, d_in, d_out,
#             precision, seed, skip_period, widths
#   payload   for each layer k = 1..K+1: W^(k) row-major, then b^(k);
#             float32 or float64 per the header's precision.

SNAPSHOT_MAGIC = b"PSTBPAR1"


def save_params(path, params: MLPParams, config: NetConfig):
    header = {
        "arch": config.arch.value,
        "n_layers": config.n_layers,
        "n_neurons": config.n_neurons,
        "d_in": config.d_in,
        "d_out": config.d_out,
        "precision": config.precision,
        "seed": config.seed,
        "skip_period": config.skip_period,
        "widths": config.widths,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    dtype = np.dtype(resolve_dtype(config.precision)).newbyteorder("<")
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for ly in params.layers:
            fh.write(np.ascontiguousarray(ly.W, dtype=dtype).tobytes())
            fh.write(np.ascontiguousarray(ly.b, dtype=dtype).tobytes())


def load_params(path):
    """Read a snapshot; returns ``(MLPParams, NetConfig)``."""
    with open(path, "rb") as fh:
        if fh.read(8) != SNAPSHOT_MAGIC:
            raise ValueError(f"{path}: not a parameter snapshot")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode())
        payload = fh.read()
    config = NetConfig(
        d_in=header["d_in"],
        d_out=header["d_out"],
        n_layers=header["n_layers"],
        n_neurons=header["n_neurons"],
        arch=header["arch"],
        skip_period=header["skip_period"],
        seed=header["seed"],
        precision=header["precision"],
    )
    dtype = np.dtype(resolve_dtype(config.precision)).newbyteorder("<")
    flat = np.frombuffer(payload, dtype=dtype)
    widths = config.widths
    layers, pos = [], 0
    for k in range(1, len(widths)):
        nw = widths[k] * widths[k - 1]
        W = flat[pos:pos + nw].reshape(widths[k], widths[k - 1]).astype(dtype.newbyteorder("="))
        pos += nw
        b = flat[pos:pos + widths[k]].astype(dtype.newbyteorder("="))
        pos += widths[k]
        layers.append(LayerParams(W, b))
    if pos != flat.size:
        raise ValueError(f"{path}: payload size does not match header widths")
    return MLPParams(layers), config

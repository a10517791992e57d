"""Collocation sampling, PINN loss assembly and error metrics.

The loss is ``L = l_i * L_i + l_b * L_b + l_r * L_r`` with

* ``L_r`` the mean over interior points of the squared residual norm
  (summed over the problem's equations),
* ``L_i`` the mean over initial points of the squared mismatch to the
  initial condition (summed over output components),
* ``L_b`` the sum over boundary conditions of each condition's mean squared
  mismatch. Periodic conditions pair rows of opposite faces and match the
  values and the first derivative along the periodic coordinate.

All three terms are built on one tape, so a single ``backward`` gives every
parameter gradient.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, Var
from .network import forward, forward_jets

SAMPLER_ID = "uniform-pseudorandom/PCG64"


class MissingSlotError(KeyError):
    def __str__(self):
        return str(self.args[0])


def slot_name(key):
    kind, k = key[0], key[1]
    if kind == "u":
        return f"u{k}"
    c = key[2]
    return f"du{k}/dx{c}" if kind == "d" else f"d2u{k}/dx{c}^2"


class DerivativeSlots:
    """Per-component value, first and second derivative columns of shape (n, 1).

    Keys are ``("u", k)``, ``("d", k, c)`` and ``("dd", k, c)`` for output
    component ``k`` and input coordinate ``c``. Entries are numpy arrays or
    tape-backed :class:`Var` objects.
    """

    def __init__(self, entries=None):
        self._entries = dict(entries or {})

    def _lookup(self, key):
        return self._entries.get(key)

    def get(self, key):
        val = self._lookup(key)
        if val is None:
            raise MissingSlotError(f"derivative slot {slot_name(key)} is not populated")
        return val

    def u(self, k=0):
        return self.get(("u", k))

    def d(self, c, k=0):
        return self.get(("d", k, c))

    def dd(self, c, k=0):
        return self.get(("dd", k, c))

    def rows(self, op):
        """Slots transformed by a dense row operator ``op`` of shape (m, n)."""
        op = np.asarray(op, dtype=np.float64)
        return DerivativeSlots({key: op @ np.asarray(v) for key, v in self._entries.items()})


class NetworkSlots(DerivativeSlots):
    """Slots read lazily from a :class:`~pinnstab.network.JetBundle` on a tape.

    Component columns are extracted with a constant selector matmul; row
    operators are applied the same way, so everything stays differentiable.
    """

    def __init__(self, tape: Tape, u, d=None, dd=None, d_out=1):
        super().__init__()
        self.tape = tape
        self._lanes = {("u",): u}
        for c, nid in (d or {}).items():
            self._lanes[("d", c)] = nid
        for c, nid in (dd or {}).items():
            self._lanes[("dd", c)] = nid
        self.d_out = d_out
        self._cache = {}

    def _lookup(self, key):
        if key in self._cache:
            return self._cache[key]
        kind, k = key[0], key[1]
        lane = (kind,) if kind == "u" else (kind, key[2])
        nid = self._lanes.get(lane)
        if nid is None or not 0 <= k < self.d_out:
            return None
        if self.d_out > 1:
            sel = np.zeros((1, self.d_out))
            sel[0, k] = 1.0
            nid = self.tape.matmul(nid, self.tape.constant(sel), trans_b=True)
        var = Var(self.tape, nid)
        self._cache[key] = var
        return var

    def rows(self, op):
        const = self.tape.constant(np.asarray(op, dtype=np.float64))
        lanes = {lane: self.tape.matmul(const, nid) for lane, nid in self._lanes.items()}
        out = NetworkSlots(self.tape, lanes[("u",)], d_out=self.d_out)
        out._lanes = lanes
        return out


def network_slot_provider(params, arch, tape: Tape, skip_period=2, d_out=None):
    """Callable ``(points, first, second) -> NetworkSlots`` backed by the net."""
    width = d_out or params.layers[-1].W.shape[0]

    def provide(points, first=(), second=()):
        if not first and not second:
            u = forward(params, arch, points, tape, skip_period)
            return NetworkSlots(tape, u, d_out=width)
        bundle = forward_jets(params, arch, points, tape, first, second, skip_period)
        return NetworkSlots(tape, bundle.u, bundle.d, bundle.dd, d_out=width)

    return provide


def exact_slot_provider(problem):
    """Callable giving analytic slots of the problem's closed-form solution."""
    if problem.exact_slots is None:
        raise ValueError(f"{problem.id} has no analytic slots")

    def provide(points, first=(), second=()):
        return DerivativeSlots(problem.exact_slots(np.asarray(points, dtype=np.float64)))

    return provide


@dataclass
class PointSet:
    interior: np.ndarray
    boundary: np.ndarray
    boundary_faces: np.ndarray
    initial: np.ndarray

    @property
    def counts(self):
        return len(self.interior), len(self.boundary), len(self.initial)

    def face_rows(self, tags):
        return np.flatnonzero(np.isin(self.boundary_faces, tags))


def _rng(seed, stream):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), stream])))


def sample_points(problem, counts, seed=12345) -> PointSet:
    """Uniform pseudo-random collocation points, deterministic per seed.

    Interior, boundary and initial sets use independent PRNG streams, so
    changing one count leaves the other sets unchanged. Boundary points are
    split evenly over the spatial faces with the remainder on face 0; on a
    periodic coordinate the upper face repeats the lower face's rows.
    """
    n_r, n_b, n_i = (int(c) for c in counts)
    if min(n_r, n_b, n_i) < 0:
        raise ValueError(f"counts must be nonnegative, got {counts}")
    lo = np.array([a for a, _ in problem.domain], dtype=np.float64)
    hi = np.array([b for _, b in problem.domain], dtype=np.float64)
    if np.any(hi <= lo):
        raise ValueError(f"degenerate domain {problem.domain}")
    if n_i and not problem.time_dependent:
        raise ValueError(f"{problem.id} is time-independent; initial count must be 0")
    dim = problem.dim

    rng = _rng(seed, 0)
    interior = lo + (hi - lo) * rng.random((n_r, dim))

    faces = problem.faces
    per_face = [n_b // len(faces)] * len(faces) if faces else []
    if faces:
        per_face[0] += n_b - sum(per_face)
    rng = _rng(seed, 1)
    rows, tags = [], []
    periodic = problem.periodic_coords
    for tag, m in zip(faces, per_face):
        c, val = problem.face_location(tag)
        if c in periodic and tag % 2 == 1:
            prev = rows[faces.index(tag - 1)]
            if len(prev) != m:
                raise ValueError(f"periodic faces need equal counts; got {len(prev)} and {m}")
            pts = prev.copy()
        else:
            pts = lo + (hi - lo) * rng.random((m, dim))
        pts[:, c] = val
        rows.append(pts)
        tags.append(np.full(m, tag))
    boundary = np.concatenate(rows) if rows else np.zeros((0, dim))
    boundary_faces = np.concatenate(tags) if tags else np.zeros(0, dtype=int)

    rng = _rng(seed, 2)
    initial = lo + (hi - lo) * rng.random((n_i, dim))
    if n_i:
        initial[:, problem.time_coord] = 0.0
    return PointSet(interior, boundary, boundary_faces.astype(int), initial)


@dataclass
class LossWeights:
    initial: float = 1.0
    boundary: float = 1.0
    residual: float = 1.0

    def __post_init__(self):
        for name in ("initial", "boundary", "residual"):
            if getattr(self, name) <= 0:
                raise ValueError(f"loss weight {name} must be positive")


@dataclass
class LossBreakdown:
    L_i: float
    L_b: float
    L_r: float
    L_total: float
    weights: LossWeights = field(default_factory=LossWeights)


def _mean_sq(x):
    if isinstance(x, Var):
        return x.square().mean()
    return float(np.mean(np.square(x)))


def _plus(a, b):
    return b if a is None else a + b


def _val(x):
    if x is None:
        return 0.0
    return float(x.value) if isinstance(x, Var) else float(x)


def _selector(idx, n):
    op = np.zeros((len(idx), n))
    op[np.arange(len(idx)), idx] = 1.0
    return op


def periodic_pairs(points: PointSet, bc, problem):
    lo_rows = points.face_rows([bc.faces[0]])
    hi_rows = points.face_rows([bc.faces[1]])
    if len(lo_rows) != len(hi_rows):
        raise ValueError("periodic faces have different row counts")
    return lo_rows, hi_rows


def assemble_loss(params, arch, problem, points: PointSet, tape: Tape, weights=None, skip_period=2, slot_provider=None):
    """Build the total loss on ``tape``.

    Returns ``(root, LossBreakdown)``; ``root`` is the scalar node id, or
    None when every term is constant (e.g. an injected analytic provider).
    """
    weights = weights or LossWeights()
    provide = slot_provider or network_slot_provider(params, arch, tape, skip_period, problem.output_dim)

    L_r = None
    if len(points.interior):
        s = provide(points.interior, problem.needs_first, problem.needs_second)
        for r in problem.residual(s, points.interior, problem.params):
            L_r = _plus(L_r, _mean_sq(r))

    L_i = None
    if problem.ic is not None and len(points.initial):
        s = provide(points.initial)
        target = problem.ic(points.initial)
        for k in range(problem.output_dim):
            L_i = _plus(L_i, _mean_sq(s.u(k) - target[:, k:k + 1]))

    L_b = None
    if problem.bcs and len(points.boundary):
        dcoords = {bc.derivative_coord for bc in problem.bcs if bc.derivative_coord is not None}
        s_all = provide(points.boundary, tuple(sorted(dcoords)))
        n_b = len(points.boundary)
        for bc in problem.bcs:
            if bc.kind == "periodic":
                lo_rows, hi_rows = periodic_pairs(points, bc, problem)
                if not len(lo_rows):
                    continue
                s = s_all.rows(_selector(lo_rows, n_b) - _selector(hi_rows, n_b))
                for k in bc.components:
                    L_b = _plus(L_b, _mean_sq(s.u(k)))
                    if bc.derivative_coord is not None:
                        L_b = _plus(L_b, _mean_sq(s.d(bc.derivative_coord, k)))
                continue
            idx = points.face_rows(bc.faces)
            if not len(idx):
                continue
            s = s_all.rows(_selector(idx, n_b))
            target = bc.target(points.boundary[idx])
            for j, k in enumerate(bc.components):
                L_b = _plus(L_b, _mean_sq(s.u(k) - target[:, j:j + 1]))

    terms = [(weights.initial, L_i), (weights.boundary, L_b), (weights.residual, L_r)]
    total = None
    for lam, term in terms:
        if term is None:
            continue
        total = _plus(total, lam * term)
    breakdown = LossBreakdown(_val(L_i), _val(L_b), _val(L_r), _val(total), weights)
    root = total.id if isinstance(total, Var) else None
    return root, breakdown


def eval_residuals(slots: DerivativeSlots, problem, points):
    """Pointwise residual of each governing equation as flat numpy arrays."""
    res = problem.residual(slots, np.asarray(points, dtype=np.float64), problem.params)
    out = []
    for r in res:
        v = r.value if isinstance(r, Var) else np.asarray(r)
        out.append(np.asarray(v, dtype=np.float64).reshape(-1))
    return out


def rel_l2_error(pred, truth):
    """``||truth - pred||_2 / ||truth||_2`` over the flattened arrays."""
    pred = np.asarray(pred, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=np.float64).ravel()
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    denom = np.linalg.norm(truth)
    if denom == 0:
        raise ValueError("relative error undefined for zero-norm truth")
    return float(np.linalg.norm(truth - pred) / denom)


def mse(pred, truth):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise ValueError("mse of empty input")
    return float(np.mean((truth - pred) ** 2))

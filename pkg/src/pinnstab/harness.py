"""Training runs, run-status classification, diagnostics and result export.

Artifacts written by :func:`run_single` into ``RunConfig.out_dir``:

``trace.csv``
    ``iter,loss_total,loss_i,loss_b,loss_r,test_mse,test_rel_l2,wnorm_1..wnorm_{K+1}``
    (in regression mode ``loss_r`` holds the data MSE).
``summary.json``
    config echo, PRNG and sampler identifiers, optimizer and classifier
    settings, status, termination, final metrics, wall-clock seconds.
``grad_hist_<layer>_<epoch>.csv``
    ``bin_lo,bin_hi,count``.
``params.bin``
    final parameter snapshot (see :mod:`pinnstab.network`).
"""
from __future__ import annotations

import csv
import dataclasses
import itertools
import json
import math
import os
import time
from collections import OrderedDict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _backend
from .autodiff import Tape
from .network import (
    PRNG_ID,
    Arch,
    NetConfig,
    bind,
    frobenius_norms,
    init_glorot,
    predict,
    save_params,
)
from .optim import (
    AdamConfig,
    LBFGSConfig,
    NonFiniteStartError,
    Termination,
    adam_minimize,
    lbfgs_minimize,
)
from .pinn import SAMPLER_ID, LossWeights, assemble_loss, mse, rel_l2_error, sample_points
from .problems import build_problem, validation_truth

WARMUP_ITERS = 200
NOT_TRAINED_RATIO = 0.9
SPIKE_FACTOR = 100.0

COMPLETED = "completed"
DIVERGED = "diverged"
NOT_TRAINED = "not_trained"


@dataclass
class RunConfig:
    problem: str
    arch: Arch = Arch.SQUARED_RESIDUAL
    n_layers: int = 5
    n_neurons: int | None = None  # None: problem default
    counts: tuple | None = None  # (N_r, N_b, N_i); None: problem default
    seed: int = 12345
    precision: str = "f64"
    optimizer: str = "lbfgs"
    max_iter: int = 5000
    gtol: float = 1e-8
    lbfgs_memory: int = 50
    lr: float = 1e-3
    checkpoint_every: int = 100
    skip_period: int = 2
    out_dir: str | None = None
    grad_hist_epochs: tuple = ()
    grad_hist_layers: tuple = ()
    grad_hist_bins: int = 30
    validation_n: int = 100
    problem_params: dict = field(default_factory=dict)
    cache_dir: str | None = None

    def __post_init__(self):
        self.arch = Arch.parse(self.arch)
        if self.optimizer not in ("lbfgs", "adam"):
            raise ValueError(f"optimizer must be 'lbfgs' or 'adam', got {self.optimizer!r}")
        if self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be >= 1")
        if self.counts is not None:
            self.counts = tuple(int(c) for c in self.counts)
            if min(self.counts) < 0:
                raise ValueError("counts must be nonnegative")
        if self.max_iter < 0:
            raise ValueError("max_iter must be nonnegative")

    def lbfgs_config(self):
        return LBFGSConfig(memory=self.lbfgs_memory, max_iter=self.max_iter, gtol=self.gtol)

    def adam_config(self):
        return AdamConfig(lr=self.lr, max_iter=self.max_iter)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["arch"] = self.arch.value
        return d


TRACE_FIXED = ("iter", "loss_total", "loss_i", "loss_b", "loss_r", "test_mse", "test_rel_l2")


@dataclass
class TrainTrace:
    n_weight_layers: int
    rows: list = field(default_factory=list)

    @property
    def header(self):
        return list(TRACE_FIXED) + [f"wnorm_{k}" for k in range(1, self.n_weight_layers + 1)]

    def append(self, iteration, loss_total, loss_i, loss_b, loss_r, test_mse, test_rel_l2, wnorms):
        wnorms = [float(w) for w in wnorms]
        if len(wnorms) != self.n_weight_layers:
            raise ValueError(f"expected {self.n_weight_layers} weight norms, got {len(wnorms)}")
        if self.rows and iteration <= self.rows[-1][0]:
            raise ValueError(f"trace iterations must increase ({iteration} after {self.rows[-1][0]})")
        self.rows.append(
            (int(iteration), float(loss_total), float(loss_i), float(loss_b), float(loss_r),
             float(test_mse), float(test_rel_l2), *wnorms)
        )

    def __len__(self):
        return len(self.rows)

    def column(self, name):
        return np.array([r[self.header.index(name)] for r in self.rows])

    @property
    def iterations(self):
        return [r[0] for r in self.rows]

    @property
    def losses(self):
        return self.column("loss_total")

    def weight_norms(self):
        """(checkpoints, K+1) array of per-layer weight Frobenius norms."""
        return np.array([r[len(TRACE_FIXED):] for r in self.rows]).reshape(len(self.rows), self.n_weight_layers)


@dataclass
class RunStatus:
    kind: str
    iteration: int | None = None
    final_loss: float = math.nan
    final_metric: float = math.nan

    def __str__(self):
        if self.kind == DIVERGED:
            return f"diverged@{self.iteration}"
        return self.kind


def classify_status(trace: TrainTrace, termination: Termination,
                    warmup=WARMUP_ITERS, ratio=NOT_TRAINED_RATIO, spike=SPIKE_FACTOR) -> RunStatus:
    """Completed / Diverged(iteration) / NotTrained verdict for a run.

    * NotTrained: the initial loss is non-finite; or the loss never fell
      below ``ratio`` times the initial loss and the run either went past
      ``warmup`` iterations or hit a non-finite value.
    * Diverged(i): after the loss had fallen below that level, a non-finite
      value appeared at iteration i, or a checkpoint loss exceeded
      ``spike`` times the best loss seen before it (first such checkpoint).
    * Completed: otherwise.
    """
    if not trace.rows:
        raise ValueError("cannot classify an empty trace")
    iters = trace.iterations
    losses = list(trace.losses)
    metric = trace.column("test_rel_l2")
    finite_idx = [j for j, v in enumerate(losses) if math.isfinite(v)]
    last = finite_idx[-1] if finite_idx else None

    def verdict(kind, it=None):
        fl = losses[last] if last is not None else math.nan
        fm = float(metric[last]) if last is not None else math.nan
        return RunStatus(kind, it, fl, fm)

    l0 = losses[0]
    if not math.isfinite(l0) or (termination.reason == "non-finite" and termination.iteration == 0):
        return verdict(NOT_TRAINED, 0)
    decreased = any(losses[j] < ratio * l0 for j in finite_idx)
    nonfinite_at = None
    if termination.reason == "non-finite":
        nonfinite_at = termination.iteration
    else:
        bad = [iters[j] for j, v in enumerate(losses) if not math.isfinite(v)]
        nonfinite_at = bad[0] if bad else None
    if not decreased:
        if nonfinite_at is not None or iters[-1] >= warmup:
            return verdict(NOT_TRAINED, nonfinite_at)
        return verdict(COMPLETED)
    best = math.inf
    for it, v in zip(iters, losses):
        if not math.isfinite(v):
            break
        if best < math.inf and v > spike * best:
            return verdict(DIVERGED, it)
        best = min(best, v)
    if nonfinite_at is not None:
        return verdict(DIVERGED, nonfinite_at)
    return verdict(COMPLETED)


@dataclass
class GradHistogram:
    layer: int
    epoch: int
    edges: np.ndarray
    counts: np.ndarray
    median: float

    @property
    def total(self):
        return int(self.counts.sum())


def make_histogram(values, layer, epoch, bins=30):
    """Bin ``|values|`` into log-spaced bins spanning the observed range.

    Zeros (and anything below the smallest positive magnitude) land in the
    lowest bin.
    """
    a = np.abs(np.asarray(values, dtype=np.float64)).ravel()
    pos = a[a > 0]
    if pos.size:
        lo, hi = float(pos.min()), float(pos.max())
    else:
        lo = hi = float(np.finfo(np.float64).tiny)
    if hi <= lo:
        hi = lo * 10.0
    edges = np.logspace(math.log10(lo), math.log10(hi), bins + 1)
    edges[0], edges[-1] = lo, hi
    counts, _ = np.histogram(np.clip(a, lo, hi), bins=edges)
    return GradHistogram(layer, epoch, edges, counts, float(np.median(a)) if a.size else math.nan)


class LossObjective:
    """``w -> (loss, grad)`` over flattened network parameters.

    Keeps the loss breakdown and gradient of recent evaluations so
    checkpoints do not re-evaluate.
    """

    def __init__(self, problem, net: NetConfig, points, template, weights=None):
        self.problem = problem
        self.net = net
        self.points = points
        self.template = template
        self.weights = weights or LossWeights()
        self._recent = OrderedDict()
        self.evaluations = 0

    def params(self, w):
        return self.template.with_flat(w)

    def evaluate(self, w):
        params = self.params(w)
        tape = Tape(self.net.precision)
        with np.errstate(all="ignore"):
            root, br = assemble_loss(params, self.net.arch, self.problem, self.points, tape,
                                     self.weights, self.net.skip_period)
            value = float(tape.value(root))
            if math.isfinite(value):
                tape.backward(root)
                grad = np.concatenate(
                    [np.concatenate([tape.grad_of(W).ravel(), tape.grad_of(b)]) for W, b in bind(params, tape)]
                ).astype(np.float64)
            else:
                grad = np.full(self.template.n_params, np.nan)
        self.evaluations += 1
        key = w.tobytes()
        self._recent[key] = (value, grad, br)
        while len(self._recent) > 8:
            self._recent.popitem(last=False)
        return value, grad, br

    def __call__(self, w):
        value, grad, _ = self.evaluate(w)
        return value, grad

    def lookup(self, w):
        hit = self._recent.get(w.tobytes())
        return hit if hit is not None else self.evaluate(w)


def layer_slices(params):
    """Flat-vector slice of each layer's weight matrix."""
    out, pos = [], 0
    for ly in params.layers:
        out.append(slice(pos, pos + ly.W.size))
        pos += ly.W.size + ly.b.size
    return out


@dataclass
class RunResult:
    trace: TrainTrace
    status: RunStatus
    params: object
    termination: Termination
    summary: dict
    histograms: list = field(default_factory=list)

    def __iter__(self):
        return iter((self.trace, self.status, self.params))


def _metrics(problem, params, net, grid, truth):
    with np.errstate(all="ignore"):
        pred = predict(params, net.arch, grid, net.skip_period).astype(np.float64)
    if not np.all(np.isfinite(pred)):
        return math.nan, math.nan, {}
    per = {}
    for k, name in enumerate(problem.output_names):
        per[name] = {"mse": mse(pred[:, k], truth[:, k]), "rel_l2": rel_l2_error(pred[:, k], truth[:, k])}
    return mse(pred, truth), rel_l2_error(pred, truth), per


def run_single(config: RunConfig) -> RunResult:
    """Sample, initialise, train, checkpoint, classify and export one run."""
    started = time.perf_counter()
    problem = build_problem(config.problem, config.problem_params)
    net = NetConfig(
        d_in=problem.dim,
        d_out=problem.output_dim,
        n_layers=config.n_layers,
        n_neurons=config.n_neurons or problem.default_neurons,
        arch=config.arch,
        skip_period=config.skip_period,
        seed=config.seed,
        precision=config.precision,
    )
    counts = config.counts or problem.default_counts
    points = sample_points(problem, counts, config.seed)
    params0 = init_glorot(net)
    grid, truth = validation_truth(problem, config.validation_n, config.cache_dir)
    objective = LossObjective(problem, net, points, params0)
    trace = TrainTrace(net.n_layers + 1)
    slices = layer_slices(params0)
    hist_epochs = set(config.grad_hist_epochs)
    histograms = []

    def record(it, w):
        value, grad, br = objective.lookup(w)
        params = objective.params(w)
        tm, tr, _ = _metrics(problem, params, net, grid, truth)
        trace.append(it, br.L_total, br.L_i, br.L_b, br.L_r, tm, tr, frobenius_norms(params))

    def histogram(it, w):
        _, grad, _ = objective.lookup(w)
        for layer in config.grad_hist_layers:
            histograms.append(make_histogram(grad[slices[layer - 1]], layer, it, config.grad_hist_bins))

    for layer in config.grad_hist_layers:
        if not 1 <= layer <= net.n_layers + 1:
            raise ValueError(f"layer {layer} out of range 1..{net.n_layers + 1}")

    x0 = params0.flatten()
    last_recorded = [None]

    def callback(it, value, w):
        if it % config.checkpoint_every == 0:
            record(it, w)
            last_recorded[0] = it
        if it in hist_epochs:
            histogram(it, w)

    final_w = x0
    try:
        v0, _, _ = objective.lookup(x0)
        if not math.isfinite(v0):
            raise NonFiniteStartError("initial loss is not finite")
        record(0, x0)
        last_recorded[0] = 0
        if 0 in hist_epochs:
            histogram(0, x0)
        if config.optimizer == "lbfgs":
            res = lbfgs_minimize(objective, x0, config.lbfgs_config(), callback)
        else:
            res = adam_minimize(objective, x0, config.adam_config(), callback, gtol=config.gtol)
        termination = res.termination
        final_w = res.x
        if termination.reason == "non-finite":
            nan = math.nan
            trace.append(termination.iteration, nan, nan, nan, nan, nan, nan, [nan] * trace.n_weight_layers)
        elif last_recorded[0] != res.iterations:
            record(res.iterations, res.x)
    except NonFiniteStartError as exc:
        termination = Termination("non-finite", 0, str(exc))
        nan = math.nan
        trace.append(0, nan, nan, nan, nan, nan, nan, frobenius_norms(params0))

    status = classify_status(trace, termination)
    final_params = objective.params(final_w)
    test_mse, test_rel, per = _metrics(problem, final_params, net, grid, truth)
    finite = [r for r in trace.rows if math.isfinite(r[1])]
    last = finite[-1] if finite else None
    summary = {
        "config": config.to_dict(),
        "net": {
            "d_in": net.d_in,
            "d_out": net.d_out,
            "n_layers": net.n_layers,
            "n_neurons": net.n_neurons,
            "arch": net.arch.value,
            "skip_period": net.skip_period,
            "skip_layers": [k for k in range(1, net.n_layers + 1) if k % net.skip_period == 0]
            if net.arch is not Arch.PLAIN else [],
            "n_params": params0.n_params,
        },
        "counts": list(counts),
        "prng": PRNG_ID,
        "sampler": SAMPLER_ID,
        "initializer": "glorot-uniform, zero bias",
        "optimizer": dataclasses.asdict(config.lbfgs_config()) if config.optimizer == "lbfgs"
        else dataclasses.asdict(config.adam_config()),
        "classifier": {"warmup": WARMUP_ITERS, "not_trained_ratio": NOT_TRAINED_RATIO, "spike_factor": SPIKE_FACTOR},
        "kernel_backend": _backend.name,
        "status": status.kind,
        "diverged_at": status.iteration if status.kind == DIVERGED else None,
        "termination": dataclasses.asdict(termination),
        "final": {
            "train_loss": last[1] if last else math.nan,
            "loss_i": last[2] if last else math.nan,
            "loss_b": last[3] if last else math.nan,
            "loss_r": last[4] if last else math.nan,
            "test_mse": test_mse,
            "test_rel_l2": test_rel,
            "components": per,
        },
        "evaluations": objective.evaluations,
        "wall_clock_s": time.perf_counter() - started,
    }
    result = RunResult(trace, status, final_params, termination, summary, histograms)
    if config.out_dir:
        export_results(result, config.out_dir, net)
    return result


def gradient_histogram(config: RunConfig, epoch, layers, bins=30):
    """Train to ``epoch`` and histogram |dL/dW| of each requested layer."""
    if epoch > config.max_iter:
        raise ValueError(f"epoch {epoch} exceeds max_iter {config.max_iter}")
    cfg = dataclasses.replace(
        config, max_iter=epoch, grad_hist_epochs=(epoch,), grad_hist_layers=tuple(layers),
        grad_hist_bins=bins, out_dir=None,
    )
    result = run_single(cfg)
    if not result.histograms:  # stopped before the epoch; use the final point
        problem = build_problem(cfg.problem, cfg.problem_params)
        net_params = result.params
        w = net_params.flatten()
        net = NetConfig(problem.dim, problem.output_dim, cfg.n_layers, cfg.n_neurons or problem.default_neurons,
                        cfg.arch, cfg.skip_period, cfg.seed, cfg.precision)
        points = sample_points(problem, cfg.counts or problem.default_counts, cfg.seed)
        _, grad, _ = LossObjective(problem, net, points, net_params).evaluate(w)
        slices = layer_slices(net_params)
        it = result.termination.iteration
        return [make_histogram(grad[slices[k - 1]], k, it, bins) for k in layers]
    return result.histograms


# -- export ------------------------------------------------------------------


def write_trace_csv(trace: TrainTrace, path):
    if not trace.rows:
        raise ValueError("refusing to export an empty trace")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(trace.header)
        for row in trace.rows:
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


def read_trace_csv(path) -> TrainTrace:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    n_w = len(header) - len(TRACE_FIXED)
    trace = TrainTrace(n_w)
    for r in body:
        trace.rows.append((int(r[0]), *(float(v) for v in r[1:])))
    return trace


def write_histogram_csv(hist: GradHistogram, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_lo", "bin_hi", "count"])
        for lo, hi, c in zip(hist.edges[:-1], hist.edges[1:], hist.counts):
            w.writerow([repr(float(lo)), repr(float(hi)), int(c)])


def read_histogram_csv(path, layer=0, epoch=0) -> GradHistogram:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    lo = [float(r[0]) for r in rows]
    hi = [float(r[1]) for r in rows]
    counts = np.array([int(r[2]) for r in rows])
    return GradHistogram(layer, epoch, np.array(lo + hi[-1:]), counts, math.nan)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Arch):
        return obj.value
    return obj


def write_summary_json(summary, path):
    with open(path, "w") as fh:
        json.dump(_jsonable(summary), fh, indent=2, sort_keys=True)


def export_results(result: RunResult, out_dir, net=None):
    """Write trace, summary, histograms and (given ``net``) the parameter snapshot."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_trace_csv(result.trace, out / "trace.csv")
    write_summary_json(result.summary, out / "summary.json")
    for h in result.histograms:
        write_histogram_csv(h, out / f"grad_hist_{h.layer}_{h.epoch}.csv")
    if net is not None:
        save_params(out / "params.bin", result.params, net)
    return out


# -- sweeps ------------------------------------------------------------------

SWEEP_COLUMNS = (
    "problem", "arch", "n_layers", "seed", "status", "diverged_at",
    "train_loss", "test_mse", "test_rel_l2", "wall_clock_s", "error",
)


def _run_cell(cfg):
    try:
        res = run_single(cfg)
    except Exception as exc:  # recorded per cell, never aborts the sweep
        return {
            "problem": cfg.problem, "arch": cfg.arch.value, "n_layers": cfg.n_layers, "seed": cfg.seed,
            "status": "error", "diverged_at": None, "train_loss": None, "test_mse": None,
            "test_rel_l2": None, "wall_clock_s": None, "error": f"{type(exc).__name__}: {exc}",
            "components": {},
        }
    s = res.summary
    trained = res.status.kind != NOT_TRAINED
    fin = s["final"]
    return {
        "problem": cfg.problem,
        "arch": cfg.arch.value,
        "n_layers": cfg.n_layers,
        "seed": cfg.seed,
        "status": res.status.kind,
        "diverged_at": s["diverged_at"],
        "train_loss": fin["train_loss"] if trained else None,
        "test_mse": fin["test_mse"] if trained else None,
        "test_rel_l2": fin["test_rel_l2"] if trained else None,
        "wall_clock_s": s["wall_clock_s"],
        "error": "",
        "components": fin["components"] if trained else {},
    }


def sweep(base: RunConfig, layers, archs, seeds, jobs=1, out_dir=None):
    """Run every (n_layers, arch, seed) cell; returns rows in grid order.

    Cells are independent runs with their own tape and seed; results do not
    depend on ``jobs``. NotTrained cells carry no loss or error values.
    """
    layers, archs, seeds = list(layers), [Arch.parse(a) for a in archs], list(seeds)
    if not layers or not archs or not seeds:
        raise ValueError("sweep needs nonempty layer, architecture and seed lists")
    cells = []
    for nl, arch, seed in itertools.product(layers, archs, seeds):
        cell_dir = None
        if out_dir:
            cell_dir = os.path.join(out_dir, f"{base.problem}_{arch.value}_NL{nl}_seed{seed}")
        cells.append(dataclasses.replace(base, n_layers=int(nl), arch=arch, seed=int(seed), out_dir=cell_dir))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_cell, cells))
    else:
        rows = [_run_cell(c) for c in cells]
    if out_dir:
        write_sweep(rows, out_dir)
    return rows


def write_sweep(rows, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow(["" if r[c] is None else (repr(r[c]) if isinstance(r[c], float) else r[c]) for c in SWEEP_COLUMNS])
    with open(out / "sweep.json", "w") as fh:
        json.dump(_jsonable(rows), fh, indent=2)

"""Independent test oracles: central finite differences and random graphs."""
import numpy as np

from pinnstab.autodiff import Tape
from pinnstab.network import forward_jet, predict

FD_STEP = 1e-6


def central_fd(f, x, eps=FD_STEP):
    """Gradient of scalar ``f`` at array ``x`` by central differences."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        fp = f(x)
        flat[i] = old - eps
        fm = f(x)
        flat[i] = old
        gf[i] = (fp - fm) / (2 * eps)
    return g


def grad_close(g, fd, rtol=1e-6, atol=1e-8, small=1e-4):
    """Norm-wise relative check, absolute when the true gradient is tiny."""
    g, fd = np.ravel(g), np.ravel(fd)
    scale = np.linalg.norm(fd)
    err = np.linalg.norm(g - fd)
    if scale < small:
        return err <= atol, err
    return err <= rtol * scale, err / scale


UNARY = ("tanh", "square", "negate", "scale")
BINARY = ("add", "subtract", "multiply")


def random_program(rng, max_depth=6, max_width=8):
    """A random composite graph as (leaf values, op list)."""
    n = int(rng.integers(1, max_width + 1))
    m = int(rng.integers(1, max_width + 1))
    leaves = [rng.uniform(-2, 2, (n, m)) for _ in range(int(rng.integers(1, 4)))]
    extra = []  # matmul weights / biases, also parameters
    consts = []
    ops = []
    n_nodes = len(leaves)
    for _ in range(int(rng.integers(1, max_depth + 1))):
        kind = rng.choice(UNARY + BINARY + ("matmul", "matmul_t", "broadcast_add", "const_mul"))
        a = int(rng.integers(n_nodes))
        if kind in UNARY:
            ops.append((str(kind), (a,), float(rng.uniform(-1.5, 1.5)) if kind == "scale" else None))
        elif kind in BINARY:
            ops.append((str(kind), (a, int(rng.integers(n_nodes))), None))
        elif kind in ("matmul", "matmul_t"):
            extra.append(rng.uniform(-1, 1, (m, m)) / np.sqrt(m))
            ops.append((str(kind), (a, ("p", len(extra) - 1)), None))
        elif kind == "broadcast_add":
            extra.append(rng.uniform(-2, 2, m))
            ops.append(("broadcast_add", (a, ("p", len(extra) - 1)), None))
        else:
            consts.append(rng.uniform(-2, 2, (n, m)))
            ops.append(("multiply", (a, ("c", len(consts) - 1)), None))
        n_nodes += 1
    reducer = "sum" if rng.random() < 0.5 else "mean"
    return {"leaves": leaves, "extra": extra, "consts": consts, "ops": ops, "reducer": reducer}


def run_program(prog, params=None, precision="f64"):
    """Record the program on a fresh tape; returns (tape, root, parameter ids)."""
    params = params if params is not None else prog["leaves"] + prog["extra"]
    tape = Tape(precision)
    n_leaves = len(prog["leaves"])
    pids = [tape.parameter(v) for v in params]
    nodes = pids[:n_leaves]
    cids = [tape.constant(c) for c in prog["consts"]]

    def ref(r):
        if isinstance(r, tuple):
            return pids[n_leaves + r[1]] if r[0] == "p" else cids[r[1]]
        return nodes[r]

    for op, ins, attr in prog["ops"]:
        args = tuple(ref(r) for r in ins)
        if op == "square" and np.max(np.abs(tape.value(args[0])), initial=0) > 4:
            op = "tanh"  # keep repeated squaring from overflowing the FD oracle
        if op == "matmul_t":
            nodes.append(tape.matmul(args[0], args[1], trans_b=True))
        else:
            nodes.append(tape.apply(op, args, attr))
    root = tape.apply(prog["reducer"], (nodes[-1],))
    return tape, root, pids


def program_gradcheck(prog):
    """Worst relative (or absolute) error of reverse mode vs central FD."""
    tape, root, pids = run_program(prog)
    tape.backward(root)
    grads = [tape.grad_of(p) for p in pids]
    params = [np.array(v, dtype=np.float64) for v in prog["leaves"] + prog["extra"]]
    ok_all, worst = True, 0.0
    for j, g in enumerate(grads):
        def f(v, j=j):
            ps = list(params)
            ps[j] = v
            t, r, _ = run_program(prog, ps)
            return float(t.value(r))
        ok, err = grad_close(g, central_fd(f, params[j]))
        ok_all &= bool(ok)
        worst = max(worst, float(err))
    return ok_all, worst


def jet_fd_errors(params, arch, x, coord, skip_period=2):
    """Relative errors of (u_d, u_dd) against central differences of forward."""
    tape = Tape("f64")
    jet = forward_jet(params, arch, x, coord, tape, skip_period)
    e = np.zeros(x.shape[1])
    e[coord] = 1.0

    def f(xx):
        return predict(params, arch, xx, skip_period)

    h1, h2 = 1e-5, 1e-4
    d_fd = (f(x + h1 * e) - f(x - h1 * e)) / (2 * h1)
    dd_fd = (f(x + h2 * e) - 2 * f(x) + f(x - h2 * e)) / h2**2

    def rel(a, b):
        return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-3))

    return rel(tape.value(jet.u_d), d_fd), rel(tape.value(jet.u_dd), dd_fd), tape, jet

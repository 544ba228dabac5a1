"""Central finite-difference verification of every differentiable piece.

Each check builds a scalar loss (a fixed random projection of the op or
block output), runs reverse-mode backward once, and compares every leaf
gradient against (f(x+h) - f(x-h)) / 2h in float64.  Relative error is
|a - b| / max(|a|, |b|, 1).

Inputs that feed a ReLU directly are resampled away from the kink, where
the derivative is not defined and finite differences are meaningless.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .model import PartitionGate, SimbaModule, flatten_vertices
from .nn import BatchNorm2d
from .shift_gcn import ShiftSGcnBlock, ShiftTcnBlock, UnitTcnResidual, spatial_shift, temporal_shift
from .ssm import IMambaBlock, ScanInputs, selective_scan_parallel, selective_scan_sequential, zoh_discretize
from .tensor import Tensor

PRIMITIVE_TOL = 1e-6
BLOCK_TOL = 1e-5
EPS = 1e-5
# Composite blocks stack BN over a handful of positions, which makes the
# loss extremely curved; a smaller step keeps the truncation error of the
# difference quotient below the comparison tolerance (roundoff stays ~1e-9).
BLOCK_EPS = 1e-6


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1.0)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def check_gradients(loss_fn, leaves: dict, eps: float = EPS) -> float:
    """Worst relative error between backward grads and central differences.

    ``loss_fn`` must rebuild the forward pass from the leaves' current data
    on every call and return a scalar Tensor.
    """
    for leaf in leaves.values():
        leaf.zero_grad()
    loss = loss_fn()
    loss.backward()
    analytic = {name: (leaf.grad.copy() if leaf.grad is not None else np.zeros_like(leaf.data))
                for name, leaf in leaves.items()}
    worst = 0.0
    for name, leaf in leaves.items():
        flat = leaf.data.reshape(-1)
        numeric = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_fn().item()
            flat[i] = orig - eps
            down = loss_fn().item()
            flat[i] = orig
            numeric[i] = (up - down) / (2 * eps)
        worst = max(worst, relative_error(analytic[name].reshape(-1), numeric))
    return worst


def _away_from_zero(rng, shape, margin: float = 0.1) -> np.ndarray:
    """Sample values whose magnitude stays clear of the ReLU kink."""
    x = rng.normal(size=shape)
    sign = np.where(x >= 0, 1.0, -1.0)
    return x + sign * margin


def _leaf(rng, shape, positive: bool = False, margin: float = 0.0) -> Tensor:
    data = np.abs(rng.normal(size=shape)) + 0.2 if positive else rng.normal(size=shape)
    if margin:
        data = _away_from_zero(rng, shape, margin)
    return Tensor(data, requires_grad=True)


def _projection(rng, shape) -> Tensor:
    return Tensor(rng.normal(size=shape))


def _project(out: Tensor, proj: Tensor) -> Tensor:
    return (out * proj).sum()


def module_leaves(module, inputs: dict) -> dict:
    leaves = dict(inputs)
    leaves.update({name: p for name, p in module.named_parameters()})
    return leaves


def check_module(module, x: Tensor, rng, forward=None) -> float:
    forward = forward or (lambda inp: module(inp))
    probe = forward(x)
    proj = _projection(rng, probe.shape)
    return check_gradients(lambda: _project(forward(x), proj),
                           module_leaves(module, {"input": x}), eps=BLOCK_EPS)


# ---------------------------------------------------------------------------
# suites
# ---------------------------------------------------------------------------

def suite_primitives():
    rng = np.random.default_rng(11)
    checks = []

    def run(name, loss_fn, leaves):
        checks.append((name, check_gradients(loss_fn, leaves), PRIMITIVE_TOL))

    a = _leaf(rng, (2, 3))
    b = _leaf(rng, (2, 3))
    c = _leaf(rng, (3,))
    proj = _projection(rng, (2, 3))
    run("add", lambda: _project(a + b, proj), {"a": a, "b": b})
    run("add_broadcast", lambda: _project(a + c, proj), {"a": a, "c": c})
    run("mul", lambda: _project(a * b, proj), {"a": a, "b": b})
    run("mul_broadcast", lambda: _project(a * c, proj), {"a": a, "c": c})
    den = _leaf(rng, (2, 3), positive=True)
    run("div", lambda: _project(a / den, proj), {"a": a, "den": den})
    run("power", lambda: _project(den ** 1.7, proj), {"den": den})

    m1 = _leaf(rng, (4, 3, 2))
    m2 = _leaf(rng, (2, 5))
    pm = _projection(rng, (4, 3, 5))
    run("matmul", lambda: _project(m1 @ m2, pm), {"m1": m1, "m2": m2})

    pos = _leaf(rng, (2, 4), positive=True)
    p24 = _projection(rng, (2, 4))
    x24 = _leaf(rng, (2, 4))
    run("exp", lambda: _project(T.exp(x24), p24), {"x": x24})
    run("log", lambda: _project(T.log(pos), p24), {"pos": pos})
    run("sqrt", lambda: _project(T.sqrt(pos), p24), {"pos": pos})
    xk = _leaf(rng, (2, 4), margin=0.1)
    run("relu", lambda: _project(T.relu(xk), p24), {"x": xk})
    run("sigmoid", lambda: _project(T.sigmoid(x24), p24), {"x": x24})
    run("silu", lambda: _project(T.silu(x24), p24), {"x": x24})
    xs = Tensor(np.concatenate([rng.normal(size=6), [19.0, 21.0]]), requires_grad=True)
    ps = _projection(rng, (8,))
    run("softplus", lambda: _project(T.softplus(xs), ps), {"x": xs})

    x4 = _leaf(rng, (2, 3, 2, 2))
    pperm = _projection(rng, (2, 2, 3, 2))
    run("permute", lambda: _project(T.permute(x4, (0, 3, 1, 2)) * 1.5, pperm), {"x": x4})
    prs = _projection(rng, (2, 12))
    run("reshape", lambda: _project(T.reshape(x4, (2, 12)) * 1.5, prs), {"x": x4})
    pb = _projection(rng, (4, 2, 3))
    xb = _leaf(rng, (1, 2, 3))
    run("broadcast_to", lambda: _project(T.broadcast_to(xb, (4, 2, 3)), pb), {"x": xb})

    xg = _leaf(rng, (2, 3, 2, 4))
    pg = _projection(rng, (2, 3, 2, 4))
    run("gather_spatial_shift", lambda: _project(spatial_shift(xg), pg), {"x": xg})
    run("gather_temporal_shift", lambda: _project(temporal_shift(xg, 1), pg), {"x": xg})
    ppad = _projection(rng, (2, 3, 5, 4))
    run("pad_axis", lambda: _project(T.pad_axis(xg, 2, 2, 1), ppad), {"x": xg})
    psl = _projection(rng, (2, 1, 2, 4))
    run("slice_axis", lambda: _project(T.slice_axis(xg, 1, 1, 2), psl), {"x": xg})

    psum = _projection(rng, (2, 2))
    run("reduce_sum", lambda: _project(xg.sum(axis=(1, 3)), psum), {"x": xg})
    pmean = _projection(rng, (3, 4))
    run("reduce_mean", lambda: _project(xg.mean(axis=(0, 2)), pmean), {"x": xg})

    w = _leaf(rng, (5, 3))
    bias = _leaf(rng, (5,))
    pc = _projection(rng, (2, 5, 2, 4))
    run("pointwise_conv2d", lambda: _project(T.pointwise_conv2d(xg, w, bias), pc),
        {"x": xg, "w": w, "b": bias})

    xc = _leaf(rng, (2, 5, 3))
    wc = _leaf(rng, (3, 4))
    bc = _leaf(rng, (3,))
    pcc = _projection(rng, (2, 5, 3))
    run("causal_conv1d", lambda: _project(T.causal_conv1d_depthwise(xc, wc, bc), pcc),
        {"x": xc, "w": wc, "b": bc})

    bn = BatchNorm2d(3)
    xbn = _leaf(rng, (2, 3, 2, 4))
    pbn = _projection(rng, (2, 3, 2, 4))
    run("batch_norm2d_train",
        lambda: _project(T.batch_norm2d(xbn, bn.gamma, bn.beta, bn.running_mean,
                                        bn.running_var, True), pbn),
        {"x": xbn, "gamma": bn.gamma, "beta": bn.beta})
    bn.running_mean[:] = rng.normal(size=3)
    bn.running_var[:] = 0.5 + rng.random(3)
    run("batch_norm2d_eval",
        lambda: _project(T.batch_norm2d(xbn, bn.gamma, bn.beta, bn.running_mean,
                                        bn.running_var, False), pbn),
        {"x": xbn, "gamma": bn.gamma, "beta": bn.beta})

    xr = _leaf(rng, (2, 3, 4))
    gr = _leaf(rng, (4,))
    prn = _projection(rng, (2, 3, 4))
    run("rms_norm", lambda: _project(T.rms_norm(xr, gr), prn), {"x": xr, "g": gr})

    logits = _leaf(rng, (3, 5))
    psm = _projection(rng, (3, 5))
    run("softmax", lambda: _project(T.softmax(logits, axis=1), psm), {"logits": logits})
    labels = np.array([0, 3, 2])
    run("cross_entropy", lambda: T.cross_entropy_logits(logits, labels), {"logits": logits})
    return checks


def suite_scan():
    rng = np.random.default_rng(23)
    checks = []
    n, t, dp, w = 1, 5, 2, 3
    a_cont = Tensor(-(0.2 + rng.random((dp, w))), requires_grad=True)
    b_t = _leaf(rng, (n, t, w))
    delta = Tensor(0.05 + rng.random((n, t, dp)), requires_grad=True)
    pz = _projection(rng, (n, t, dp, w))

    def zoh_loss():
        a_bar, b_bar = zoh_discretize(a_cont, b_t, delta)
        return _project(a_bar, pz) + _project(b_bar, pz)

    checks.append(("zoh_discretize", check_gradients(zoh_loss, {"a": a_cont, "b": b_t, "delta": delta}),
                   PRIMITIVE_TOL))

    a_bar = Tensor(0.1 + 0.85 * rng.random((n, t, dp, w)), requires_grad=True)
    b_bar = _leaf(rng, (n, t, dp, w))
    c = _leaf(rng, (n, t, w))
    y = _leaf(rng, (n, t, dp))
    pout = _projection(rng, (n, t, dp))
    leaves = {"a": a_bar, "b": b_bar, "c": c, "y": y}
    checks.append(("selective_scan_sequential",
                   check_gradients(lambda: _project(
                       selective_scan_sequential(ScanInputs(a_bar, b_bar, c), y), pout), leaves),
                   PRIMITIVE_TOL))
    checks.append(("selective_scan_parallel",
                   check_gradients(lambda: _project(
                       selective_scan_parallel(ScanInputs(a_bar, b_bar, c), y, 2), pout), leaves),
                   PRIMITIVE_TOL))
    return checks


def suite_shift_sgcn():
    rng = np.random.default_rng(37)
    block = ShiftSGcnBlock(4, 3, rng)
    x = Tensor(_away_from_zero(rng, (1, 4, 3, 5), 0.15), requires_grad=True)
    return [("shift_sgcn", check_module(block, x, rng), BLOCK_TOL)]


def suite_shift_tcn():
    rng = np.random.default_rng(41)
    block = ShiftTcnBlock(4, rng, radius=1)
    x = _leaf(rng, (1, 4, 3, 5))
    checks = [("shift_tcn", check_module(block, x, rng), BLOCK_TOL)]
    unit = UnitTcnResidual(3, 4, rng)
    xu = _leaf(rng, (1, 3, 3, 5))
    checks.append(("unit_tcn_residual", check_module(unit, xu, rng), BLOCK_TOL))
    return checks


def suite_imamba():
    rng = np.random.default_rng(43)
    block = IMambaBlock(6, 3, rng)
    x = _leaf(rng, (1, 4, 6))
    return [("imamba", check_module(block, x, rng), BLOCK_TOL)]


def suite_partition_gate():
    rng = np.random.default_rng(47)
    labels = np.zeros((5, 2))
    labels[np.arange(5), np.array([0, 0, 1, 1, 1])] = 1.0
    gate = PartitionGate(4, labels, rng)
    x = _leaf(rng, (1, 4, 3, 5))
    return [("partition_gate", check_module(gate, x, rng), BLOCK_TOL)]


def suite_simba_module():
    rng = np.random.default_rng(53)
    module = SimbaModule(3, 8, 2, 4, 2, rng)
    x = Tensor(_away_from_zero(rng, (1, 3, 3, 4), 0.15), requires_grad=True)
    checks = [("simba_module", check_module(module, x, rng), BLOCK_TOL)]

    xe = Tensor(_away_from_zero(rng, (1, 8, 3, 4), 0.15), requires_grad=True)
    enc_modules = module.enc

    class _Enc:
        def named_parameters(self):
            for i, m in enumerate(enc_modules):
                yield from m.named_parameters(f"enc.{i}.")

        def __call__(self, inp):
            out, _ = module.encode(inp)
            return out

    checks.append(("encoder", check_module(_Enc(), xe, rng), BLOCK_TOL))

    skips = tuple(Tensor(rng.normal(size=s)) for s in [(1, 8, 3, 4), (1, 4, 3, 4), (1, 2, 3, 4)])
    xd = _leaf(rng, (1, 2, 3, 4))

    class _Dec:
        def named_parameters(self):
            for i, m in enumerate(module.dec):
                yield from m.named_parameters(f"dec.{i}.")

        def __call__(self, inp):
            return module.decode(inp, skips)

    checks.append(("decoder", check_module(_Dec(), xd, rng), BLOCK_TOL))
    return checks


SUITES = {
    "primitives": suite_primitives,
    "scan": suite_scan,
    "shift_sgcn": suite_shift_sgcn,
    "shift_tcn": suite_shift_tcn,
    "imamba": suite_imamba,
    "partition_gate": suite_partition_gate,
    "simba_module": suite_simba_module,
}


def run_suites(names=None):
    """Run the requested suites; returns [(suite, check, err, tol)]."""
    results = []
    with T.using_dtype("float64"):
        for suite in names or SUITES:
            for check, err, tol in SUITES[suite]():
                results.append((suite, check, err, tol))
    return results

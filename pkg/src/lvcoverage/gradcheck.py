"""Finite-difference verification of every analytic gradient.

Checks run at 64-bit on randomly drawn, well-conditioned parameters
(fan-in-scaled Gaussian weights, N(0, 0.1) biases): at the training-time
init scale of 0.01 many true gradients sit near 1e-11 where a central
difference of the objective is pure cancellation noise, so a check there
would measure float64 round-off, not implementation correctness. Dropout
masks and scatter means are frozen while differencing, matching the
analytic convention.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import network as nw
from . import tensorops as to
from .fisher import bce_loss

TOLERANCE = 1e-4
_DEN_FLOOR = 1e-10


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    n_checked: int

    @property
    def ok(self) -> bool:
        return self.max_rel_err < TOLERANCE


def _rel_err(numeric: float, analytic: float) -> float:
    den = max(abs(numeric), abs(analytic), _DEN_FLOOR)
    return abs(numeric - analytic) / den


def _fd_tensor(objective, arr: np.ndarray, analytic: np.ndarray, h: float,
               rng: np.random.Generator, max_coords: int | None):
    """Central differences over all (or sampled) coordinates of ``arr``."""
    flat = arr.reshape(-1)
    grad = np.asarray(analytic).reshape(-1)
    n = flat.size
    if max_coords is not None and n > max_coords:
        coords = rng.choice(n, size=max_coords, replace=False)
    else:
        coords = range(n)
    worst = 0.0
    count = 0
    for i in coords:
        orig = flat[i]
        flat[i] = orig + h
        fp = objective()
        flat[i] = orig - h
        fm = objective()
        flat[i] = orig
        worst = max(worst, _rel_err((fp - fm) / (2 * h), grad[i]))
        count += 1
    return worst, count


# ---------------------------------------------------------------------------
# Isolated kernel checks
# ---------------------------------------------------------------------------

def check_conv3d(seed: int = 0, h: float = 1e-5) -> CheckResult:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 3, 6, 6, 2))
    k = rng.standard_normal((3, 2, 2, 3, 3))
    b = rng.standard_normal(3)
    stride = (1, 2, 1)
    g_out = rng.standard_normal(to.conv3d_forward(x, k, b, stride).shape)

    def objective():
        return float((to.conv3d_forward(x, k, b, stride) * g_out).sum())

    gx, gk, gb = to.conv3d_backward(g_out, x, k, stride)
    worst, count = 0.0, 0
    for arr, g in ((x, gx), (k, gk), (b, gb)):
        w, c = _fd_tensor(objective, arr, g, h, rng, None)
        worst, count = max(worst, w), count + c
    return CheckResult("conv3d", worst, count)


def check_maxpool3d(seed: int = 0, h: float = 1e-5) -> CheckResult:
    rng = np.random.default_rng(seed)
    # Tie-free input: distinct random values keep argmax stable under +-h.
    x = rng.standard_normal((1, 2, 5, 5, 2))
    window, stride = (1, 2, 2), (1, 2, 2)
    out, argmap = to.maxpool3d_forward(x, window, stride)
    g_out = rng.standard_normal(out.shape)

    def objective():
        o, _ = to.maxpool3d_forward(x, window, stride)
        return float((o * g_out).sum())

    gx = to.maxpool3d_backward(g_out, argmap, x.shape, overlapping=False)
    worst, count = _fd_tensor(objective, x, gx, h, rng, None)
    return CheckResult("maxpool3d", worst, count)


def check_dense(seed: int = 0, h: float = 1e-5) -> CheckResult:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((4, 7))
    w = rng.standard_normal((10, 7))
    b = rng.standard_normal(10)
    g_out = rng.standard_normal((4, 10))

    def objective():
        return float((to.dense_forward(x, w, b) * g_out).sum())

    gx, gw, gb = to.dense_backward(g_out, x, w)
    worst, count = 0.0, 0
    for arr, g in ((x, gx), (w, gw), (b, gb)):
        wst, c = _fd_tensor(objective, arr, g, h, rng, None)
        worst, count = max(worst, wst), count + c
    return CheckResult("dense", worst, count)


# ---------------------------------------------------------------------------
# Whole-network objective check
# ---------------------------------------------------------------------------

def _check_params(arch: nw.NetworkArch, seed: int) -> nw.ModelParams:
    params = nw.init_params(arch, seed, np.float64)
    rng = np.random.default_rng([seed, 101])
    for w in params.weights:
        # Fan-in scaling keeps activations O(1) at any width; a flat scale
        # saturates the sigmoid head on wide networks, and a clamped output
        # is flat under differencing while the analytic gradient is not.
        scale = 0.8 / np.sqrt(np.prod(w.shape[1:]))
        w[...] = rng.standard_normal(w.shape) * scale
    for b in params.biases:
        b[...] = rng.standard_normal(b.shape) * 0.1
    return params


def check_network(arch: nw.NetworkArch, seed: int = 0, batch: int = 8,
                  lam: float = 1e-4, eta: float = 0.1, dropout: float = 0.1,
                  h: float = 1e-5, max_coords: int | None = None):
    """Per-tensor FD check of the composite objective's gradients.

    Returns ``[CheckResult, ...]``, one per parameter tensor. Means of the
    scatter penalty and the dropout mask are frozen at the base point.
    """
    rng = np.random.default_rng([seed, 7])
    params = _check_params(arch, seed)
    h_img, w_img, d_img = arch.input_hwd
    x = rng.standard_normal((batch, h_img, w_img, d_img))
    y = (np.arange(batch) % 2).astype(np.int64)
    mask_seed = int(rng.integers(2 ** 31))

    def fwd():
        return nw.forward(params, x, train=True,
                          rng=np.random.default_rng(mask_seed),
                          dropout_rate=dropout)

    trace = fwd()
    obj, report = nw.batch_objective(params, trace, y, lam, eta)
    grad_w, grad_b = nw.backward(params, trace, y, lam, eta, report)

    if report is not None:
        frozen_means = report.class_means.copy()
        frozen_sb = report.tr_sb

    def objective():
        t = fwd()
        data = float(np.mean(bce_loss(t.probs, y)))
        l2 = 0.5 * lam * sum(float((w ** 2).sum()) for w in params.weights)
        if t.fisher_features is None or eta == 0:
            fisher = 0.0
        else:
            tr_sw = float(((t.fisher_features - frozen_means[y]) ** 2).sum())
            fisher = 0.5 * eta * (tr_sw - frozen_sb)
        return data + l2 + fisher

    results = []
    names = params.layer_names()
    for kind, arrs, grads in (("w", params.weights, grad_w),
                              ("b", params.biases, grad_b)):
        for name, arr, g in zip(names, arrs, grads):
            worst, count = _fd_tensor(objective, arr, g, h, rng, max_coords)
            results.append(CheckResult(f"{name}.{kind}", worst, count))
    return results


def run_suite(size: str = "tiny", seed: int = 0, report=print):
    """Full check suite; returns True when every check is under tolerance.

    ``tiny`` checks every parameter coordinate of the miniature net plus the
    isolated kernels, per loss term. ``table1`` spot-checks sampled
    coordinates of the full-size network (exhaustive differencing there would
    take hours for no extra information).
    """
    t0 = time.perf_counter()
    if size == "tiny":
        arch, max_coords, batch = nw.tiny_arch(), None, 8
    elif size == "table1":
        arch, max_coords, batch = nw.table1_arch(), 6, 2
    else:
        raise ValueError(f"unknown gradcheck size {size!r}")

    ok = True
    for result in (check_conv3d(seed), check_maxpool3d(seed), check_dense(seed)):
        ok &= result.ok
        report(f"kernel {result.name}: max rel err {result.max_rel_err:.3e} "
               f"({result.n_checked} coords) {'OK' if result.ok else 'FAIL'}")

    terms = (("data", 0.0, 0.0), ("data+l2", 1e-4, 0.0), ("data+l2+fisher", 1e-4, 0.1))
    for label, lam, eta in terms:
        results = check_network(arch, seed, batch=batch, lam=lam, eta=eta,
                                max_coords=max_coords)
        worst = max(r.max_rel_err for r in results)
        term_ok = all(r.ok for r in results)
        ok &= term_ok
        report(f"objective[{label}] on {arch.name}: max rel err {worst:.3e} "
               f"{'OK' if term_ok else 'FAIL'}")
        for r in results:
            report(f"  {r.name}: {r.max_rel_err:.3e} ({r.n_checked} coords)")
    report(f"elapsed {time.perf_counter() - t0:.1f}s")
    return ok

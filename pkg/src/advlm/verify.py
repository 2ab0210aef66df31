"""Self-contained property suites: gradient checks against finite differences
and the closed-form/oracle equivalences the loss construction rests on.

Each suite returns a SuiteResult; the CLI prints one line per suite and the
test suite asserts on them at full scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .advsoft import AdvConfig, adv_nll_loss, advsoft_prob, brute_force_advsoft
from .analysis import (
    check_energy_bound,
    energy_phi,
    energy_psi,
    is_recognizable,
    nearest_neighbor_distances,
)
from .autodiff import Tape, Tensor
from .corpus import batchify
from .errors import EvaluationError
from .model import LMConfig, forward, init_params, zero_state
from .train import evaluate

FD_STEP = 1e-4


@dataclass
class SuiteResult:
    name: str
    passed: bool
    checked: int
    worst: float
    detail: str

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {self.detail}"


def _numerical_grad(f, x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    out = np.zeros_like(x)
    flat_x = x.ravel()
    flat_g = out.ravel()
    for k in range(flat_x.size):
        orig = flat_x[k]
        flat_x[k] = orig + step
        hi = f()
        flat_x[k] = orig - step
        lo = f()
        flat_x[k] = orig
        flat_g[k] = (hi - lo) / (2.0 * step)
    return out


def _rel_error(a: np.ndarray, b: np.ndarray) -> float:
    a = np.zeros(b.shape) if a is None else a
    num = np.linalg.norm((a - b).ravel())
    return num / max(np.linalg.norm(b.ravel()), 1e-8)


def _fd_check(build, tensors, rng) -> float:
    """One taped backward vs central differences; returns the worst rel err.

    build() must construct the output from the tensors' current values so the
    same closure serves both the taped pass and the perturbed evaluations.
    """
    for t in tensors:
        t.zero_grad()
    with Tape() as tape:
        out = build()
        if out.shape == ():
            loss = out
            weights = None
        else:
            weights = Tensor(rng.normal(size=out.shape))
            loss = ad.sum_all(ad.mul(out, weights))
        tape.backward(loss)

    def value():
        out = build()
        if weights is None:
            return out.item()
        return float((out.values * weights.values).sum())

    worst = 0.0
    for t in tensors:
        num = _numerical_grad(value, t.values)
        worst = max(worst, _rel_error(t.grad, num))
    return worst


def _op_cases(rng):
    def t(*shape, lo=-2.0, hi=2.0):
        return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True)

    n, m = int(rng.integers(2, 5)), int(rng.integers(2, 5))
    a, b = t(n, m), t(n, m)
    yield "add", lambda: ad.add(a, b), [a, b]
    yield "sub", lambda: ad.sub(a, b), [a, b]
    yield "mul", lambda: ad.mul(a, b), [a, b]
    c = t(n, m)
    yield "add_const", lambda: ad.add_const(c, 1.7), [c]
    yield "scale", lambda: ad.scale(c, -0.6), [c]
    mrow, vrow = t(n, m), t(m)
    yield "add_rowvec", lambda: ad.add_rowvec(mrow, vrow), [mrow, vrow]
    x = t(n, m)
    yield "tanh", lambda: ad.tanh(x), [x]
    yield "sigmoid", lambda: ad.sigmoid(x), [x]
    yield "exp", lambda: ad.exp(x), [x]
    pos = t(n, m, lo=0.1, hi=2.0)
    yield "log", lambda: ad.log(pos), [pos]
    k = int(rng.integers(2, 5))
    ma, mb = t(n, k), t(k, m)
    yield "matmul", lambda: ad.matmul(ma, mb), [ma, mb]
    yield "transpose", lambda: ad.transpose(ma), [ma]
    yield "sum_all", lambda: ad.sum_all(x), [x]
    v = t(int(rng.integers(2, 7)))
    yield "log_sum_exp", lambda: ad.log_sum_exp(v), [v]
    yield "logsumexp_rows", lambda: ad.logsumexp_rows(x), [x]
    yield "l2_norm", lambda: ad.l2_norm(v), [v]
    emb = t(int(rng.integers(3, 6)), m)
    ids = rng.integers(0, emb.shape[0], size=n)
    yield "gather_rows", lambda: ad.gather_rows(emb, ids), [emb]
    cols = rng.integers(0, m, size=n)
    yield "take_per_row", lambda: ad.take_per_row(x, cols), [x]
    yield "slice_cols", lambda: ad.slice_cols(x, 1, m), [x]
    p1, p2 = t(n, m), t(int(rng.integers(1, 4)), m)
    yield "concat_rows", lambda: ad.concat_rows([p1, p2]), [p1, p2]


def verify_gradients(seed: int = 0, instances: int = 100,
                     op_tol: float = 1e-4, model_tol: float = 1e-3) -> SuiteResult:
    rng = np.random.default_rng(seed)
    ops = list(_op_cases(rng))
    per_op = max(1, instances // len(ops))
    worst_op = 0.0
    checked = 0
    for _ in range(per_op):
        for name, build, tensors in _op_cases(rng):
            err = _fd_check(build, tensors, rng)
            worst_op = max(worst_op, err)
            checked += 1
            if err >= op_tol:
                return SuiteResult("gradients", False, checked, err,
                                   f"op {name} rel err {err:.3g} >= {op_tol:g}")

    # full-model finite differences make sense only where the loss gradient
    # is the true derivative, i.e. with the perturbation off; the detached
    # eps*||h|| path is checked against its analytic form below
    worst_model = 0.0
    off = AdvConfig("off")
    shapes = [(1, 4), (1, 4), (2, 3)]
    for trial, (layers, d) in enumerate(shapes):
        cfg = LMConfig(vocab_size=8, embed_dim=d, num_layers=layers,
                       hidden_dim=d + 1, init_range=0.25)
        params = init_params(cfg, seed + trial)
        ids = rng.integers(0, 8, size=(3, 2))
        targets = rng.integers(0, 8, size=(3, 2))

        def model_loss():
            contexts, _ = forward(params, ids, zero_state(cfg, 2))
            return adv_nll_loss(params, contexts, targets, off).total

        with Tape() as tape:
            tape.backward(model_loss())
        for t in params.tensors():
            num = _numerical_grad(lambda: model_loss().item(), t.values)
            worst_model = max(worst_model, _rel_error(t.grad, num))
            t.zero_grad()
        checked += 1
        if worst_model >= model_tol:
            return SuiteResult("gradients", False, checked, worst_model,
                               f"model rel err {worst_model:.3g} >= {model_tol:g}")

    worst_head = _adv_head_error(seed)
    checked += 1
    if worst_head >= 1e-10:
        return SuiteResult("gradients", False, checked, worst_head,
                           f"adversarial head grads off analytic form by "
                           f"{worst_head:.3g}")
    worst = max(worst_op, worst_model, worst_head)
    return SuiteResult(
        "gradients", True, checked, worst,
        f"{checked} checks, worst op err {worst_op:.3g}, model err "
        f"{worst_model:.3g}, adv head err {worst_head:.3g}")


def _adv_head_error(seed: int) -> float:
    """Taped gradients of the adversarial loss vs the closed-form softmax
    gradients with the offsets held constant."""
    rng = np.random.default_rng(seed + 999)
    worst = 0.0
    for mode in (AdvConfig("fixed", 0.7), AdvConfig("adaptive", 0.1)):
        params = init_params(LMConfig(vocab_size=6, embed_dim=4, init_range=0.4),
                             seed)
        H = Tensor(rng.normal(size=(5, 4)), requires_grad=True)
        targets = rng.integers(0, 6, size=(5, 1))
        with Tape() as tape:
            batch = adv_nll_loss(params, H, targets, mode)
            tape.backward(batch.total)
        flat = targets.reshape(-1)
        W = params.embedding.values
        z = H.values @ W.T
        n = np.arange(5)
        z[n, flat] -= batch.epsilons * np.linalg.norm(H.values, axis=1)
        m = z.max(axis=1, keepdims=True)
        q = np.exp(z - m)
        q /= q.sum(axis=1, keepdims=True)
        q[n, flat] -= 1.0
        worst = max(worst, _rel_error(H.grad, q @ W))
        worst = max(worst, _rel_error(params.embedding.grad, q.T @ H.values))
    return worst


def verify_closed_form(seed: int = 0, instances: int = 1000,
                    samples: int = 10 ** 4, tol: float = 1e-9) -> SuiteResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in range(instances):
        V, d = int(rng.integers(2, 11)), int(rng.integers(1, 9))
        W = rng.normal(size=(V, d))
        h = rng.normal(size=d)
        eps = float(rng.uniform(0.0, 1.5))
        i = int(rng.integers(V))
        closed = advsoft_prob(i, W, h, eps)
        brute = brute_force_advsoft(i, W, h, eps, samples, rng)
        gap = abs(brute - closed)
        worst = max(worst, gap)
        if gap >= tol:
            side = "below" if brute < closed else "above"
            return SuiteResult("closed-form", False, k + 1, gap,
                               f"oracle {side} closed form by {gap:.3g} >= {tol:g}")
    return SuiteResult("closed-form", True, instances, worst,
                       f"{instances} instances x {samples} samples, worst gap "
                       f"{worst:.3g}")


def verify_reductions(seed: int = 0, instances: int = 2000,
                      tol: float = 1e-12) -> SuiteResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in range(instances):
        V, d = int(rng.integers(2, 12)), int(rng.integers(1, 9))
        W = rng.normal(size=(V, d))
        h = rng.normal(size=d)
        i = int(rng.integers(V))
        z = W @ h
        m = z.max()
        soft = float(np.exp(z[i] - m) / np.exp(z - m).sum())
        gap = abs(advsoft_prob(i, W, h, 0.0) - soft)
        worst = max(worst, gap)
        if gap >= tol:
            return SuiteResult("reductions", False, k + 1, gap,
                               f"eps=0 off softmax by {gap:.3g} >= {tol:g}")
        if np.linalg.norm(h) > 1e-6:
            probs = [advsoft_prob(i, W, h, e) for e in np.linspace(0.0, 2.0, 6)]
            if not all(a > b for a, b in zip(probs, probs[1:])):
                return SuiteResult("reductions", False, k + 1, 0.0,
                                   "probability not strictly decreasing in eps")
    return SuiteResult("reductions", True, instances, worst,
                       f"{instances} instances, worst eps=0 gap {worst:.3g}")


def verify_recognition_separation(seed: int = 0, instances: int = 10 ** 4) -> SuiteResult:
    rng = np.random.default_rng(seed)
    recognized = 0
    for k in range(instances):
        V, d = int(rng.integers(2, 11)), int(rng.integers(1, 9))
        W = rng.normal(size=(V, d))
        # half the instances get a deliberately close pair to stress the bound
        if k % 2:
            j = int(rng.integers(1, V))
            W[j] = W[0] + rng.uniform(0.0, 0.3) * rng.normal(size=d)
        h = rng.normal(size=d)
        eps = float(rng.uniform(0.0, 2.0))
        i = int(rng.integers(V))
        if is_recognizable(i, W, h, eps):
            recognized += 1
            nn = nearest_neighbor_distances(W)[i]
            if not nn > eps:
                return SuiteResult(
                    "separation", False, k + 1, float(eps - nn),
                    f"recognized word {i} has nn distance {nn:.6g} <= eps {eps:.6g}")
    # contrapositive: a pair within eps is never recognized
    W = rng.normal(size=(8, 5))
    W[4] = W[2] + 0.01 * rng.normal(size=5)
    eps = float(np.linalg.norm(W[4] - W[2]))
    probes = rng.normal(size=(instances, 5))
    z = probes @ W.T
    hnorm = np.linalg.norm(probes, axis=1)
    for i in (2, 4):
        own = z[:, i] - eps * hnorm
        others = np.delete(z, i, axis=1).max(axis=1)
        if (own > others).any():
            return SuiteResult("separation", False, instances, 1.0,
                               f"word {i} recognized despite a neighbor within eps")
    return SuiteResult(
        "separation", True, instances, 0.0,
        f"{instances} instances, {recognized} recognized, 0 violations; "
        f"contrapositive clean over {instances} probes")


def verify_energy_bound(seed: int = 0, instances: int = 10 ** 4,
                    tol: float = 1e-12) -> SuiteResult:
    rng = np.random.default_rng(seed)
    worst_eq = 0.0
    for k in range(instances):
        V, d = int(rng.integers(2, 21)), int(rng.integers(1, 17))
        W = rng.normal(size=(V, d))
        h = rng.normal(size=d)
        eps = float(rng.uniform(0.0, 1.0))
        i = int(rng.integers(V))
        p = advsoft_prob(i, W, h, eps)
        psi = energy_psi(i, W, h, eps)
        sig_psi = 1.0 / (1.0 + math.exp(-psi)) if psi >= 0 else \
            math.exp(psi) / (1.0 + math.exp(psi))
        gap = abs(p - sig_psi)
        worst_eq = max(worst_eq, gap)
        if gap >= tol:
            return SuiteResult("energy-bound", False, k + 1, gap,
                               f"advsoft != sigmoid(psi) by {gap:.3g} >= {tol:g}")
        phi, _ = energy_phi(i, W, float(np.linalg.norm(h)), eps)
        if psi > phi + tol:
            return SuiteResult("energy-bound", False, k + 1, psi - phi,
                               f"psi exceeds phi by {psi - phi:.3g}")
        _, bound, holds = check_energy_bound(i, W, h, eps)
        if not holds:
            return SuiteResult("energy-bound", False, k + 1, p - bound,
                               f"advsoft {p:.6g} exceeds bound {bound:.6g}")
    # tightness: zero context, and the anti-collinear pair
    p, bound, _ = check_energy_bound(2, rng.normal(size=(7, 3)), np.zeros(3), 0.8)
    if abs(p - bound) >= tol or abs(p - 1.0 / 7.0) >= tol:
        return SuiteResult("energy-bound", False, instances, abs(p - bound),
                           "zero-context tightness violated")
    W = np.array([[0.0, 0.0], [3.0, 0.0]])
    p, bound, _ = check_energy_bound(0, W, np.array([-2.0, 0.0]), 1.0)
    if abs(p - bound) >= tol:
        return SuiteResult("energy-bound", False, instances, abs(p - bound),
                           "anti-collinear tightness violated")
    return SuiteResult("energy-bound", True, instances, worst_eq,
                       f"{instances} instances, worst equality gap {worst_eq:.3g}; "
                       f"both tightness cases exact")


def verify_uniform_identity(seed: int = 0) -> SuiteResult:
    V = 11
    cfg = LMConfig(vocab_size=V, embed_dim=6, init_range=0.0)
    params = init_params(cfg, seed)
    ids = np.random.default_rng(seed).integers(0, V, size=240)
    try:
        ppl = evaluate(params, batchify(ids, 4, 6))
    except EvaluationError as e:
        return SuiteResult("uniform-identity", False, 1, math.inf, str(e))
    rel = abs(ppl - V) / V
    return SuiteResult("uniform-identity", rel < 0.01, 1, rel,
                       f"zero-weight perplexity {ppl:.6g} vs |V|={V} "
                       f"(rel err {rel:.3g})")


def run_all(seed: int = 0, scale: float = 1.0) -> list[SuiteResult]:
    """Run every suite; scale < 1 shrinks instance counts for smoke runs."""
    def n(full):
        return max(1, int(full * scale))

    return [
        verify_gradients(seed, instances=n(100)),
        verify_closed_form(seed, instances=n(1000), samples=n(10 ** 4)),
        verify_reductions(seed, instances=n(2000)),
        verify_recognition_separation(seed, instances=n(10 ** 4)),
        verify_energy_bound(seed, instances=n(10 ** 4)),
        verify_uniform_identity(seed),
    ]

"""Adversarial softmax: closed-form worst-case perturbation of the target
output embedding, the resulting probability/loss, and brute-force oracles.

The training loss lowers each target logit by eps*||h|| where both eps (in
adaptive mode) and ||h|| are treated as constants: no gradient flows through
either norm. Competitor logits are untouched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, NumericError, ShapeError
from .model import LMParams

MODES = ("off", "fixed", "adaptive")


@dataclass(frozen=True)
class AdvConfig:
    mode: str = "off"
    value: float = 0.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"adv mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "off" and self.value != 0.0:
            raise ConfigError("mode 'off' takes no value")
        if self.value < 0 or not np.isfinite(self.value):
            raise ConfigError(f"adv value must be finite and >= 0, got {self.value}")

    @classmethod
    def parse(cls, text: str) -> "AdvConfig":
        """Parse 'off', 'fixed:EPS', or 'adaptive:ALPHA'."""
        text = text.strip()
        if text == "off":
            return cls("off")
        head, sep, tail = text.partition(":")
        if not sep or head not in ("fixed", "adaptive"):
            raise ConfigError(f"cannot parse adv spec {text!r}")
        try:
            value = float(tail)
        except ValueError:
            raise ConfigError(f"cannot parse adv value in {text!r}")
        return cls(head, value)

    def __str__(self) -> str:
        if self.mode == "off":
            return "off"
        return f"{self.mode}:{self.value:g}"


@dataclass
class AdvLossBatch:
    total: Tensor
    count: int
    epsilons: np.ndarray

    @property
    def mean_nll(self) -> float:
        return self.total.item() / self.count


def epsilon_for_target(config: AdvConfig, w_target: np.ndarray) -> float:
    if config.mode == "off":
        return 0.0
    if config.mode == "fixed":
        return config.value
    return config.value * float(np.linalg.norm(w_target))


def optimal_perturbation(h: np.ndarray, eps: float) -> np.ndarray:
    """Worst-case perturbation of the target embedding: -eps*h/||h||."""
    h = np.asarray(h, dtype=np.float64)
    norm = np.linalg.norm(h)
    if norm == 0.0 or eps == 0.0:
        return np.zeros_like(h)
    return (-eps / norm) * h


def _prob_of_row(logits: np.ndarray, i: int) -> float:
    m = logits.max()
    return float(np.exp(logits[i] - m) / np.exp(logits - m).sum())


def _check_index(i: int, V: int) -> None:
    if not 0 <= i < V:
        raise IndexError(f"word id {i} out of range for vocab size {V}")


def advsoft_prob(i: int, W: np.ndarray, h: np.ndarray, eps: float) -> float:
    """Softmax probability of word i after the worst-case target perturbation:
    exp(w_i.h - eps||h||) / (exp(w_i.h - eps||h||) + sum_{j!=i} exp(w_j.h))."""
    W = np.asarray(W, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    V = W.shape[0]
    _check_index(i, V)
    if V == 1:
        return 1.0
    logits = W @ h
    logits[i] -= eps * np.linalg.norm(h)
    return _prob_of_row(logits, i)


def brute_force_advsoft(i: int, W: np.ndarray, h: np.ndarray, eps: float,
                        num_samples: int, rng: np.random.Generator | None = None) -> float:
    """Minimize softmax(i) over sampled perturbations: the analytic candidate,
    num_samples all-word sets at radius eps/2 each, and num_samples single-word
    perturbations at radius eps. Returns the smallest probability found."""
    W = np.asarray(W, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    V, d = W.shape
    _check_index(i, V)
    if num_samples < 1:
        raise ConfigError(f"num_samples must be >= 1, got {num_samples}")
    if V == 1:
        return 1.0
    if rng is None:
        rng = np.random.default_rng(0)

    base = W @ h
    hnorm = np.linalg.norm(h)
    best = _prob_of_row(base.copy(), i)

    # analytic single perturbation at radius eps
    z = base.copy()
    z[i] += optimal_perturbation(h, eps) @ h
    best = min(best, _prob_of_row(z, i))

    # the sharp member of the all-words family: target pushed down eps/2,
    # every competitor pushed up eps/2, both along h
    z = base + 0.5 * eps * hnorm
    z[i] = base[i] - 0.5 * eps * hnorm
    best = min(best, _prob_of_row(z, i))

    def ball(shape, radius, boundary):
        v = rng.normal(size=shape)
        v /= np.linalg.norm(v, axis=-1, keepdims=True)
        if boundary:
            return radius * v
        r = radius * rng.uniform(size=shape[:-1] + (1,)) ** (1.0 / d)
        return r * v

    half = num_samples // 2
    for s, boundary in ((half, True), (num_samples - half, False)):
        if s == 0:
            continue
        # all words perturbed, each within radius eps/2
        noise = ball((s, V, d), eps / 2.0, boundary)
        logits = base + noise @ h
        m = logits.max(axis=1, keepdims=True)
        probs = np.exp(logits[:, i] - m[:, 0]) / np.exp(logits - m).sum(axis=1)
        best = min(best, float(probs.min()))
        # target only, within radius eps
        noise = ball((s, d), eps, boundary)
        zi = base[i] + noise @ h
        rest = np.delete(base, i)
        m = np.maximum(zi, rest.max())
        probs = np.exp(zi - m) / (np.exp(zi - m) + np.exp(rest[None, :] - m[:, None]).sum(axis=1))
        best = min(best, float(probs.min()))
    return best


def adv_nll_loss(params: LMParams, contexts: Tensor, targets: np.ndarray,
                 config: AdvConfig) -> AdvLossBatch:
    """Total NLL over a window, with each target logit lowered by the
    detached eps*||h|| offset. targets is [L x B]; contexts rows are the
    matching time-major positions."""
    targets = np.asarray(targets)
    flat = targets.reshape(-1)
    if contexts.shape[0] != flat.size:
        raise ShapeError(
            f"contexts rows {contexts.shape[0]} != target positions {flat.size}"
        )
    V = params.config.vocab_size
    if flat.size and (flat.min() < 0 or flat.max() >= V):
        raise IndexError(f"target id out of range for vocab size {V}")

    logits = ad.matmul(contexts, ad.transpose(params.embedding))

    if config.mode == "off":
        eps = np.zeros(flat.size)
    elif config.mode == "fixed":
        eps = np.full(flat.size, config.value)
    else:
        eps = config.value * np.linalg.norm(params.embedding.values[flat], axis=1)

    if eps.any():
        # constant offsets: no gradient through ||h|| or ||w_target||
        h_norms = np.linalg.norm(contexts.values, axis=1)
        offsets = np.zeros((flat.size, V))
        offsets[np.arange(flat.size), flat] = -eps * h_norms
        adjusted = ad.add(logits, Tensor(offsets))
    else:
        adjusted = logits

    nll = ad.sub(ad.logsumexp_rows(adjusted), ad.take_per_row(adjusted, flat))
    finite = np.isfinite(nll.values)
    if not finite.all():
        n = int(np.argmin(finite))
        B = targets.shape[1] if targets.ndim == 2 else 1
        raise NumericError(
            f"non-finite loss at window position (t={n // B}, b={n % B})"
        )
    return AdvLossBatch(ad.sum_all(nll), flat.size, eps)

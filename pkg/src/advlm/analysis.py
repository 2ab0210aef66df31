"""Embedding-diversity diagnostics: nearest-neighbor distances, spectrum,
recognizability, and the separation/energy-bound theorem checkers.

All functions take plain numpy matrices; nothing here touches the tape.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .advsoft import AdvConfig, advsoft_prob, epsilon_for_target
from .errors import NumericError, ShapeError

BOUND_SLACK = 1e-12


def nearest_neighbor_distances(W: np.ndarray) -> np.ndarray:
    """out[i] = min over j != i of ||w_i - w_j||, computed row by row."""
    W = np.asarray(W, dtype=np.float64)
    V = W.shape[0]
    if V < 2:
        raise ShapeError(f"need at least 2 rows, got {V}")
    out = np.empty(V)
    for i in range(V):
        d2 = ((W - W[i]) ** 2).sum(axis=1)
        d2[i] = np.inf
        out[i] = math.sqrt(d2.min())
    return out


def _offdiag_norm(A: np.ndarray) -> float:
    return math.sqrt(2.0 * (np.triu(A, 1) ** 2).sum())


def _jacobi_eigenvalues(A: np.ndarray, tol: float = 1e-12,
                        max_sweeps: int = 100) -> np.ndarray:
    """Cyclic Jacobi rotations on a symmetric matrix until the off-diagonal
    norm drops below tol."""
    A = A.copy()
    n = A.shape[0]
    if n == 1:
        return np.diag(A).copy()
    for _ in range(max_sweeps):
        if _offdiag_norm(A) < tol:
            return np.diag(A).copy()
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                if theta >= 0:
                    t = 1.0 / (theta + math.sqrt(theta * theta + 1.0))
                else:
                    t = 1.0 / (theta - math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                cp, cq = A[:, p].copy(), A[:, q].copy()
                A[:, p] = c * cp - s * cq
                A[:, q] = s * cp + c * cq
                rp, rq = A[p, :].copy(), A[q, :].copy()
                A[p, :] = c * rp - s * rq
                A[q, :] = s * rp + c * rq
                A[p, q] = A[q, p] = 0.0
    if _offdiag_norm(A) >= tol:
        raise NumericError("eigensolve did not converge")
    return np.diag(A).copy()


def singular_values(W: np.ndarray, normalize: bool = True) -> np.ndarray:
    """Singular values of W via the eigenvalues of the smaller Gram matrix,
    sorted descending; normalized so the largest is 1 unless normalize=False."""
    W = np.asarray(W, dtype=np.float64)
    if not W.any():
        raise NumericError("all-zero matrix has no defined spectrum shape")
    V, d = W.shape
    gram = W.T @ W if V >= d else W @ W.T
    eig = _jacobi_eigenvalues(gram)
    sv = np.sqrt(np.clip(eig, 0.0, None))
    sv = np.sort(sv)[::-1]
    if normalize:
        sv = sv / sv[0]
    return sv


def sv_entropy(sv: np.ndarray) -> float:
    """Entropy -sum p ln p of the spectrum normalized to a distribution."""
    sv = np.asarray(sv, dtype=np.float64)
    p = sv / sv.sum()
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def is_recognizable(i: int, W: np.ndarray, h: np.ndarray, eps: float) -> bool:
    """True when w_i strictly dominates every competitor even after its logit
    is lowered by eps*||h||."""
    W = np.asarray(W, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    V = W.shape[0]
    if not 0 <= i < V:
        raise IndexError(f"word id {i} out of range for vocab size {V}")
    if V < 2:
        raise ShapeError(f"need at least 2 rows, got {V}")
    z = W @ h
    own = z[i] - eps * np.linalg.norm(h)
    z[i] = -np.inf
    return bool(own > z.max())


def _recognized_per_probe(W: np.ndarray, H: np.ndarray, eps_per_word: np.ndarray):
    """For each probe row of H, the recognized word id or -1. Only the strict
    argmax can dominate, so one candidate per probe suffices."""
    z = H @ W.T
    order = np.argsort(z, axis=1)
    best = order[:, -1]
    second = order[:, -2]
    n = np.arange(H.shape[0])
    hnorm = np.linalg.norm(H, axis=1)
    ok = z[n, best] - eps_per_word[best] * hnorm > z[n, second]
    return np.where(ok, best, -1)


@dataclass(frozen=True)
class SeparationReport:
    recognized_words: list[int]
    violations: list[tuple[int, float, float]]  # (word, nn_distance, eps)

    @property
    def holds(self) -> bool:
        return not self.violations


def check_separation_theorem(W: np.ndarray, eps: float,
                             probes: np.ndarray) -> SeparationReport:
    """Every word recognized by some probe must sit further than eps from its
    nearest neighbor. Violations are returned, never silently dropped."""
    W = np.asarray(W, dtype=np.float64)
    probes = np.atleast_2d(np.asarray(probes, dtype=np.float64))
    nn = nearest_neighbor_distances(W)
    eps_vec = np.full(W.shape[0], eps)
    winners = _recognized_per_probe(W, probes, eps_vec)
    recognized = sorted(set(int(w) for w in winners if w >= 0))
    violations = [(i, float(nn[i]), eps) for i in recognized if not nn[i] > eps]
    return SeparationReport(recognized, violations)


def _neg_logsumexp(terms: np.ndarray) -> float:
    m = terms.max()
    return float(-(m + np.log(np.exp(terms - m).sum())))


def energy_phi(i: int, W: np.ndarray, a: float, eps: float) -> tuple[float, float]:
    """Distance energy Phi = -log sum_{j!=i} exp(-a(||w_i-w_j|| - eps)) and its
    upper bound a*min_{j!=i}(||w_i-w_j|| - eps)."""
    W = np.asarray(W, dtype=np.float64)
    V = W.shape[0]
    if V < 2:
        raise ShapeError(f"need at least 2 rows, got {V}")
    if not 0 <= i < V:
        raise IndexError(f"word id {i} out of range for vocab size {V}")
    d = np.linalg.norm(W - W[i], axis=1)
    d = np.delete(d, i)
    phi = _neg_logsumexp(-a * (d - eps))
    return phi, float(a * (d.min() - eps))


def energy_psi(i: int, W: np.ndarray, h: np.ndarray, eps: float) -> float:
    """Context energy Psi = -log sum_{j!=i} exp((w_j-w_i).h + eps||h||);
    the adversarial probability equals sigmoid(Psi) exactly."""
    W = np.asarray(W, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    V = W.shape[0]
    if V < 2:
        raise ShapeError(f"need at least 2 rows, got {V}")
    if not 0 <= i < V:
        raise IndexError(f"word id {i} out of range for vocab size {V}")
    terms = (W - W[i]) @ h + eps * np.linalg.norm(h)
    return _neg_logsumexp(np.delete(terms, i))


def _sigmoid(t: float) -> float:
    if t >= 0:
        return 1.0 / (1.0 + math.exp(-t))
    e = math.exp(t)
    return e / (1.0 + e)


def check_energy_bound(i: int, W: np.ndarray, h: np.ndarray,
                       eps: float) -> tuple[float, float, bool]:
    """Both sides of advsoft_prob <= sigmoid(Phi(i, W, ||h||))."""
    p = advsoft_prob(i, W, h, eps)
    phi, _ = energy_phi(i, W, float(np.linalg.norm(np.asarray(h))), eps)
    bound = _sigmoid(phi)
    return p, bound, p <= bound + BOUND_SLACK


@dataclass
class DiversityReport:
    nn_distances: np.ndarray
    singular_values_normalized: np.ndarray
    sv_entropy: float
    recognized_words: list[dict]

    def to_dict(self) -> dict:
        return {
            "nn_distances": [float(x) for x in self.nn_distances],
            "singular_values_normalized":
                [float(x) for x in self.singular_values_normalized],
            "sv_entropy": float(self.sv_entropy),
            "recognized_words": self.recognized_words,
        }

    def save(self, path: str) -> None:
        tmp = path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")
        os.replace(tmp, path)


def diversity_report(W: np.ndarray, adv: AdvConfig,
                     probe_sets: list[tuple[str, np.ndarray]]) -> DiversityReport:
    """Full diagnostics over labeled probe batches, e.g. [("train", H),
    ("random", R)]. One recognized-word entry per (word, probe source)."""
    W = np.asarray(W, dtype=np.float64)
    nn = nearest_neighbor_distances(W)
    sv = singular_values(W)
    eps_vec = np.array([epsilon_for_target(adv, W[i]) for i in range(W.shape[0])])
    seen = set()
    entries = []
    for source, H in probe_sets:
        H = np.atleast_2d(np.asarray(H, dtype=np.float64))
        for w in _recognized_per_probe(W, H, eps_vec):
            if w < 0 or (int(w), source) in seen:
                continue
            seen.add((int(w), source))
            entries.append({
                "word_id": int(w),
                "probe_source": source,
                "epsilon": float(eps_vec[w]),
                "nn_distance": float(nn[w]),
            })
    entries.sort(key=lambda e: (e["word_id"], e["probe_source"]))
    return DiversityReport(nn, sv, sv_entropy(sv), entries)


def context_probes(params, stream, num_random: int = 1000,
                   rng: np.random.Generator | None = None):
    """Default probe sets: every context vector from one evaluation pass over
    the stream, plus random unit vectors scaled to the median context norm."""
    from .model import forward, zero_state

    if rng is None:
        rng = np.random.default_rng(0)
    state = zero_state(params.config, stream.batch_size)
    rows = []
    for inputs, _ in stream.windows():
        contexts, state = forward(params, inputs, state)
        rows.append(contexts.values)
    H = np.vstack(rows)
    scale = float(np.median(np.linalg.norm(H, axis=1)))
    if scale == 0.0:
        scale = 1.0
    R = rng.normal(size=(num_random, params.config.embed_dim))
    R *= scale / np.linalg.norm(R, axis=1, keepdims=True)
    return [("train", H), ("random", R)]

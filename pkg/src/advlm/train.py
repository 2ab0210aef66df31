"""SGD training loop: scheduled input noise, adversarial loss, clipped steps.

Each window runs on its own tape; the hidden state is detached at window
boundaries so gradients never cross them (truncated BPTT). Evaluation always
uses the plain softmax (no perturbation, no noise, no recording).
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .advsoft import AdvConfig, adv_nll_loss
from .autodiff import Tape
from .corpus import BatchStream
from .errors import ConfigError, EvaluationError, NumericError
from .model import LMParams, detach_state, forward, zero_state

LOG_HEADER = "epoch,train_ppl,valid_ppl,wall_s,noise_std,mean_eps"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int = 32
    bptt_len: int = 32
    learning_rate: float = 4.0
    grad_clip: float = 0.25
    seed: int = 0
    adv: AdvConfig = field(default_factory=AdvConfig)
    input_noise_start: float = 0.2
    input_noise_end: float = 0.0
    eval_interval: int = 1

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.bptt_len < 1:
            raise ConfigError(
                f"epochs, batch_size, bptt_len must be positive, got "
                f"{self.epochs}, {self.batch_size}, {self.bptt_len}"
            )
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.grad_clip <= 0:
            raise ConfigError(f"grad_clip must be positive, got {self.grad_clip}")
        if not self.input_noise_start >= self.input_noise_end >= 0:
            raise ConfigError(
                f"need input_noise_start >= input_noise_end >= 0, got "
                f"{self.input_noise_start}, {self.input_noise_end}"
            )
        if self.eval_interval < 1:
            raise ConfigError(f"eval_interval must be >= 1, got {self.eval_interval}")


@dataclass
class EpochStats:
    nll: float
    tokens: int
    mean_eps: float

    @property
    def ppl(self) -> float:
        return math.exp(self.nll / self.tokens)


@dataclass
class LogRow:
    epoch: int
    train_ppl: float
    valid_ppl: float
    wall_s: float
    noise_std: float
    mean_eps: float

    def as_csv(self) -> str:
        return "%d,%.9g,%.9g,%.9g,%.9g,%.9g" % (
            self.epoch, self.train_ppl, self.valid_ppl, self.wall_s,
            self.noise_std, self.mean_eps)


@dataclass
class TrainLog:
    rows: list[LogRow] = field(default_factory=list)

    def save(self, path: str) -> None:
        tmp = path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(LOG_HEADER + "\n")
            for row in self.rows:
                fh.write(row.as_csv() + "\n")
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: str) -> "TrainLog":
        log = cls()
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().strip()
            if header != LOG_HEADER:
                raise ConfigError(f"{path}: unexpected log header {header!r}")
            for line in fh:
                e, tp, vp, w, n, m = line.strip().split(",")
                log.rows.append(LogRow(int(e), float(tp), float(vp), float(w),
                                       float(n), float(m)))
        return log

    @property
    def final_valid_ppl(self) -> float:
        for row in reversed(self.rows):
            if not math.isnan(row.valid_ppl):
                return row.valid_ppl
        raise EvaluationError("log has no validation entries")


def sgd_step(params: LMParams, learning_rate: float, grad_clip: float) -> None:
    """Global-norm clip, apply p -= lr*g, then clear all gradients."""
    tensors = [t for t in params.tensors() if t.grad is not None]
    sq = 0.0
    for t in tensors:
        g = t.grad
        if not np.isfinite(g).all():
            raise NumericError("non-finite gradient; step aborted")
        sq += float((g * g).sum())
    norm = math.sqrt(sq)
    scale = grad_clip / norm if norm > grad_clip else 1.0
    for t in tensors:
        t.values -= learning_rate * scale * t.grad
        t.grad = None


def noise_schedule(epoch: int, total_epochs: int, start: float, end: float) -> float:
    if total_epochs == 1:
        return start
    return start + (end - start) * epoch / (total_epochs - 1)


def train_epoch(params: LMParams, stream: BatchStream, config: TrainConfig,
                epoch: int) -> EpochStats:
    """One pass over the stream: forward, adversarial loss, backward, step."""
    std = noise_schedule(epoch, config.epochs, config.input_noise_start,
                         config.input_noise_end)
    rng = np.random.default_rng([config.seed, epoch])
    state = zero_state(params.config, stream.batch_size)
    total_nll = 0.0
    tokens = 0
    eps_sum = 0.0
    for w_idx, (inputs, targets) in enumerate(stream.windows()):
        try:
            with Tape() as tape:
                contexts, state = forward(params, inputs, state, std, rng)
                batch = adv_nll_loss(params, contexts, targets, config.adv)
                tape.backward(ad.scale(batch.total, 1.0 / batch.count))
            sgd_step(params, config.learning_rate, config.grad_clip)
        except NumericError as e:
            raise NumericError(f"epoch {epoch}, window {w_idx}: {e}")
        state = detach_state(state)
        total_nll += batch.total.item()
        tokens += batch.count
        eps_sum += float(batch.epsilons.sum())
    if tokens == 0:
        raise EvaluationError("stream produced no windows")
    return EpochStats(total_nll, tokens, eps_sum / tokens)


def evaluate(params: LMParams, stream: BatchStream) -> float:
    """Perplexity exp(total NLL / tokens) under the plain softmax."""
    if stream.num_windows == 0:
        raise EvaluationError("cannot evaluate on an empty stream")
    off = AdvConfig("off")
    state = zero_state(params.config, stream.batch_size)
    total, tokens = 0.0, 0
    for inputs, targets in stream.windows():
        contexts, state = forward(params, inputs, state)
        batch = adv_nll_loss(params, contexts, targets, off)
        total += batch.total.item()
        tokens += batch.count
    return math.exp(total / tokens)


def train(params: LMParams, train_stream: BatchStream,
          valid_stream: BatchStream | None, config: TrainConfig,
          progress=None) -> TrainLog:
    """Run the full schedule; validation runs every eval_interval epochs and
    on the last epoch, with NaN logged in between."""
    log = TrainLog()
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        stats = train_epoch(params, train_stream, config, epoch)
        wall = time.perf_counter() - t0
        last = epoch == config.epochs - 1
        if valid_stream is not None and (epoch % config.eval_interval == 0 or last):
            valid_ppl = evaluate(params, valid_stream)
        else:
            valid_ppl = math.nan
        std = noise_schedule(epoch, config.epochs, config.input_noise_start,
                             config.input_noise_end)
        row = LogRow(epoch, stats.ppl, valid_ppl, wall, std, stats.mean_eps)
        log.rows.append(row)
        if progress is not None:
            progress(row)
    return log

"""Tied-embedding LSTM language model.

One matrix serves both the input lookup and the output logits, so the final
LSTM layer must have exactly embed_dim units. Context vectors are returned
time-major as a single [(L*B) x d] tensor; row t*B + b is the state used to
predict the target at step t of batch column b.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import CheckpointError, ConfigError, ShapeError

CHECKPOINT_MAGIC = b"ADVLM001"


@dataclass(frozen=True)
class LMConfig:
    vocab_size: int
    embed_dim: int
    hidden_dim: int = 0
    num_layers: int = 1
    init_range: float = 0.1

    def __post_init__(self):
        if self.hidden_dim == 0:
            object.__setattr__(self, "hidden_dim", self.embed_dim)
        if self.vocab_size < 1 or self.embed_dim < 1 or self.num_layers < 1:
            raise ConfigError(
                f"vocab_size, embed_dim, num_layers must be positive, got "
                f"{self.vocab_size}, {self.embed_dim}, {self.num_layers}"
            )
        if self.hidden_dim < 1:
            raise ConfigError(f"hidden_dim must be positive, got {self.hidden_dim}")
        if self.init_range < 0:
            raise ConfigError(f"init_range must be non-negative, got {self.init_range}")

    @property
    def layer_sizes(self) -> list[int]:
        """Hidden width per layer; the last is pinned to embed_dim by tying."""
        return [self.hidden_dim] * (self.num_layers - 1) + [self.embed_dim]


@dataclass
class LayerParams:
    """One LSTM layer: gates packed in columns as [i | f | g | o]."""

    w_x: Tensor
    w_h: Tensor
    bias: Tensor


@dataclass
class LMParams:
    config: LMConfig
    embedding: Tensor
    layers: list[LayerParams] = field(default_factory=list)

    def named_tensors(self):
        yield "embedding", self.embedding
        for k, layer in enumerate(self.layers):
            yield f"layer{k}.w_x", layer.w_x
            yield f"layer{k}.w_h", layer.w_h
            yield f"layer{k}.bias", layer.bias

    def tensors(self):
        return [t for _, t in self.named_tensors()]

    def num_params(self) -> int:
        return sum(t.size for t in self.tensors())


@dataclass
class HiddenState:
    """Per-layer (h, c) pairs, each [batch_size x layer width]."""

    layers: list[tuple[Tensor, Tensor]]

    @property
    def batch_size(self) -> int:
        return self.layers[0][0].shape[0]


def init_params(config: LMConfig, seed: int) -> LMParams:
    rng = np.random.default_rng(seed)
    r = config.init_range

    def uniform(shape):
        return Tensor(rng.uniform(-r, r, size=shape), requires_grad=True)

    params = LMParams(config, uniform((config.vocab_size, config.embed_dim)))
    in_dim = config.embed_dim
    for h_dim in config.layer_sizes:
        params.layers.append(
            LayerParams(uniform((in_dim, 4 * h_dim)), uniform((h_dim, 4 * h_dim)),
                        uniform((4 * h_dim,)))
        )
        in_dim = h_dim
    return params


def zero_state(config: LMConfig, batch_size: int) -> HiddenState:
    return HiddenState([
        (Tensor(np.zeros((batch_size, h))), Tensor(np.zeros((batch_size, h))))
        for h in config.layer_sizes
    ])


def detach_state(state: HiddenState) -> HiddenState:
    return HiddenState([(ad.detach(h), ad.detach(c)) for h, c in state.layers])


def _lstm_step(layer: LayerParams, x: Tensor, h: Tensor, c: Tensor):
    # The +1.0 on the forget gate is part of the cell, not a parameter, so
    # all-zero parameters stay exactly all-zero.
    H = h.shape[1]
    pre = ad.add_rowvec(ad.add(ad.matmul(x, layer.w_x), ad.matmul(h, layer.w_h)), layer.bias)
    i = ad.sigmoid(ad.slice_cols(pre, 0, H))
    f = ad.sigmoid(ad.add_const(ad.slice_cols(pre, H, 2 * H), 1.0))
    g = ad.tanh(ad.slice_cols(pre, 2 * H, 3 * H))
    o = ad.sigmoid(ad.slice_cols(pre, 3 * H, 4 * H))
    c_new = ad.add(ad.mul(f, c), ad.mul(i, g))
    h_new = ad.mul(o, ad.tanh(c_new))
    return h_new, c_new


def forward(params: LMParams, input_ids: np.ndarray, state: HiddenState,
            input_noise_std: float = 0.0, rng: np.random.Generator | None = None):
    """Run the stack over a [L x B] id window.

    Returns (contexts, new_state) where contexts is [(L*B) x embed_dim],
    time-major. Noise is added to looked-up input embeddings only; the
    output-side use of the embedding matrix never sees it.
    """
    input_ids = np.asarray(input_ids)
    if input_ids.ndim != 2:
        raise ShapeError(f"input_ids must be [L x B], got shape {input_ids.shape}")
    if len(state.layers) != len(params.layers):
        raise ShapeError(
            f"state has {len(state.layers)} layers, model has {len(params.layers)}"
        )
    L, B = input_ids.shape
    if state.batch_size != B:
        raise ShapeError(f"state batch size {state.batch_size} != input batch size {B}")
    if input_noise_std > 0 and rng is None:
        raise ConfigError("input_noise_std > 0 requires an rng")

    hs = [h for h, _ in state.layers]
    cs = [c for _, c in state.layers]
    steps = []
    for t in range(L):
        x = ad.gather_rows(params.embedding, input_ids[t])
        if input_noise_std > 0:
            noise = rng.normal(0.0, input_noise_std, size=x.shape)
            x = ad.add(x, Tensor(noise))
        for k, layer in enumerate(params.layers):
            hs[k], cs[k] = _lstm_step(layer, x, hs[k], cs[k])
            x = hs[k]
        steps.append(x)
    contexts = steps[0] if L == 1 else ad.concat_rows(steps)
    return contexts, HiddenState(list(zip(hs, cs)))


def _write_tensor(fh, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    fh.write(struct.pack("<q", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}q", *arr.shape))
    fh.write(arr.tobytes())


def _read_exact(fh, n: int, section: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError(f"truncated checkpoint while reading {section}")
    return buf


def _read_tensor(fh, name: str) -> np.ndarray:
    (rank,) = struct.unpack("<q", _read_exact(fh, 8, name))
    if not 0 < rank <= 4:
        raise CheckpointError(f"bad tensor rank {rank} for {name}")
    dims = struct.unpack(f"<{rank}q", _read_exact(fh, 8 * rank, name))
    count = int(np.prod(dims))
    data = np.frombuffer(_read_exact(fh, 8 * count, name), dtype="<f8")
    return data.reshape(dims).astype(np.float64)


def save_checkpoint(params: LMParams, path: str) -> None:
    """Binary format: magic, 4 int64 config fields, init_range float64, then
    each tensor from named_tensors() as (rank, dims, float64 data), all
    little-endian. Written atomically."""
    cfg = params.config
    tmp = path + ".tmp"
    try:
        with open(tmp, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<4q", cfg.vocab_size, cfg.embed_dim,
                                 cfg.hidden_dim, cfg.num_layers))
            fh.write(struct.pack("<d", cfg.init_range))
            for _, t in params.named_tensors():
                _write_tensor(fh, t.values)
        os.replace(tmp, path)
    except OSError as e:
        raise CheckpointError(f"cannot write checkpoint {path}: {e}")


def load_checkpoint(path: str) -> LMParams:
    try:
        fh = open(path, "rb")
    except OSError as e:
        raise CheckpointError(f"cannot open checkpoint {path}: {e}")
    with fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
        v, d, h, n = struct.unpack("<4q", _read_exact(fh, 32, "config"))
        (init_range,) = struct.unpack("<d", _read_exact(fh, 8, "config"))
        try:
            cfg = LMConfig(v, d, h, n, init_range)
        except ConfigError as e:
            raise CheckpointError(f"{path}: invalid config: {e}")
        params = LMParams(cfg, Tensor(np.empty(0), requires_grad=True))
        params.layers = [
            LayerParams(Tensor(np.empty(0), requires_grad=True),
                        Tensor(np.empty(0), requires_grad=True),
                        Tensor(np.empty(0), requires_grad=True))
            for _ in range(cfg.num_layers)
        ]
        expected = _expected_shapes(cfg)
        for name, t in params.named_tensors():
            arr = _read_tensor(fh, name)
            if arr.shape != expected[name]:
                raise CheckpointError(
                    f"{path}: tensor {name} has shape {arr.shape}, expected {expected[name]}"
                )
            t.values = arr
        if fh.read(1):
            raise CheckpointError(f"{path}: trailing bytes after last tensor")
    return params


def _expected_shapes(cfg: LMConfig) -> dict[str, tuple]:
    shapes = {"embedding": (cfg.vocab_size, cfg.embed_dim)}
    in_dim = cfg.embed_dim
    for k, h in enumerate(cfg.layer_sizes):
        shapes[f"layer{k}.w_x"] = (in_dim, 4 * h)
        shapes[f"layer{k}.w_h"] = (h, 4 * h)
        shapes[f"layer{k}.bias"] = (4 * h,)
        in_dim = h
    return shapes

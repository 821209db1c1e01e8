"""The BornoViT vision transformer: configuration, parameters and forward pass."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .tensor import Tensor

LN_EPS = 1e-6

BLOCK_PARAM_NAMES = (
    "ln1_gamma", "ln1_beta", "qkv_weight", "out_proj_weight", "out_proj_bias",
    "ln2_gamma", "ln2_beta", "fc1_weight", "fc1_bias", "fc2_weight", "fc2_bias",
)


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 224
    patch_size: int = 16
    in_channels: int = 3
    embed_dim: int = 128
    depth: int = 4
    num_heads: int = 2
    mlp_hidden_dim: int = 256
    num_classes: int = 10
    dropout_p: float = 0.1

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("image_size", "patch_size", "in_channels", "embed_dim", "num_heads",
                     "mlp_hidden_dim", "num_classes"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if not isinstance(self.depth, (int, np.integer)) or self.depth < 0:
            raise ConfigError(f"depth must be a non-negative integer, got {self.depth!r}")
        if self.image_size % self.patch_size:
            raise ConfigError(f"image_size {self.image_size} not divisible by patch_size {self.patch_size}")
        if self.embed_dim % self.num_heads:
            raise ConfigError(f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}")
        if not 0 <= self.dropout_p < 1:
            raise ConfigError(f"dropout_p must be in [0, 1), got {self.dropout_p}")

    @property
    def grid_size(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid_size ** 2

    @property
    def num_tokens(self) -> int:
        return self.num_patches + 1

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.num_heads

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def parameter_shapes(config: ModelConfig) -> Dict[str, tuple]:
    """Name -> shape for every learnable tensor, in canonical order."""
    d, h, p = config.embed_dim, config.mlp_hidden_dim, config.patch_size
    shapes = {
        "patch_proj_weight": (d, config.in_channels, p, p),
        "patch_proj_bias": (d,),
        "cls_token": (1, 1, d),
        "pos_embedding": (1, config.num_tokens, d),
    }
    block = {
        "ln1_gamma": (d,), "ln1_beta": (d,),
        "qkv_weight": (3 * d, d),
        "out_proj_weight": (d, d), "out_proj_bias": (d,),
        "ln2_gamma": (d,), "ln2_beta": (d,),
        "fc1_weight": (h, d), "fc1_bias": (h,),
        "fc2_weight": (d, h), "fc2_bias": (d,),
    }
    for b in range(config.depth):
        for name in BLOCK_PARAM_NAMES:
            shapes[f"blocks.{b}.{name}"] = block[name]
    shapes["final_ln_gamma"] = (d,)
    shapes["final_ln_beta"] = (d,)
    shapes["head_weight"] = (config.num_classes, d)
    shapes["head_bias"] = (config.num_classes,)
    return shapes


@dataclass
class ViTParams:
    """The full named parameter set of one model, keyed by canonical name."""

    config: ModelConfig
    tensors: Dict[str, Tensor]

    def __post_init__(self):
        expected = parameter_shapes(self.config)
        if list(self.tensors) != list(expected):
            missing = sorted(set(expected) - set(self.tensors))
            extra = sorted(set(self.tensors) - set(expected))
            raise ShapeError(f"parameter names do not match config (missing {missing}, unexpected {extra})")
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise ShapeError(f"{name}: expected shape {shape}, got {self.tensors[name].shape}")

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    def num_parameters(self) -> int:
        return int(sum(t.data.size for t in self.tensors.values()))

    def zero_grad(self):
        for t in self.tensors.values():
            t.grad = None

    def to_arrays(self, copy: bool = True) -> Dict[str, np.ndarray]:
        return {k: (t.data.copy() if copy else t.data) for k, t in self.tensors.items()}

    @classmethod
    def from_arrays(cls, config: ModelConfig, arrays: Dict[str, np.ndarray], dtype=np.float32) -> "ViTParams":
        names = list(parameter_shapes(config))
        missing = [n for n in names if n not in arrays]
        if missing:
            raise ShapeError(f"missing parameter tensors: {missing}")
        return cls(config, {n: Tensor(arrays[n], requires_grad=True, dtype=dtype) for n in names})

    def copy(self) -> "ViTParams":
        return ViTParams.from_arrays(self.config, self.to_arrays(), dtype=self.dtype)

    def astype(self, dtype) -> "ViTParams":
        return ViTParams.from_arrays(self.config, self.to_arrays(copy=False), dtype=dtype)

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------

def _trunc_normal(rng: np.random.Generator, shape, std=0.02, clip=2.0) -> np.ndarray:
    out = rng.standard_normal(shape)
    bad = np.abs(out) > clip
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > clip
    return (out * std).astype(np.float32)


def _glorot_uniform(rng: np.random.Generator, shape) -> np.ndarray:
    receptive = int(np.prod(shape[2:])) if len(shape) > 2 else 1
    fan_out, fan_in = shape[0] * receptive, shape[1] * receptive
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(np.float32)


def _init_tensor(name: str, shape, rng) -> np.ndarray:
    leaf = name.rsplit(".", 1)[-1]
    if leaf in ("cls_token", "pos_embedding"):
        return _trunc_normal(rng, shape)
    if leaf.endswith("_weight"):
        return _glorot_uniform(rng, shape)
    if leaf.endswith("_gamma"):
        return np.ones(shape, np.float32)
    return np.zeros(shape, np.float32)  # biases and LayerNorm beta


def init_params(config: ModelConfig, seed: int = 0) -> ViTParams:
    """Deterministically initialize every parameter for ``config``."""
    config.validate()
    rng = np.random.default_rng(seed)
    arrays = {name: _init_tensor(name, shape, rng) for name, shape in parameter_shapes(config).items()}
    return ViTParams.from_arrays(config, arrays)


def adapt_head(params: ViTParams, new_num_classes: int, seed: int = 0) -> ViTParams:
    """Copy the backbone and re-initialize the classifier head for a new label set."""
    if not isinstance(new_num_classes, (int, np.integer)) or new_num_classes < 1:
        raise ConfigError(f"new_num_classes must be >= 1, got {new_num_classes!r}")
    config = params.config.replace(num_classes=int(new_num_classes))
    arrays = params.to_arrays()
    rng = np.random.default_rng(seed)
    d = config.embed_dim
    arrays["head_weight"] = _init_tensor("head_weight", (new_num_classes, d), rng)
    arrays["head_bias"] = _init_tensor("head_bias", (new_num_classes,), rng)
    return ViTParams.from_arrays(config, arrays, dtype=params.dtype)


# ---------------------------------------------------------------------------
# forward pass
# ---------------------------------------------------------------------------

@dataclass
class AttentionTrace:
    """Per-block attention weights (B, heads, N, N) and block output tokens (B, N, D)."""

    attention: List[np.ndarray] = field(default_factory=list)
    tokens: List[Tensor] = field(default_factory=list)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    out = T.matmul(x, T.transpose(weight))
    return out if bias is None else out + bias


def patch_embed(params: ViTParams, images) -> Tensor:
    """(B, C, H, W) images -> (B, num_patches, embed_dim) tokens, patches in row-major order."""
    cfg = params.config
    images = T.as_tensor(images, dtype=params.dtype)
    expected = (cfg.in_channels, cfg.image_size, cfg.image_size)
    if images.ndim != 4 or images.shape[1:] != expected:
        raise ShapeError(f"expected images of shape (B, {', '.join(map(str, expected))}), got {images.shape}")
    feat = T.patch_conv(images, params["patch_proj_weight"], params["patch_proj_bias"])
    B, D = feat.shape[:2]
    return T.transpose(T.reshape(feat, (B, D, cfg.num_patches)))


def attention(params: ViTParams, prefix: str, x: Tensor, trace: Optional[AttentionTrace]) -> Tensor:
    cfg = params.config
    B, N, D = x.shape
    H, hd = cfg.num_heads, cfg.head_dim
    qkv = linear(x, params[prefix + "qkv_weight"])
    qkv = T.permute(T.reshape(qkv, (B, N, 3, H, hd)), (2, 0, 3, 1, 4))
    q, k, v = qkv[0], qkv[1], qkv[2]
    scores = T.scale(T.matmul(q, T.transpose(k)), 1.0 / np.sqrt(hd))
    weights = T.softmax(scores)
    if trace is not None:
        trace.attention.append(weights.data.copy())
    out = T.matmul(weights, v)
    out = T.reshape(T.permute(out, (0, 2, 1, 3)), (B, N, D))
    return linear(out, params[prefix + "out_proj_weight"], params[prefix + "out_proj_bias"])


def transformer_block(params: ViTParams, index: int, x: Tensor, training: bool, rng, trace) -> Tensor:
    pre = f"blocks.{index}."
    p = params.config.dropout_p
    h = T.layer_norm(x, params[pre + "ln1_gamma"], params[pre + "ln1_beta"], LN_EPS)
    x = x + attention(params, pre, h, trace)
    h = T.layer_norm(x, params[pre + "ln2_gamma"], params[pre + "ln2_beta"], LN_EPS)
    h = T.gelu(linear(h, params[pre + "fc1_weight"], params[pre + "fc1_bias"]))
    h = T.dropout(h, p, rng, training)
    h = T.dropout(linear(h, params[pre + "fc2_weight"], params[pre + "fc2_bias"]), p, rng, training)
    return x + h


def forward(params: ViTParams, images, mode: str = "eval", trace: bool = False,
            rng: Optional[np.random.Generator] = None):
    """Logits (B, num_classes); with ``trace=True`` returns ``(logits, AttentionTrace)``."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    training = mode == "train"
    if training and rng is None:
        rng = np.random.default_rng()
    cfg = params.config
    record = AttentionTrace() if trace else None

    x = patch_embed(params, images)
    B = x.shape[0]
    cls = T.add(np.zeros((B, 1, cfg.embed_dim), dtype=x.dtype), params["cls_token"])
    x = T.concat([cls, x], axis=1) + params["pos_embedding"]
    x = T.dropout(x, cfg.dropout_p, rng, training)
    for b in range(cfg.depth):
        x = transformer_block(params, b, x, training, rng, record)
        if record is not None:
            record.tokens.append(x)
    x = T.layer_norm(x, params["final_ln_gamma"], params["final_ln_beta"], LN_EPS)
    logits = linear(x[:, 0], params["head_weight"], params["head_bias"])
    return (logits, record) if trace else logits


def predict(params: ViTParams, images, batch_size: int = 128) -> np.ndarray:
    """Eval-mode logits for a stack of images, computed without graph recording."""
    images = np.asarray(images)
    out = []
    with T.no_grad():
        for start in range(0, len(images), batch_size):
            out.append(forward(params, images[start:start + batch_size]).data)
    return np.concatenate(out, axis=0) if out else np.zeros((0, params.config.num_classes), np.float32)


def count_tensor_elements(params: ViTParams) -> Dict[str, int]:
    return {name: int(t.data.size) for name, t in params.items()}


def split_block_name(name: str) -> Tuple[Optional[int], str]:
    if name.startswith("blocks."):
        _, idx, leaf = name.split(".", 2)
        return int(idx), leaf
    return None, name

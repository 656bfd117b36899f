"""Restoration transformer generator and transformer discriminator.

Images are channels-last [B, H, W, 3]. The generator tokenizes with shifted
patch tokenization, runs pre-norm blocks whose attention uses axial 2D
rotary position embeddings and locality self-attention (learnable per-head
temperature with the self-token masked), and folds a 3 * P * P head back to
an image squashed by a sigmoid. The discriminator mirrors the blocks on a
plain patch embedding and ends in an MLP validity head.
"""

from __future__ import annotations

from collections.abc import Iterator, Mapping
from dataclasses import asdict, dataclass
import hashlib
import logging
import math
from typing import Any

import numpy as np
import numpy.typing as npt

from .autodiff import Array, Tensor, concat, default_dtype, layer_norm, shift2d
from .const import CHANNELS, DISC_SCORE_EPS, INIT_STD, MIN_IMAGE_SIDE, ROPE_BASE, TAU_MIN
from .exceptions import ConfigError, DataError, NumericalError, ShapeError
from .rng import Rng

_LOGGER = logging.getLogger(__name__)

GEN = "gen"
DISC = "disc"
# Number of image copies stacked by shifted patch tokenization
SPT_COPIES = 5


@dataclass(frozen=True)
class ModelConfig:
    """Generator and discriminator architecture.

    Discriminator width, depth and heads mirror the generator when unset.
    """

    image_size: int = 64
    patch_size: int = 8
    embed_dim: int = 128
    depth: int = 6
    num_heads: int = 4
    mlp_ratio: float = 2.0
    disc_embed_dim: int | None = None
    disc_depth: int | None = None
    disc_heads: int | None = None
    global_residual: bool = False
    rope_base: float = ROPE_BASE

    def __post_init__(self) -> None:
        """Check the architecture invariants."""
        if self.image_size < MIN_IMAGE_SIDE:
            raise ConfigError(f"image_size must be >= {MIN_IMAGE_SIDE}, got {self.image_size}")
        if self.patch_size < 2 or self.patch_size % 2:
            raise ConfigError(f"patch_size must be even and >= 2, got {self.patch_size}")
        if self.image_size % self.patch_size:
            raise ConfigError(
                f"image_size {self.image_size} is not divisible by patch_size {self.patch_size}"
            )
        if self.image_size // self.patch_size < 2:
            raise ConfigError("locality self-attention needs at least a 2x2 patch grid")
        if self.mlp_ratio <= 0:
            raise ConfigError(f"mlp_ratio must be positive, got {self.mlp_ratio}")
        if self.rope_base <= 1:
            raise ConfigError(f"rope_base must exceed 1, got {self.rope_base}")
        for prefix, dim, depth, heads in (
            ("", self.embed_dim, self.depth, self.num_heads),
            ("disc_", self.d_embed_dim, self.d_depth, self.d_heads),
        ):
            if depth < 1 or heads < 1 or dim < 1:
                raise ConfigError(f"{prefix}embed_dim, {prefix}depth and heads must be >= 1")
            if dim % heads:
                raise ConfigError(f"{prefix}embed_dim {dim} is not divisible by {heads} heads")
            if (dim // heads) % 4:
                raise ConfigError(
                    f"{prefix}head dim {dim // heads} must be divisible by 4 for axial RoPE"
                )

    @property
    def grid(self) -> int:
        """Return the number of patches per side."""
        return self.image_size // self.patch_size

    @property
    def num_tokens(self) -> int:
        """Return the token count."""
        return self.grid * self.grid

    @property
    def head_dim(self) -> int:
        """Return the generator head dimension."""
        return self.embed_dim // self.num_heads

    @property
    def d_embed_dim(self) -> int:
        """Return the resolved discriminator width."""
        return self.disc_embed_dim or self.embed_dim

    @property
    def d_depth(self) -> int:
        """Return the resolved discriminator depth."""
        return self.disc_depth or self.depth

    @property
    def d_heads(self) -> int:
        """Return the resolved discriminator head count."""
        return self.disc_heads or self.num_heads

    @property
    def patch_dim(self) -> int:
        """Return the raw RGB values per patch."""
        return CHANNELS * self.patch_size * self.patch_size

    def mlp_dim(self, dim: int) -> int:
        """Return the hidden width of a block MLP."""
        return max(1, int(math.floor(dim * self.mlp_ratio + 0.5)))

    def as_dict(self) -> dict[str, Any]:
        """Return the config as a plain dict."""
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ModelConfig:
        """Build a config from as_dict() output."""
        try:
            return cls(**data)
        except TypeError as err:
            raise ConfigError(f"invalid model config: {err}") from err


def _block_shapes(prefix: str, dim: int, heads: int, hidden: int) -> dict[str, tuple[int, ...]]:
    return {
        f"{prefix}.norm1.scale": (dim,),
        f"{prefix}.norm1.shift": (dim,),
        f"{prefix}.attn.q.weight": (dim, dim),
        f"{prefix}.attn.q.bias": (dim,),
        f"{prefix}.attn.k.weight": (dim, dim),
        f"{prefix}.attn.k.bias": (dim,),
        f"{prefix}.attn.v.weight": (dim, dim),
        f"{prefix}.attn.v.bias": (dim,),
        f"{prefix}.attn.out.weight": (dim, dim),
        f"{prefix}.attn.out.bias": (dim,),
        f"{prefix}.attn.tau": (heads,),
        f"{prefix}.norm2.scale": (dim,),
        f"{prefix}.norm2.shift": (dim,),
        f"{prefix}.mlp.fc1.weight": (dim, hidden),
        f"{prefix}.mlp.fc1.bias": (hidden,),
        f"{prefix}.mlp.fc2.weight": (hidden, dim),
        f"{prefix}.mlp.fc2.bias": (dim,),
    }


def parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Return the name -> shape layout of every parameter, in a stable order."""
    d, dd = config.embed_dim, config.d_embed_dim
    raw = SPT_COPIES * config.patch_dim
    shapes: dict[str, tuple[int, ...]] = {
        f"{GEN}.spt.norm.scale": (raw,),
        f"{GEN}.spt.norm.shift": (raw,),
        f"{GEN}.spt.proj.weight": (raw, d),
        f"{GEN}.spt.proj.bias": (d,),
    }
    for i in range(config.depth):
        shapes.update(_block_shapes(f"{GEN}.blocks.{i}", d, config.num_heads, config.mlp_dim(d)))
    shapes.update(
        {
            f"{GEN}.norm.scale": (d,),
            f"{GEN}.norm.shift": (d,),
            f"{GEN}.head.weight": (d, config.patch_dim),
            f"{GEN}.head.bias": (config.patch_dim,),
            f"{DISC}.embed.weight": (config.patch_dim, dd),
            f"{DISC}.embed.bias": (dd,),
        }
    )
    for i in range(config.d_depth):
        shapes.update(_block_shapes(f"{DISC}.blocks.{i}", dd, config.d_heads, config.mlp_dim(dd)))
    shapes.update(
        {
            f"{DISC}.norm.scale": (dd,),
            f"{DISC}.norm.shift": (dd,),
            f"{DISC}.head.fc1.weight": (dd, dd),
            f"{DISC}.head.fc1.bias": (dd,),
            f"{DISC}.head.fc2.weight": (dd, 1),
            f"{DISC}.head.fc2.bias": (1,),
        }
    )
    return shapes


class ParameterSet(Mapping[str, Tensor]):
    """Named generator and discriminator tensors bound to their config."""

    def __init__(self, config: ModelConfig, tensors: Mapping[str, Tensor]) -> None:
        """Initialize and check every name and shape against the config.

        Raises:
            DataError: Missing, unexpected or misshapen tensors
        """
        expected = parameter_shapes(config)
        missing = sorted(set(expected) - set(tensors))
        extra = sorted(set(tensors) - set(expected))
        if missing or extra:
            raise DataError(
                f"parameters do not match model config (missing {missing[:3]},"
                f" unexpected {extra[:3]})"
            )
        for name, shape in expected.items():
            if tensors[name].shape != shape:
                raise DataError(
                    f"parameter {name} has shape {tensors[name].shape}, config expects {shape}"
                )
        self.config = config
        self._tensors = {name: tensors[name] for name in expected}
        for name, tensor in self._tensors.items():
            tensor.name = name

    def __getitem__(self, name: str) -> Tensor:
        """Return one tensor."""
        return self._tensors[name]

    def __iter__(self) -> Iterator[str]:
        """Iterate names in layout order."""
        return iter(self._tensors)

    def __len__(self) -> int:
        """Return the tensor count."""
        return len(self._tensors)

    @property
    def dtype(self) -> np.dtype[Any]:
        """Return the parameter dtype."""
        return next(iter(self._tensors.values())).dtype

    def group(self, prefix: str) -> dict[str, Tensor]:
        """Return the tensors of one network ("gen" or "disc")."""
        return {n: t for n, t in self._tensors.items() if n.startswith(f"{prefix}.")}

    @property
    def generator(self) -> dict[str, Tensor]:
        """Return the generator tensors."""
        return self.group(GEN)

    @property
    def discriminator(self) -> dict[str, Tensor]:
        """Return the discriminator tensors."""
        return self.group(DISC)

    def set_trainable(self, prefix: str, trainable: bool) -> None:
        """Toggle requires_grad for one network."""
        for tensor in self.group(prefix).values():
            tensor.requires_grad = trainable
            if not trainable:
                tensor.zero_grad()

    def num_parameters(self, prefix: str | None = None) -> int:
        """Return the scalar count, optionally for one network."""
        tensors = self.group(prefix) if prefix else self._tensors
        return sum(t.size for t in tensors.values())

    def fingerprint(self, prefix: str | None = None) -> str:
        """Return a hash of the parameter bytes, optionally for one network."""
        digest = hashlib.blake2b(digest_size=16)
        tensors = self.group(prefix) if prefix else self._tensors
        for name, tensor in tensors.items():
            digest.update(name.encode())
            digest.update(np.ascontiguousarray(tensor.data).tobytes())
        return digest.hexdigest()

    def astype(self, dtype: Any) -> ParameterSet:
        """Return a detached copy in another dtype."""
        return ParameterSet(
            self.config,
            {
                n: Tensor(t.data.astype(dtype), requires_grad=t.requires_grad)
                for n, t in self._tensors.items()
            },
        )


def init_params(config: ModelConfig, seed: int, dtype: Any = None) -> ParameterSet:
    """Create freshly initialized parameters.

    Projections draw from a truncated normal (std 0.02) keyed by the tensor
    name, so adding a tensor never changes another one. Layer-norm scales are
    ones, shifts and biases zeros, and every temperature starts at
    sqrt(head_dim).
    """
    dtype = dtype or default_dtype()
    tensors: dict[str, Tensor] = {}
    for name, shape in parameter_shapes(config).items():
        leaf = name.rsplit(".", 1)[1]
        if leaf == "scale":
            data = np.ones(shape)
        elif leaf in ("shift", "bias"):
            data = np.zeros(shape)
        elif leaf == "tau":
            dim = config.embed_dim if name.startswith(f"{GEN}.") else config.d_embed_dim
            heads = shape[0]
            data = np.full(shape, math.sqrt(dim / heads))
        else:
            data = Rng(seed, "init", name).truncated_normal(INIT_STD, shape)
        tensors[name] = Tensor(np.asarray(data, dtype=dtype), requires_grad=True)
    params = ParameterSet(config, tensors)
    _LOGGER.debug(
        "Initialized %d generator and %d discriminator parameters (seed %d)",
        params.num_parameters(GEN),
        params.num_parameters(DISC),
        seed,
    )
    return params


def clamp_temperatures(params: ParameterSet, prefix: str | None = None) -> int:
    """Raise every attention temperature below TAU_MIN to TAU_MIN.

    Returns the number of entries clamped.
    """
    clamped = 0
    for name, tensor in params.items():
        if not name.endswith(".tau") or (prefix and not name.startswith(f"{prefix}.")):
            continue
        low = tensor.data < TAU_MIN
        if np.any(low):
            clamped += int(np.count_nonzero(low))
            tensor.data = np.maximum(tensor.data, tensor.data.dtype.type(TAU_MIN))
    if clamped:
        _LOGGER.warning("Clamped %d attention temperatures to %s", clamped, TAU_MIN)
    return clamped


def _linear(x: Tensor, params: Mapping[str, Tensor], prefix: str) -> Tensor:
    return x @ params[f"{prefix}.weight"] + params[f"{prefix}.bias"]


def _norm(x: Tensor, params: Mapping[str, Tensor], prefix: str) -> Tensor:
    return layer_norm(x, params[f"{prefix}.scale"], params[f"{prefix}.shift"])


def unfold(x: Tensor, patch: int) -> Tensor:
    """Split [B, H, W, C] into row-major patches [B, N, P * P * C]."""
    batch, height, width, channels = x.shape
    if height % patch or width % patch:
        raise ShapeError("unfold", x.shape, detail=f"not divisible by patch size {patch}")
    gh, gw = height // patch, width // patch
    tiles = x.reshape(batch, gh, patch, gw, patch, channels).permute(0, 1, 3, 2, 4, 5)
    return tiles.reshape(batch, gh * gw, patch * patch * channels)


def fold(tokens: Tensor, grid: tuple[int, int], patch: int, channels: int = CHANNELS) -> Tensor:
    """Inverse of unfold: [B, N, P * P * C] back to [B, H, W, C]."""
    batch, count, width = tokens.shape
    gh, gw = grid
    if count != gh * gw or width != patch * patch * channels:
        raise ShapeError("fold", tokens.shape, detail=f"grid {grid}, patch {patch}")
    tiles = tokens.reshape(batch, gh, gw, patch, patch, channels).permute(0, 1, 3, 2, 4, 5)
    return tiles.reshape(batch, gh * patch, gw * patch, channels)


def spt_raw_tokens(x: Tensor, patch: int) -> Tensor:
    """Stack the image with four diagonal half-patch shifts and patchify.

    Returns [B, N, 5 * 3 * P * P] before normalization and projection.
    """
    half = patch // 2
    offsets = ((-half, -half), (-half, half), (half, half), (half, -half))
    shifted = [x] + [shift2d(x, dy, dx) for dy, dx in offsets]
    return unfold(concat(shifted, axis=-1), patch)


def spt_tokenize(params: ParameterSet, x: Tensor) -> Tensor:
    """Shifted patch tokens projected to the embedding width: [B, N, d]."""
    raw = spt_raw_tokens(x, params.config.patch_size)
    return _linear(_norm(raw, params, f"{GEN}.spt.norm"), params, f"{GEN}.spt.proj")


def grid_positions(rows: int, cols: int) -> npt.NDArray[np.float64]:
    """Return the (row, col) patch coordinates of each token, row-major."""
    r, c = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    return np.stack([r.reshape(-1), c.reshape(-1)], axis=1).astype(np.float64)


def rope_tables(
    positions: npt.ArrayLike, head_dim: int, base: float = ROPE_BASE
) -> tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
    """Return per-token cos/sin tables [N, head_dim] for axial 2D RoPE.

    The first half of the head dims rotates by the row angle, the second by
    the column angle; pair (2i, 2i + 1) of an axis half uses
    theta_i = base ** (-2i / axis_dim).
    """
    if head_dim % 4:
        raise ShapeError("rope", (head_dim,), detail="head dim must be divisible by 4")
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    axis_dim = head_dim // 2
    theta = base ** (-np.arange(0, axis_dim, 2, dtype=np.float64) / axis_dim)
    angles = np.concatenate(
        [
            np.repeat(pos[:, :1] * theta, 2, axis=1),
            np.repeat(pos[:, 1:] * theta, 2, axis=1),
        ],
        axis=1,
    )
    return np.cos(angles), np.sin(angles)


def _pair_rotation(head_dim: int) -> npt.NDArray[np.float64]:
    """Return R with (x @ R)[2i] = -x[2i + 1] and (x @ R)[2i + 1] = x[2i]."""
    rot = np.zeros((head_dim, head_dim))
    idx = np.arange(0, head_dim, 2)
    rot[idx + 1, idx] = -1.0
    rot[idx, idx + 1] = 1.0
    return rot


def rope_rotate(x: Tensor, positions: npt.ArrayLike, base: float = ROPE_BASE) -> Tensor:
    """Rotate the last axis of [..., N, head_dim] rows by their 2D positions."""
    head_dim = x.shape[-1]
    cos, sin = rope_tables(positions, head_dim, base)
    if cos.shape[0] != x.shape[-2]:
        raise ShapeError("rope", x.shape, cos.shape, detail="one position per token")
    rotated = x @ x.constant(_pair_rotation(head_dim))
    return x * x.constant(cos) + rotated * x.constant(sin)


def lsa_weights(q: Tensor, k: Tensor, tau: Tensor) -> Tensor:
    """Attention weights softmax(q k^T / tau) with the self-token masked.

    q and k are [B, h, N, hd]; tau holds one temperature per head.

    Raises:
        NumericalError: A temperature is not positive
    """
    heads, count = q.shape[-3], q.shape[-2]
    if tau.shape != (heads,):
        raise ShapeError("lsa", q.shape, tau.shape, detail="one temperature per head")
    if count < 2:
        raise ShapeError("lsa", q.shape, detail="self-masking needs at least two tokens")
    if not np.all(tau.data > 0):
        raise NumericalError(
            "locality self-attention temperature must be positive",
            {"tau": [float(t) for t in tau.data]},
        )
    scores = (q @ k.transpose()) / tau.reshape(heads, 1, 1)
    return scores.masked_fill(np.eye(count, dtype=bool), -np.inf).softmax()


def lsa_attention(q: Tensor, k: Tensor, v: Tensor, tau: Tensor) -> Tensor:
    """Locality self-attention: convex combinations of the other tokens' values."""
    return lsa_weights(q, k, tau) @ v


def _attention(
    x: Tensor, params: Mapping[str, Tensor], prefix: str, heads: int, positions: Array, base: float
) -> Tensor:
    batch, count, dim = x.shape
    head_dim = dim // heads

    def split(t: Tensor) -> Tensor:
        return t.reshape(batch, count, heads, head_dim).permute(0, 2, 1, 3)

    q = rope_rotate(split(_linear(x, params, f"{prefix}.q")), positions, base)
    k = rope_rotate(split(_linear(x, params, f"{prefix}.k")), positions, base)
    v = split(_linear(x, params, f"{prefix}.v"))
    mixed = lsa_attention(q, k, v, params[f"{prefix}.tau"])
    merged = mixed.permute(0, 2, 1, 3).reshape(batch, count, dim)
    return _linear(merged, params, f"{prefix}.out")


def transformer_block(
    x: Tensor, params: Mapping[str, Tensor], prefix: str, heads: int, positions: Array, base: float
) -> Tensor:
    """Pre-norm block: x + attn(ln(x)), then + mlp(ln(.))."""
    normed = _norm(x, params, f"{prefix}.norm1")
    x = x + _attention(normed, params, f"{prefix}.attn", heads, positions, base)
    hidden = _linear(_norm(x, params, f"{prefix}.norm2"), params, f"{prefix}.mlp.fc1").gelu()
    return x + _linear(hidden, params, f"{prefix}.mlp.fc2")


def _as_input(params: ParameterSet, x: Any) -> tuple[Tensor, bool]:
    """Return a [B, H, W, 3] tensor in the parameter dtype and whether x was batched."""
    tensor = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=params.dtype))
    batched = tensor.ndim == 4
    if tensor.ndim == 3:
        tensor = tensor.reshape(1, *tensor.shape)
    side = params.config.image_size
    if tensor.ndim != 4 or tensor.shape[1:] != (side, side, CHANNELS):
        raise DataError(
            f"input of shape {tensor.shape} does not match model image size {side}x{side}"
        )
    return tensor, batched


def generator_forward(params: ParameterSet, x: Any) -> Tensor:
    """Restore corrupted images: [B, H, W, 3] (or one [H, W, 3]) in (0, 1)."""
    config = params.config
    inp, batched = _as_input(params, x)
    positions = grid_positions(config.grid, config.grid)
    tokens = spt_tokenize(params, inp)
    for i in range(config.depth):
        tokens = transformer_block(
            tokens, params, f"{GEN}.blocks.{i}", config.num_heads, positions, config.rope_base
        )
    tokens = _linear(_norm(tokens, params, f"{GEN}.norm"), params, f"{GEN}.head")
    logits = fold(tokens, (config.grid, config.grid), config.patch_size)
    if config.global_residual:
        eps = 1e-4
        clipped = np.clip(inp.data.astype(np.float64), eps, 1.0 - eps)
        logits = logits + logits.constant(np.log(clipped / (1.0 - clipped)))
    out = logits.sigmoid()
    return out if batched else out.reshape(*out.shape[1:])


def discriminator_forward(params: ParameterSet, x: Any) -> Tensor:
    """Return the validity score in (0, 1) per image: shape [B] (or [] for one image)."""
    config = params.config
    inp, batched = _as_input(params, x)
    positions = grid_positions(config.grid, config.grid)
    tokens = _linear(unfold(inp, config.patch_size), params, f"{DISC}.embed")
    for i in range(config.d_depth):
        tokens = transformer_block(
            tokens, params, f"{DISC}.blocks.{i}", config.d_heads, positions, config.rope_base
        )
    pooled = _norm(tokens, params, f"{DISC}.norm").mean(axis=1)
    hidden = _linear(pooled, params, f"{DISC}.head.fc1").gelu()
    # float32 sigmoid saturates to exactly 0 or 1; squeeze it into the open interval
    prob = _linear(hidden, params, f"{DISC}.head.fc2").sigmoid()
    score = prob * (1.0 - 2.0 * DISC_SCORE_EPS) + DISC_SCORE_EPS
    return score.reshape(inp.shape[0]) if batched else score.reshape(())

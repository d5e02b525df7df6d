"""Multitemporal ViT encoder with a convolutional upsampling head.

Input chips are (B, T, C, H, W); per-timestep patches are linearly projected
and tagged with learned positional (per spatial location) and temporal (per
timestep) encodings. The head averages token features across timesteps at
each spatial location, then upsamples back to H x W with stride-2 transposed
convolutions followed by conv -> batch-norm -> dropout -> 1x1 classifier.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from geochip.errors import DataError
from geochip.model import nn
from geochip.model.tensor import Parameter, Tensor


@dataclass(frozen=True)
class ModelConfig:
    timesteps: int
    in_bands: int
    image_size: int
    patch_size: int
    embed_dim: int
    num_layers: int
    num_heads: int
    num_classes: int
    mlp_ratio: int = 4
    dropout: float = 0.1

    def __post_init__(self):
        if self.image_size % self.patch_size != 0:
            raise DataError("image_size must be divisible by patch_size")
        if self.embed_dim % self.num_heads != 0:
            raise DataError("embed_dim must be divisible by num_heads")
        if self.num_layers < 1:
            raise DataError("num_layers must be >= 1")
        p = self.patch_size
        if p & (p - 1) != 0:
            raise DataError("patch_size must be a power of two")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def tokens_per_sample(self) -> int:
        return self.timesteps * self.grid * self.grid

    def head_channels(self) -> list[int]:
        """Channel plan: halve per upsampling stage, floor 1."""
        stages = int(np.log2(self.patch_size))
        chans = [self.embed_dim]
        for _ in range(stages):
            chans.append(max(1, chans[-1] // 2))
        return chans

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        return cls(**json.loads(text))


class PatchEmbed(nn.Module):
    def __init__(self, rng, cfg: ModelConfig):
        patch_dim = cfg.in_bands * cfg.patch_size ** 2
        self.proj = nn.Linear(rng, patch_dim, cfg.embed_dim)
        scale = 0.02
        self.pos = Parameter((scale * rng.standard_normal(
            (cfg.grid * cfg.grid, cfg.embed_dim))).astype(np.float32))
        self.temporal = Parameter((scale * rng.standard_normal(
            (cfg.timesteps, cfg.embed_dim))).astype(np.float32))
        self.cfg = cfg

    def __call__(self, x: Tensor) -> Tensor:
        """(B, T, C, H, W) -> (B, T*g*g, D) tokens."""
        cfg = self.cfg
        b = x.shape[0]
        t, c, h, w = cfg.timesteps, cfg.in_bands, cfg.image_size, cfg.image_size
        p, g = cfg.patch_size, cfg.grid
        if x.shape[1:] != (t, c, h, w):
            raise DataError(f"input shape {x.shape} != expected {(b, t, c, h, w)}")
        x = x.reshape(b, t, c, g, p, g, p)
        x = x.transpose(0, 1, 3, 5, 2, 4, 6)  # B, T, gy, gx, C, p, p
        x = x.reshape(b, t * g * g, c * p * p)
        tokens = self.proj(x)
        d = cfg.embed_dim
        pos = self.pos.reshape(1, 1, g * g, d)
        temporal = self.temporal.reshape(1, t, 1, d)
        tokens = tokens.reshape(b, t, g * g, d) + pos + temporal
        return tokens.reshape(b, t * g * g, d)


class SegHead(nn.Module):
    def __init__(self, rng, cfg: ModelConfig):
        chans = cfg.head_channels()
        self.up = [nn.ConvTranspose2x2(rng, chans[i], chans[i + 1])
                   for i in range(len(chans) - 1)]
        last = chans[-1]
        self.conv = nn.Conv2d(rng, last, last, 3, pad=1)
        self.bn = nn.BatchNorm2d(last)
        self.drop = nn.Dropout(cfg.dropout)
        self.classifier = nn.Conv2d(rng, last, cfg.num_classes, 1)

    def __call__(self, feat: Tensor, ctx: nn.Context) -> Tensor:
        x = feat
        for stage in self.up:
            x = stage(x)
        x = self.conv(x)
        x = self.bn(x, ctx)
        x = self.drop(x, ctx)
        return self.classifier(x)


class VitSegmentation(nn.Module):
    """Encoder + head; depth-limited forward supports teacher/student sharing."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        rng = np.random.default_rng([seed, 7])
        self.cfg = cfg
        self.embed = PatchEmbed(rng, cfg)
        self.layers = [nn.TransformerBlock(rng, cfg.embed_dim, cfg.num_heads, cfg.mlp_ratio)
                       for _ in range(cfg.num_layers)]
        self.final_norm = nn.LayerNorm(cfg.embed_dim)
        self.head = SegHead(rng, cfg)

    # ------------------------------------------------------------- forward
    def apply_blocks(self, tokens: Tensor, depth: int | None = None) -> Tensor:
        """Run the first `depth` transformer blocks (identity at depth 0)."""
        n = self.cfg.num_layers if depth is None else depth
        if n > self.cfg.num_layers:
            raise DataError(f"depth {n} exceeds model layers {self.cfg.num_layers}")
        for layer in self.layers[:n]:
            tokens = layer(tokens)
        return tokens

    def encode(self, x: Tensor, depth: int | None = None) -> Tensor:
        return self.final_norm(self.apply_blocks(self.embed(x), depth))

    def head_forward(self, tokens: Tensor, ctx: nn.Context) -> Tensor:
        cfg = self.cfg
        b = tokens.shape[0]
        g, d, t = cfg.grid, cfg.embed_dim, cfg.timesteps
        grid = tokens.reshape(b, t, g * g, d).mean(axis=1)  # timestep-averaged
        feat = grid.reshape(b, g, g, d).transpose(0, 3, 1, 2)  # B, D, g, g
        return self.head(feat, ctx)

    def forward(self, x, ctx: nn.Context | None = None, depth: int | None = None) -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x))
        ctx = ctx or nn.Context(train=False)
        return self.head_forward(self.encode(x, depth=depth), ctx)

    def predict_classes(self, x) -> np.ndarray:
        logits = self.forward(x).data
        return np.argmax(logits, axis=1).astype(np.uint8)

    def predict_probs(self, x) -> np.ndarray:
        logits = self.forward(x).data
        shifted = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)

    # ------------------------------------------------------------- weights
    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data.astype(np.float32) for name, p in self.named_params()}
        # batch-norm running stats ride along (not trainable)
        state["head.bn.running_mean"] = self.bn_running()[0]
        state["head.bn.running_var"] = self.bn_running()[1]
        return state

    def bn_running(self):
        return self.head.bn.running_mean, self.head.bn.running_var

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True):
        params = dict(self.named_params())
        for name, p in params.items():
            if name in state:
                if state[name].shape != p.data.shape:
                    raise DataError(f"weight {name}: shape {state[name].shape} "
                                    f"!= expected {p.data.shape}")
                p.data = state[name].astype(p.data.dtype).copy()
            elif strict:
                raise DataError(f"checkpoint missing weight {name}")
        if "head.bn.running_mean" in state:
            self.head.bn.running_mean = state["head.bn.running_mean"].copy()
            self.head.bn.running_var = state["head.bn.running_var"].copy()

    def copy_weights_from(self, other: "VitSegmentation"):
        """Copy every weight whose name exists in both models (student init)."""
        theirs = other.state_dict()
        for name, p in self.named_params():
            if name in theirs and theirs[name].shape == p.data.shape:
                p.data = theirs[name].astype(p.data.dtype).copy()
        self.head.bn.running_mean = other.head.bn.running_mean.copy()
        self.head.bn.running_var = other.head.bn.running_var.copy()

    def astype(self, dtype):
        for _name, p in self.named_params():
            p.data = p.data.astype(dtype)
        return self

    def checksum(self) -> str:
        import hashlib
        digest = hashlib.sha256()
        params = dict(self.named_params())
        for name in sorted(params):
            digest.update(name.encode())
            digest.update(params[name].data.tobytes())
        return digest.hexdigest()


def count_params(cfg: ModelConfig) -> int:
    """Analytic trainable-parameter count; mirrored by enumeration in tests."""
    d, m = cfg.embed_dim, cfg.mlp_ratio
    patch_dim = cfg.in_bands * cfg.patch_size ** 2
    embed = patch_dim * d + d
    encodings = cfg.grid * cfg.grid * d + cfg.timesteps * d
    per_layer = (d * 3 * d + 3 * d) + (d * d + d) + 4 * d \
        + (d * m * d + m * d) + (m * d * d + d)
    final_norm = 2 * d

    chans = cfg.head_channels()
    head = 0
    for cin, cout in zip(chans[:-1], chans[1:]):
        head += cin * cout * 4 + cout
    last = chans[-1]
    head += last * last * 9 + last  # 3x3 conv
    head += 2 * last  # batch norm affine
    head += last * cfg.num_classes + cfg.num_classes  # 1x1 classifier

    return embed + encodings + cfg.num_layers * per_layer + final_norm + head

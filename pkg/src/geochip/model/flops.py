"""Analytic forward-pass FLOP estimate (multiply-add = 2 FLOPs).

Encoder, per layer, for n tokens of width D:
    qkv projection        2 * n * D * 3D   = 6 n D^2
    attention scores      2 * n^2 * D
    attention * values    2 * n^2 * D
    output projection     2 * n * D^2
    MLP (ratio m)         2 * n * D * mD * 2 = 4 m n D^2   (16 n D^2 at m=4)
    total (m=4)           24 n D^2 + 4 n^2 D
Patch embedding: 2 * n * (C p^2) * D. Head: standard conv/transpose-conv
products. Norms, softmax and GELU are ignored (sub-percent).
"""

from __future__ import annotations

from geochip.model.vit import ModelConfig


def estimate_flops(cfg: ModelConfig, image_size: int | None = None) -> float:
    """GFLOPs for one forward pass at the given (or configured) image size."""
    hw = image_size or cfg.image_size
    grid = hw // cfg.patch_size
    n = cfg.timesteps * grid * grid
    d = cfg.embed_dim
    m = cfg.mlp_ratio

    embed = 2 * n * (cfg.in_bands * cfg.patch_size ** 2) * d
    per_layer = (6 + 2 + 4 * m) * n * d * d + 4 * n * n * d
    encoder = cfg.num_layers * per_layer

    head = 0
    chans = cfg.head_channels()
    size = grid
    for cin, cout in zip(chans[:-1], chans[1:]):
        size *= 2
        head += 2 * size * size * cin * cout * 4  # 2x2 transpose conv
    last = chans[-1]
    head += 2 * hw * hw * last * last * 9  # 3x3 conv
    head += 2 * hw * hw * last * cfg.num_classes  # 1x1 classifier

    return (embed + encoder + head) / 1e9

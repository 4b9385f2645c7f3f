"""Hook intermediate ViT layers and reassemble them into a feature pyramid.

For each configured encoder layer, the token grid is reshaped to a spatial
map, projected to its target channel dim by a fixed-seed random linear map
(a stand-in for a learned projection; the consumer never trains the
encoder side), and bilinearly upsampled by its factor. The result is
written in the depthfield pyramid interchange format (IDFP).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

PYRAMID_MAGIC = b"IDFP"
FORMAT_VERSION = 1

# ImageNet statistics, the convention ViT checkpoints expect
_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)


class ExportError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExportConfig:
    """Which layers to hook and how to reassemble them."""

    layers: tuple = (4, 11, 23)
    dims: tuple = (256, 512, 1024)
    factors: tuple = (4, 2, 1)
    seed: int = 0
    resize: tuple = (896, 504)  # (width, height)
    weights: str = "random"     # "random" or a pretrained checkpoint id/path

    def __post_init__(self):
        if not (len(self.layers) == len(self.dims) == len(self.factors)):
            raise ExportError("need one dim and one factor per layer")
        if any(d < 1 for d in self.dims) or any(f < 1 for f in self.factors):
            raise ExportError("dims and factors must be positive")
        if any(b <= a for a, b in zip(self.layers, self.layers[1:])):
            raise ExportError("layers must be strictly increasing (shallow first)")


def load_encoder(cfg: ExportConfig):
    """ViT-L/14 encoder; seeded random init unless a checkpoint is named."""
    from transformers import ViTConfig, ViTModel

    if cfg.weights == "random":
        torch.manual_seed(cfg.seed)
        vit_cfg = ViTConfig(
            patch_size=14,
            hidden_size=1024,
            num_hidden_layers=24,
            num_attention_heads=16,
            intermediate_size=4096,
        )
        model = ViTModel(vit_cfg)
    else:
        try:
            model = ViTModel.from_pretrained(cfg.weights)
        except Exception as e:  # missing weights must be actionable
            raise ExportError(
                f"could not load pretrained encoder {cfg.weights!r}: {e}; "
                "pass --init random for a seeded randomly initialized encoder"
            ) from e
    model.eval()
    if max(cfg.layers) > model.config.num_hidden_layers:
        raise ExportError(
            f"layer {max(cfg.layers)} exceeds encoder depth "
            f"{model.config.num_hidden_layers}")
    return model


def load_image(path, resize):
    try:
        img = Image.open(path).convert("RGB")
    except OSError as e:
        raise ExportError(f"could not read image {path!r}: {e}") from e
    img = img.resize(resize, Image.BILINEAR)
    arr = np.asarray(img, dtype=np.float32) / 255.0
    arr = (arr - _MEAN) / _STD
    return torch.from_numpy(arr.transpose(2, 0, 1))[None]


def _projections(cfg, hidden):
    rng = np.random.default_rng(cfg.seed)
    return [
        torch.from_numpy(
            (rng.standard_normal((hidden, d)) / np.sqrt(hidden)).astype(np.float32))
        for d in cfg.dims
    ]


def extract_and_reassemble(image_path, cfg: ExportConfig, model=None):
    """Per-layer (h, w, C) float32 maps, shallow (upsampled) level first."""
    if model is None:
        model = load_encoder(cfg)
    pixel = load_image(image_path, cfg.resize)
    patch = model.config.patch_size
    w_tok = pixel.shape[3] // patch
    h_tok = pixel.shape[2] // patch
    if w_tok < 1 or h_tok < 1:
        raise ExportError("image smaller than one patch after resize")
    with torch.no_grad():
        out = model(pixel, output_hidden_states=True, interpolate_pos_encoding=True)
    projections = _projections(cfg, model.config.hidden_size)
    levels = []
    for layer, proj, factor in zip(cfg.layers, projections, cfg.factors):
        tokens = out.hidden_states[layer][0, 1:]  # drop the CLS token
        if tokens.shape[0] != h_tok * w_tok:
            raise ExportError(
                f"layer {layer} token count {tokens.shape[0]} does not match "
                f"the {h_tok}x{w_tok} patch grid")
        grid = (tokens @ proj).reshape(h_tok, w_tok, -1)
        if factor != 1:
            grid = F.interpolate(
                grid.permute(2, 0, 1)[None], scale_factor=factor,
                mode="bilinear", align_corners=False)[0].permute(1, 2, 0)
        levels.append(np.ascontiguousarray(grid.numpy(), dtype=np.float32))
    return levels


def write_pyramid_file(levels, image_size, path):
    """Serialize levels in the IDFP byte layout the consumer reads."""
    w, h = image_size
    parts = [PYRAMID_MAGIC, struct.pack("<IIII", FORMAT_VERSION, w, h, len(levels))]
    for lv in levels:
        lh, lw, lc = lv.shape
        parts.append(struct.pack("<III", lh, lw, lc))
        parts.append(np.ascontiguousarray(lv, dtype="<f4").tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(parts))


def export(image_path, out_path, cfg: ExportConfig, model=None):
    levels = extract_and_reassemble(image_path, cfg, model=model)
    write_pyramid_file(levels, cfg.resize, out_path)
    return levels

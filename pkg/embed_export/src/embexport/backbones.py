"""Vision backbones mapping preprocessed image batches to feature vectors.

Every backbone takes an NCHW float32 batch produced by preprocess() and
returns (n, d_feat) float32 features from the layer just before the
classifier head. Torch and torchvision are imported lazily so that name
validation and argument errors stay cheap.

The *_random variants build the same architecture with no pretrained
weights, seeded so construction is reproducible; they exist for offline
use and for deterministic tests, not for meaningful features.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image

RESIZE_TO = 256
CROP_TO = 224
CHANNEL_MEAN = (0.485, 0.456, 0.406)
CHANNEL_STD = (0.229, 0.224, 0.225)


def preprocess(image: Image.Image) -> np.ndarray:
    """Shorter side to 256, center crop 224, normalize; returns CHW float32."""
    rgb = image.convert("RGB")
    w, h = rgb.size
    scale = RESIZE_TO / min(w, h)
    resized = rgb.resize(
        (max(RESIZE_TO, round(w * scale)), max(RESIZE_TO, round(h * scale))),
        Image.BILINEAR,
    )
    arr = np.asarray(resized, dtype=np.float32) / 255.0
    top = (arr.shape[0] - CROP_TO) // 2
    left = (arr.shape[1] - CROP_TO) // 2
    arr = arr[top : top + CROP_TO, left : left + CROP_TO]
    arr = arr - np.asarray(CHANNEL_MEAN, dtype=np.float32)
    arr = arr / np.asarray(CHANNEL_STD, dtype=np.float32)
    return arr.transpose(2, 0, 1)


@dataclass
class Backbone:
    """A headless network plus the feature width it produces."""

    name: str
    d_feat: int
    module: object

    def features(self, batch: np.ndarray) -> np.ndarray:
        import torch

        with torch.no_grad():
            out = self.module(torch.from_numpy(np.ascontiguousarray(batch)))
        return out.reshape(out.shape[0], -1).numpy().astype(np.float32)


def _headless_resnet(arch: str, weights_enum: str | None):
    import torch
    import torchvision

    # single-threaded inference keeps repeated exports byte-identical
    torch.set_num_threads(1)
    builder = getattr(torchvision.models, arch)
    if weights_enum is None:
        torch.manual_seed(0)
        model = builder(weights=None)
    else:
        weights = getattr(torchvision.models, weights_enum).IMAGENET1K_V1
        try:
            model = builder(weights=weights)
        except Exception as exc:
            raise RuntimeError(
                f"pretrained weights for {arch!r} unavailable ({exc}); "
                f"fetch them into TORCH_HOME or use '{arch}_random'"
            ) from exc
    model.eval()
    d_feat = model.fc.in_features
    headless = torch.nn.Sequential(*list(model.children())[:-1])
    headless.eval()
    return headless, d_feat


_FACTORIES = {
    "resnet18": lambda: _headless_resnet("resnet18", "ResNet18_Weights"),
    "resnet50": lambda: _headless_resnet("resnet50", "ResNet50_Weights"),
    "resnet18_random": lambda: _headless_resnet("resnet18", None),
    "resnet50_random": lambda: _headless_resnet("resnet50", None),
}

BACKBONE_NAMES = tuple(sorted(_FACTORIES))


def get_backbone(name: str) -> Backbone:
    if name not in _FACTORIES:
        raise ValueError(
            f"unknown backbone {name!r} (known: {', '.join(BACKBONE_NAMES)})"
        )
    module, d_feat = _FACTORIES[name]()
    return Backbone(name=name, d_feat=d_feat, module=module)

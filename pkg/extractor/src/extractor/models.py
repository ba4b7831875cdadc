"""Model adapters: forward hooks on the analyzed layers.

Each supported family exposes four hidden layers: the block outputs for
ResNet/DenseNet, the last four max-pool outputs for VGG19, and embedding
layers 3/6/9/12 for ViT (class token dropped, patch tokens reshaped to
their square grid).  Adapters normalize inputs, run a batch once, and
return logits plus the captured per-layer feature maps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

# layer_id -> module path (dotted) per family
LAYER_CATALOGS: dict[str, dict[int, str]] = {
    "resnet18": {1: "layer1", 2: "layer2", 3: "layer3", 4: "layer4"},
    "resnet50": {1: "layer1", 2: "layer2", 3: "layer3", 4: "layer4"},
    "densenet121": {1: "features.denseblock1", 2: "features.denseblock2",
                    3: "features.denseblock3", 4: "features.denseblock4"},
    # vgg19 features: max-pool modules sit at indices 4, 9, 18, 27, 36;
    # the last four line up with the other families' blocks
    "vgg19": {1: "features.9", 2: "features.18", 3: "features.27",
              4: "features.36"},
    "vit_b_16": {1: "encoder.layers.encoder_layer_2",
                 2: "encoder.layers.encoder_layer_5",
                 3: "encoder.layers.encoder_layer_8",
                 4: "encoder.layers.encoder_layer_11"},
}

TOKEN_GRID_FAMILIES = {"vit_b_16"}


def _module_by_path(model: nn.Module, path: str) -> nn.Module:
    mod = model
    for part in path.split("."):
        mod = getattr(mod, part) if not part.isdigit() else mod[int(part)]
    return mod


def tokens_to_grid(tokens: torch.Tensor) -> torch.Tensor:
    """(n_tokens+1, dim) transformer output -> (dim, g, g) feature map.

    Drops the leading class token; the remaining patch tokens must form
    a square grid.
    """
    patches = tokens[1:]
    g = int(round(len(patches) ** 0.5))
    if g * g != len(patches):
        raise ValueError(f"{len(patches)} patch tokens do not form a square grid")
    return patches.reshape(g, g, -1).permute(2, 0, 1)


@dataclass
class ModelAdapter:
    """A classifier plus the four analyzed layers."""

    name: str
    model: nn.Module
    layer_paths: dict[int, str]
    input_size: int = 224
    n_outputs: int = 1000
    token_grid: bool = False
    normalize: tuple | None = (IMAGENET_MEAN, IMAGENET_STD)
    _handles: list = field(default_factory=list, repr=False)
    _captured: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.model.eval()
        for layer_id, path in self.layer_paths.items():
            module = _module_by_path(self.model, path)
            self._handles.append(module.register_forward_hook(
                self._hook(layer_id)))

    def _hook(self, layer_id):
        def fn(module, args, output):
            out = output[0] if isinstance(output, tuple) else output
            self._captured[layer_id] = out.detach()
        return fn

    def preprocess(self, images: np.ndarray) -> torch.Tensor:
        """(n, h, w, 3) uint8 or [0,1] float -> normalized model batch."""
        x = torch.as_tensor(np.ascontiguousarray(images), dtype=torch.float32)
        if x.max() > 1.5:
            x = x / 255.0
        x = x.permute(0, 3, 1, 2)
        if x.shape[-1] != self.input_size or x.shape[-2] != self.input_size:
            x = torch.nn.functional.interpolate(
                x, size=(self.input_size, self.input_size), mode="bilinear",
                align_corners=False, antialias=True)
        if self.normalize is not None:
            mean, std = self.normalize
            x = (x - torch.tensor(mean).view(1, 3, 1, 1)) \
                / torch.tensor(std).view(1, 3, 1, 1)
        return x

    @torch.no_grad()
    def capture(self, images: np.ndarray
                ) -> tuple[np.ndarray, dict[int, list[np.ndarray]]]:
        """Run a batch; returns (predictions, per-layer feature maps)."""
        self._captured.clear()
        logits = self.model(self.preprocess(images))
        preds = logits.argmax(dim=1).cpu().numpy()
        features: dict[int, list[np.ndarray]] = {}
        for layer_id, out in self._captured.items():
            if self.token_grid:
                maps = [tokens_to_grid(out[i]).cpu().numpy()
                        for i in range(len(out))]
            else:
                maps = [out[i].cpu().numpy() for i in range(len(out))]
            features[layer_id] = maps
        return preds, features

    @torch.no_grad()
    def predict(self, images: np.ndarray) -> np.ndarray:
        return self.model(self.preprocess(images)).argmax(dim=1).cpu().numpy()

    @torch.no_grad()
    def predict_crops(self, crops) -> np.ndarray:
        """Classify arbitrarily-sized crops (each resized independently)."""
        resized = []
        for c in crops:
            x = torch.from_numpy(np.array(c, dtype=np.float32))
            if x.max() > 1.5:
                x = x / 255.0
            x = x.permute(2, 0, 1)[None]
            x = torch.nn.functional.interpolate(
                x, size=(self.input_size, self.input_size), mode="bilinear",
                align_corners=False)
            resized.append(x[0].permute(1, 2, 0).numpy())
        return self.predict(np.stack(resized))

    def logits(self, batch: torch.Tensor) -> torch.Tensor:
        """Differentiable forward pass on an already-preprocessed batch."""
        return self.model(batch)

    def layer_catalog(self, probe: np.ndarray) -> list[dict]:
        """Manifest layer entries measured from one probe image."""
        _, features = self.capture(probe[None])
        catalog = []
        for layer_id in sorted(features):
            fmap = features[layer_id][0]
            catalog.append({
                "layer_id": layer_id,
                "channels": int(fmap.shape[0]),
                "input_size": [self.input_size, self.input_size],
                "feature_size": [int(fmap.shape[2]), int(fmap.shape[1])],
            })
        return catalog

    def close(self):
        for h in self._handles:
            h.remove()
        self._handles.clear()


def load_adapter(name: str, weights=None) -> ModelAdapter:
    """Build an adapter for a supported torchvision family.

    `weights` is passed through to torchvision (e.g. "DEFAULT" with a
    local cache); None loads random weights, enough for plumbing tests.
    """
    if name not in LAYER_CATALOGS:
        raise ValueError(f"unsupported model {name!r}; "
                         f"choose from {sorted(LAYER_CATALOGS)}")
    from torchvision.models import get_model
    model = get_model(name, weights=weights)
    return ModelAdapter(name, model, LAYER_CATALOGS[name],
                        token_grid=name in TOKEN_GRID_FAMILIES)


class TinyColorNet(nn.Module):
    """Four-block fixture classifier with handcrafted weights.

    Block k passes the RGB averages through untouched channels, so the
    head can discriminate red-dominant from blue-dominant images without
    any training.  Used by the in-repo miniature dataset tests.
    """

    def __init__(self):
        super().__init__()
        self.blocks = nn.ModuleList()
        for _ in range(4):
            conv = nn.Conv2d(3, 3, 3, padding=1, bias=False)
            with torch.no_grad():
                conv.weight.zero_()
                for c in range(3):
                    conv.weight[c, c, 1, 1] = 1.0
            self.blocks.append(nn.Sequential(conv, nn.ReLU(),
                                             nn.MaxPool2d(2)))
        self.head = nn.Linear(3, 2, bias=False)
        with torch.no_grad():
            # class 0: red minus blue; class 1: blue minus red
            self.head.weight.copy_(torch.tensor([[1.0, 0.0, -1.0],
                                                 [-1.0, 0.0, 1.0]]))

    def forward(self, x):
        for block in self.blocks:
            x = block(x)
        return self.head(x.mean(dim=(2, 3)))


def fixture_adapter(input_size: int = 64) -> ModelAdapter:
    model = TinyColorNet()
    paths = {k: f"blocks.{k - 1}" for k in (1, 2, 3, 4)}
    return ModelAdapter("tiny-color", model, paths, input_size=input_size,
                        n_outputs=2, normalize=None)


class TinyRandomNet(nn.Module):
    """Small random-weight convnet; deterministic given the seed.

    Its predictions mean nothing, which is exactly what the adversarial
    plumbing tests need: a model whose decisions are easy to flip.
    """

    _GAIN = 1.5  # keeps logits input-driven through four pooling blocks

    def __init__(self, n_classes: int = 2, seed: int = 0):
        super().__init__()
        torch.manual_seed(seed)
        self.blocks = nn.ModuleList()
        channels = [3, 4, 4, 4, 4]
        for i in range(4):
            conv = nn.Conv2d(channels[i], channels[i + 1], 3, padding=1)
            with torch.no_grad():
                # default init attenuates so hard that a constant bias
                # would dominate the logits and no attack could move them
                conv.weight *= self._GAIN
                conv.bias.zero_()
            self.blocks.append(nn.Sequential(conv, nn.ReLU(),
                                             nn.MaxPool2d(2)))
        self.head = nn.Linear(channels[-1], n_classes, bias=False)

    def forward(self, x):
        for block in self.blocks:
            x = block(x)
        return self.head(x.mean(dim=(2, 3)))


def seeded_random_adapter(seed: int = 0, input_size: int = 32,
                          n_classes: int = 2) -> ModelAdapter:
    model = TinyRandomNet(n_classes, seed)
    paths = {k: f"blocks.{k - 1}" for k in (1, 2, 3, 4)}
    return ModelAdapter("tiny-random", model, paths, input_size=input_size,
                        n_outputs=n_classes, normalize=None)

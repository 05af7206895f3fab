"""The regression network: one image in, 48 anchor values out.

A small group-normalized convolutional encoder with a sigmoid head
stands in for a large pretrained backbone; at desk scale the protocol
looks the same to the caller either way. Inputs of any resolution are
pooled to a fixed 32x32 before the first convolution, so the
checkpoint does not depend on the dataset's render size.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

OUTPUT_DIM = 48
INPUT_SIDE = 32

CHECKPOINT_FORMAT = 1


class UncertaintyNet(nn.Module):
    def __init__(self):
        super().__init__()
        self.pool_in = nn.AdaptiveAvgPool2d(INPUT_SIDE)
        self.encoder = nn.Sequential(
            nn.Conv2d(3, 16, 3, padding=1),
            nn.GroupNorm(4, 16),
            nn.ReLU(),
            nn.MaxPool2d(2),  # 16x16
            nn.Conv2d(16, 32, 3, padding=1),
            nn.GroupNorm(4, 32),
            nn.ReLU(),
            nn.MaxPool2d(2),  # 8x8
            nn.Conv2d(32, 64, 3, padding=1),
            nn.GroupNorm(4, 64),
            nn.ReLU(),
            nn.AdaptiveAvgPool2d(1),
        )
        self.head = nn.Sequential(
            nn.Flatten(),
            nn.Linear(64, 128),
            nn.ReLU(),
            nn.Linear(128, OUTPUT_DIM),
            nn.Sigmoid(),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # center around mid-gray; renders are mostly white background
        return self.head(self.encoder(self.pool_in(x) - 0.5))

    def calibrate_head(self, target_mean: np.ndarray) -> None:
        """Prior-matched init: start as the constant-mean predictor.

        The last linear layer's weights are zeroed and its bias set to
        the logit of the per-dimension target mean, so epoch one scores
        exactly the image-blind baseline and training can only improve
        by using the image.
        """
        mean = np.clip(np.asarray(target_mean, dtype=np.float64), 1e-4, 1.0 - 1e-4)
        final = self.head[3]
        with torch.no_grad():
            final.weight.zero_()
            final.bias.copy_(torch.from_numpy(np.log(mean / (1.0 - mean))))


def images_to_batch(images: list[np.ndarray]) -> torch.Tensor:
    """Stacks HxWx3 float arrays into an NCHW tensor (sizes may differ)."""
    pooled = []
    for img in images:
        t = torch.from_numpy(np.ascontiguousarray(img)).permute(2, 0, 1)
        pooled.append(nn.functional.adaptive_avg_pool2d(t, INPUT_SIDE))
    return torch.stack(pooled).to(torch.float32)


def save_checkpoint(model: UncertaintyNet, kind: str, path) -> None:
    torch.save(
        {
            "format_version": CHECKPOINT_FORMAT,
            "kind": kind,
            "output_dim": OUTPUT_DIM,
            "input_side": INPUT_SIDE,
            "state": model.state_dict(),
        },
        path,
    )


def load_checkpoint(path) -> tuple[UncertaintyNet, str]:
    blob = torch.load(path, map_location="cpu", weights_only=True)
    version = blob.get("format_version")
    if version != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: unsupported checkpoint version {version!r}")
    if blob.get("output_dim") != OUTPUT_DIM:
        raise ValueError(f"{path}: wrong output head size {blob.get('output_dim')!r}")
    model = UncertaintyNet()
    model.load_state_dict(blob["state"])
    model.eval()
    return model, str(blob.get("kind", "psnr"))


@torch.no_grad()
def predict_values(model: UncertaintyNet, image: np.ndarray) -> np.ndarray:
    """48 values in [0, 1] for one HxWx3 image."""
    model.eval()
    out = model(images_to_batch([image]))[0]
    return np.clip(out.numpy().astype(np.float64), 0.0, 1.0)

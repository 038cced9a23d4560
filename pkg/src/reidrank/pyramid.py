"""Stage pyramid with hierarchical cross merges, at verification scale.

A seeded stub stands in for a convolutional backbone: it emits four stage
maps r2..r5 that halve spatially and double in channels per stage (channel
depths c, 2c, 4c, 8c). Two cross maps skip one stage each:

    c1 = project(r3, 2c -> 8c) + upsample4x(r5)   at r3's spatial size
    c2 = project(r2,  c -> 4c) + upsample4x(r4)   at r2's spatial size

Each of the three prediction branches (r5, c1, c2) applies dropout, global
average pooling and an affine head to identity logits; the pooled r5 map is
the retrieval feature. The identity loss is softmax cross-entropy with
max-subtraction, returning the analytic logit gradient alongside, and
``gradient_check`` verifies that gradient against central finite differences.

Feature maps are plain float64 arrays laid out (height, width, channels).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class StagePyramid:
    """Backbone stage outputs r2..r5, halving spatially, doubling channels."""

    r2: np.ndarray
    r3: np.ndarray
    r4: np.ndarray
    r5: np.ndarray

    def validate(self) -> None:
        maps = [self.r2, self.r3, self.r4, self.r5]
        for name, fmap in zip(("r2", "r3", "r4", "r5"), maps):
            _check_map(fmap, name)
        h, w, c = self.r2.shape
        expected = [(h, w, c), (h // 2, w // 2, 2 * c), (h // 4, w // 4, 4 * c), (h // 8, w // 8, 8 * c)]
        for name, fmap, shape in zip(("r2", "r3", "r4", "r5"), maps, expected):
            if fmap.shape != shape:
                raise ValueError(f"{name} has shape {fmap.shape}, expected {shape}")

    @property
    def base_channels(self) -> int:
        return self.r2.shape[2]


@dataclass(frozen=True)
class MergeWeights:
    """Lateral channel-extension projections plus the three branch heads.

    Projections have shape (channels_out, channels_in); head weights map a
    pooled feature of the branch's depth to ``num_classes`` logits.
    """

    proj_r3: np.ndarray
    proj_r2: np.ndarray
    head_r5_weight: np.ndarray
    head_r5_bias: np.ndarray
    head_c1_weight: np.ndarray
    head_c1_bias: np.ndarray
    head_c2_weight: np.ndarray
    head_c2_bias: np.ndarray
    seed: int

    @property
    def num_classes(self) -> int:
        return self.head_r5_weight.shape[0]

    def validate_for(self, pyramid: StagePyramid) -> None:
        c = pyramid.base_channels
        m = self.num_classes
        expected = {
            "proj_r3": (8 * c, 2 * c),
            "proj_r2": (4 * c, c),
            "head_r5_weight": (m, 8 * c),
            "head_r5_bias": (m,),
            "head_c1_weight": (m, 8 * c),
            "head_c1_bias": (m,),
            "head_c2_weight": (m, 4 * c),
            "head_c2_bias": (m,),
        }
        for name, shape in expected.items():
            actual = getattr(self, name).shape
            if actual != shape:
                raise ValueError(f"{name} has shape {actual}, expected {shape}")

    @classmethod
    def seeded(cls, base_channels: int, num_classes: int, seed: int) -> "MergeWeights":
        """Deterministic random weights sized for a given pyramid depth."""
        if num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {num_classes}")
        c = base_channels
        rng = np.random.default_rng(seed)

        def draw(rows, cols=None):
            if cols is None:
                return rng.standard_normal(rows)
            return rng.standard_normal((rows, cols)) / np.sqrt(cols)

        return cls(
            proj_r3=draw(8 * c, 2 * c),
            proj_r2=draw(4 * c, c),
            head_r5_weight=draw(num_classes, 8 * c),
            head_r5_bias=draw(num_classes),
            head_c1_weight=draw(num_classes, 8 * c),
            head_c1_bias=draw(num_classes),
            head_c2_weight=draw(num_classes, 4 * c),
            head_c2_bias=draw(num_classes),
            seed=seed,
        )


@dataclass(frozen=True)
class HcnOutputs:
    """Per-branch identity logits plus the pooled retrieval feature."""

    logits_r5: np.ndarray
    logits_c1: np.ndarray
    logits_c2: np.ndarray
    feature: np.ndarray


def _check_map(fmap, name: str = "feature map") -> np.ndarray:
    arr = np.asarray(fmap, dtype=np.float64)
    if arr.ndim != 3:
        raise ValueError(f"{name} must have shape (h, w, c), got {arr.shape}")
    if min(arr.shape) < 1:
        raise ValueError(f"{name} has a non-positive dimension: {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")
    return arr


def stub_backbone(height: int, width: int, base_channels: int, seed: int) -> StagePyramid:
    """Seeded stand-in for backbone stage outputs.

    ``height`` and ``width`` are r2's spatial size and must be divisible by 8
    so that r5 keeps integral dimensions.
    """
    if height % 8 != 0 or width % 8 != 0:
        raise ValueError(f"height and width must be divisible by 8, got {height}x{width}")
    if base_channels < 1:
        raise ValueError(f"base_channels must be >= 1, got {base_channels}")
    rng = np.random.default_rng(seed)
    maps = []
    h, w, c = height, width, base_channels
    for _ in range(4):
        maps.append(rng.standard_normal((h, w, c)))
        h, w, c = h // 2, w // 2, 2 * c
    pyramid = StagePyramid(*maps)
    pyramid.validate()
    return pyramid


def upsample4x(fmap) -> np.ndarray:
    """Nearest-neighbor replication to 4x height and width."""
    arr = _check_map(fmap)
    return np.repeat(np.repeat(arr, 4, axis=0), 4, axis=1)


def channel_project(fmap, projection) -> np.ndarray:
    """Per-pixel linear map of the channel vector (a 1x1-convolution)."""
    arr = _check_map(fmap)
    proj = np.asarray(projection, dtype=np.float64)
    if proj.ndim != 2:
        raise ValueError(f"projection must be 2-D, got shape {proj.shape}")
    if proj.shape[1] != arr.shape[2]:
        raise ValueError(
            f"projection input side {proj.shape[1]} != map channels {arr.shape[2]}"
        )
    return np.tensordot(arr, proj, axes=([2], [1]))


def cross_merge(pyramid: StagePyramid, weights: MergeWeights) -> tuple[np.ndarray, np.ndarray]:
    """Form the two cross maps by element-wise addition of a channel-extended
    lower stage and an upsampled stage two levels higher."""
    pyramid.validate()
    weights.validate_for(pyramid)
    c1 = channel_project(pyramid.r3, weights.proj_r3) + upsample4x(pyramid.r5)
    c2 = channel_project(pyramid.r2, weights.proj_r2) + upsample4x(pyramid.r4)
    return c1, c2


def dropout(fmap, rate: float, mode: str = "train", seed: int = 0) -> np.ndarray:
    """Inverted dropout: zero entries with probability ``rate`` and scale
    survivors by 1/(1-rate); identity in eval mode."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"rate must be in [0, 1), got {rate}")
    arr = _check_map(fmap)
    if mode == "eval" or rate == 0.0:
        return arr
    return _apply_dropout(arr, rate, np.random.default_rng(seed))


def _apply_dropout(arr: np.ndarray, rate: float, rng: np.random.Generator) -> np.ndarray:
    if rate == 0.0:
        return arr
    mask = rng.random(arr.shape) >= rate
    return arr * mask / (1.0 - rate)


def head_logits(fmap, weight, bias) -> np.ndarray:
    """Global average pool over (h, w), then an affine map to logits."""
    arr = _check_map(fmap)
    weight = np.asarray(weight, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if weight.ndim != 2 or weight.shape[1] != arr.shape[2]:
        raise ValueError(
            f"head weight shape {weight.shape} incompatible with {arr.shape[2]} channels"
        )
    if bias.shape != (weight.shape[0],):
        raise ValueError(f"bias shape {bias.shape} != ({weight.shape[0]},)")
    pooled = arr.mean(axis=(0, 1))
    return weight @ pooled + bias


def id_loss(logits, label: int) -> tuple[float, np.ndarray]:
    """Identity cross-entropy and its gradient with respect to the logits.

    ``label`` is 1-based, matching the combined label space 1..M. The
    softmax is computed with max-subtraction; the gradient is
    softmax(logits) - onehot(label).
    """
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1 or z.size < 2:
        raise ValueError(f"logits must be 1-D with at least 2 entries, got shape {z.shape}")
    if not np.isfinite(z).all():
        raise ValueError("logits contain non-finite values")
    m = z.size
    if not 1 <= label <= m:
        raise ValueError(f"label {label} outside [1, {m}]")
    shifted = z - z.max()
    log_norm = np.log(np.exp(shifted).sum())
    log_softmax = shifted - log_norm
    loss = float(-log_softmax[label - 1])
    gradient = np.exp(log_softmax)
    gradient[label - 1] -= 1.0
    return loss, gradient


def hcn_forward(
    pyramid: StagePyramid,
    weights: MergeWeights,
    mode: str = "eval",
    dropout_rate: float = 0.5,
    seed: int = 0,
) -> HcnOutputs:
    """Run the three-branch forward pass.

    In train mode each branch gets an independent dropout mask drawn from one
    generator in a fixed order (r5, c1, c2), so a given seed reproduces the
    outputs bit for bit. The retrieval feature is the pooled r5 map, taken
    before dropout.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if not 0.0 <= dropout_rate < 1.0:
        raise ValueError(f"dropout_rate must be in [0, 1), got {dropout_rate}")
    c1, c2 = cross_merge(pyramid, weights)
    branches = [
        (np.asarray(pyramid.r5, dtype=np.float64), weights.head_r5_weight, weights.head_r5_bias),
        (c1, weights.head_c1_weight, weights.head_c1_bias),
        (c2, weights.head_c2_weight, weights.head_c2_bias),
    ]
    rng = np.random.default_rng(seed)
    logits = []
    for fmap, w, b in branches:
        if mode == "train":
            fmap = _apply_dropout(fmap, dropout_rate, rng)
        logits.append(head_logits(fmap, w, b))
    feature = np.asarray(pyramid.r5, dtype=np.float64).mean(axis=(0, 1))
    return HcnOutputs(
        logits_r5=logits[0], logits_c1=logits[1], logits_c2=logits[2], feature=feature
    )


def gradient_check(
    cases: int = 100,
    num_classes: int = 10,
    step: float = 1e-6,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients
    of the identity loss over seeded random logits."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        z = rng.uniform(-2.0, 2.0, num_classes)
        label = int(rng.integers(1, num_classes + 1))
        _, analytic = id_loss(z, label)
        for i in range(num_classes):
            plus = z.copy()
            plus[i] += step
            minus = z.copy()
            minus[i] -= step
            numeric = (id_loss(plus, label)[0] - id_loss(minus, label)[0]) / (2.0 * step)
            scale = max(abs(analytic[i]), abs(numeric))
            if scale == 0.0:
                continue
            worst = max(worst, abs(analytic[i] - numeric) / scale)
    return float(worst)

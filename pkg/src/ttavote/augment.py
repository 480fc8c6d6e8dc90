"""Label-preserving image augmentations and their parameter grids.

Five families of mild distortions, each with a fixed 20-point grid:
blur+resize, a resize sweep, patch-based Gaussian noise, pixel-shift
padding, and a smooth grid warp. All transforms are pure functions of
(image, spec); stochastic ones derive their noise from the spec alone.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field

import cv2
import numpy as np

from .core import DocumentImage
from .rng import keyed_generator, stable_hash


class Category(enum.Enum):
    BLUR_RESIZE = "blur_resize"
    RESIZE_SWEEP = "resize_sweep"
    GAUSSIAN_NOISE = "gaussian_noise"
    PIXEL_SHIFT_PAD = "pixel_shift_pad"
    GRID_WARP = "grid_warp"
    IDENTITY = "identity"


IMAGE_CATEGORIES = (
    Category.BLUR_RESIZE,
    Category.RESIZE_SWEEP,
    Category.GAUSSIAN_NOISE,
    Category.PIXEL_SHIFT_PAD,
    Category.GRID_WARP,
)

DIRECTIONS = ("NE", "SE", "SW", "NW")

# Content is translated toward the named corner; the vacated margins are
# filled with white. Offsets are (top, bottom, left, right) pad amounts.
_PADS = {
    "NE": (0, 1, 1, 0),
    "SE": (1, 0, 1, 0),
    "SW": (1, 0, 0, 1),
    "NW": (0, 1, 0, 1),
}


class AugmentationError(ValueError):
    """Invalid spec or an image the transform cannot be applied to."""


@dataclass(frozen=True)
class AugmentationSpec:
    """One point of the augmentation grid: category + parameters."""

    category: Category
    params: tuple[tuple[str, float | int | str], ...] = ()
    post_scale: float = 1.0
    warp_seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(sorted(self.params)))
        _validate_spec(self)

    def param(self, name: str):
        for key, value in self.params:
            if key == name:
                return value
        raise KeyError(name)

    def to_json(self) -> str:
        payload = {
            "category": self.category.value,
            "params": dict(self.params),
            "post_scale": self.post_scale,
            "warp_seed": self.warp_seed,
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "AugmentationSpec":
        payload = json.loads(text)
        return cls(
            category=Category(payload["category"]),
            params=tuple(payload["params"].items()),
            post_scale=payload["post_scale"],
            warp_seed=payload.get("warp_seed"),
        )

    @property
    def spec_hash(self) -> str:
        return stable_hash("augspec", self.to_json())

    @property
    def label(self) -> str:
        """Human-readable key used in pools and reports."""
        parts = "_".join(f"{k}{v}" for k, v in self.params)
        bits = [self.category.value]
        if parts:
            bits.append(parts)
        if self.post_scale != 1.0:
            bits.append(f"x{self.post_scale:g}")
        return "/".join(bits)


def _validate_spec(spec: AugmentationSpec) -> None:
    if not 0.0 < spec.post_scale <= 2.0:
        raise AugmentationError(f"post_scale out of range (0, 2]: {spec.post_scale}")
    c = spec.category
    p = dict(spec.params)
    if c is Category.BLUR_RESIZE:
        k = p.get("kernel")
        if k not in range(5, 18) or k % 2 == 0:
            raise AugmentationError(f"blur kernel must be odd in [5, 17]: {k}")
    elif c is Category.RESIZE_SWEEP:
        s = p.get("scale")
        if s is None or not 0.0 < s <= 2.0:
            raise AugmentationError(f"resize scale out of range (0, 2]: {s}")
    elif c is Category.GAUSSIAN_NOISE:
        if p.get("patch") not in (2, 4, 8, 16):
            raise AugmentationError(f"noise patch must be in {{2,4,8,16}}: {p.get('patch')}")
        if p.get("sigma") not in (4, 6, 8, 10, 15):
            raise AugmentationError(f"noise sigma must be in {{4,6,8,10,15}}: {p.get('sigma')}")
    elif c is Category.PIXEL_SHIFT_PAD:
        if p.get("offset") not in (8, 16, 32, 64, 128):
            raise AugmentationError(f"pad offset must be in {{8,16,32,64,128}}: {p.get('offset')}")
        if p.get("direction") not in DIRECTIONS:
            raise AugmentationError(f"pad direction must be one of {DIRECTIONS}: {p.get('direction')}")
    elif c is Category.GRID_WARP:
        if p.get("mesh") not in (70, 85, 100, 115, 130):
            raise AugmentationError(f"warp mesh must be in {{70,85,100,115,130}}: {p.get('mesh')}")
        if p.get("sigma") not in (0, 1, 2, 3, 4):  # 0 allowed for tests only
            raise AugmentationError(f"warp sigma must be in {{1,2,3,4}}: {p.get('sigma')}")


@dataclass(frozen=True)
class AugmentationGrid:
    category: Category
    specs: tuple[AugmentationSpec, ...] = field(default_factory=tuple)

    def __len__(self) -> int:
        return len(self.specs)


def build_grid(category: Category) -> AugmentationGrid:
    """The fixed 20-configuration grid for one image-distortion category."""
    specs: list[AugmentationSpec] = []
    if category is Category.BLUR_RESIZE:
        for kernel in range(5, 18, 2):
            for scale in (1.0, 0.75, 0.5):
                if kernel == 17 and scale == 0.5:
                    continue
                specs.append(
                    AugmentationSpec(category, params=(("kernel", kernel),), post_scale=scale)
                )
    elif category is Category.RESIZE_SWEEP:
        for step in range(6, 27):  # 0.30 .. 1.30 in 0.05 steps
            scale = step * 0.05
            if step == 20:  # skip the original size
                continue
            specs.append(AugmentationSpec(category, params=(("scale", round(scale, 2)),)))
    elif category is Category.GAUSSIAN_NOISE:
        for patch in (2, 4, 8, 16):
            for sigma in (4, 6, 8, 10, 15):
                specs.append(
                    AugmentationSpec(category, params=(("patch", patch), ("sigma", sigma)), post_scale=0.5)
                )
    elif category is Category.PIXEL_SHIFT_PAD:
        for offset in (8, 16, 32, 64, 128):
            for direction in DIRECTIONS:
                specs.append(
                    AugmentationSpec(
                        category, params=(("direction", direction), ("offset", offset)), post_scale=0.5
                    )
                )
    elif category is Category.GRID_WARP:
        for mesh in (70, 85, 100, 115, 130):
            for sigma in (1, 2, 3, 4):
                specs.append(
                    AugmentationSpec(category, params=(("mesh", mesh), ("sigma", sigma)), post_scale=0.5)
                )
    else:
        raise AugmentationError(f"no parameter grid for category: {category}")
    assert len(specs) == 20 and len(set(specs)) == 20
    return AugmentationGrid(category=category, specs=tuple(specs))


def build_all_grids() -> dict[Category, AugmentationGrid]:
    return {c: build_grid(c) for c in IMAGE_CATEGORIES}


def apply_augmentation(img: DocumentImage, spec: AugmentationSpec) -> DocumentImage:
    """Apply one augmentation spec; pure in (img, spec)."""
    px = img.pixels
    c = spec.category
    if c is Category.IDENTITY:
        out = px
    elif c is Category.BLUR_RESIZE:
        k = int(spec.param("kernel"))
        out = _hwc(cv2.GaussianBlur(px, (k, k), 0, borderType=cv2.BORDER_REPLICATE))
    elif c is Category.RESIZE_SWEEP:
        out = _resize(px, float(spec.param("scale")))
    elif c is Category.GAUSSIAN_NOISE:
        out = _patch_noise(px, int(spec.param("patch")), float(spec.param("sigma")), spec)
    elif c is Category.PIXEL_SHIFT_PAD:
        out = _shift_pad(px, int(spec.param("offset")), str(spec.param("direction")))
    elif c is Category.GRID_WARP:
        out = _grid_warp(px, int(spec.param("mesh")), float(spec.param("sigma")), spec)
    else:
        raise AugmentationError(f"unknown category: {c}")
    if spec.post_scale != 1.0:
        out = _resize(out, spec.post_scale)
    return DocumentImage(id=img.id, pixels=out)


def _hwc(px: np.ndarray) -> np.ndarray:
    return px[:, :, np.newaxis] if px.ndim == 2 else px


def _resize(px: np.ndarray, scale: float) -> np.ndarray:
    h, w = px.shape[:2]
    nw = int(w * scale + 0.5)
    nh = int(h * scale + 0.5)
    if nw < 1 or nh < 1:
        raise AugmentationError(f"zero-area result scaling {w}x{h} by {scale}")
    return _hwc(cv2.resize(px, (nw, nh), interpolation=cv2.INTER_LINEAR))


def _patch_noise(px: np.ndarray, patch: int, sigma: float, spec: AugmentationSpec) -> np.ndarray:
    h, w, ch = px.shape
    gh = math.ceil(h / patch)
    gw = math.ceil(w / patch)
    rng = keyed_generator("aug-noise", spec.to_json())
    grid = rng.normal(0.0, sigma, size=(gh, gw, ch))
    dense = np.repeat(np.repeat(grid, patch, axis=0), patch, axis=1)[:h, :w, :]
    out = np.clip(np.rint(px.astype(np.float64) + dense), 0, 255)
    return out.astype(np.uint8)


def _shift_pad(px: np.ndarray, offset: int, direction: str) -> np.ndarray:
    top, bottom, left, right = (offset * s for s in _PADS[direction])
    fill = (255, 255, 255) if px.shape[2] == 3 else 255
    out = cv2.copyMakeBorder(px, top, bottom, left, right, cv2.BORDER_CONSTANT, value=fill)
    return _hwc(out)


def _grid_warp(px: np.ndarray, mesh: int, sigma: float, spec: AugmentationSpec) -> np.ndarray:
    h, w = px.shape[:2]
    if h < mesh or w < mesh:
        raise AugmentationError(f"image {w}x{h} smaller than one mesh interval ({mesh}px)")
    ny = h // mesh + 1
    nx = w // mesh + 1
    rng = keyed_generator("aug-warp", spec.to_json())
    node_dx = rng.normal(0.0, sigma, size=(ny, nx))
    node_dy = rng.normal(0.0, sigma, size=(ny, nx))

    # Bilinear interpolation of node displacements to a dense field; pixels
    # beyond the last node row/column take the edge node's displacement.
    fy = np.minimum(np.arange(h) / mesh, ny - 1)
    fx = np.minimum(np.arange(w) / mesh, nx - 1)
    y0 = np.minimum(fy.astype(int), ny - 2)
    x0 = np.minimum(fx.astype(int), nx - 2)
    ty = (fy - y0)[:, None]
    tx = (fx - x0)[None, :]

    def interp(node: np.ndarray) -> np.ndarray:
        n00 = node[np.ix_(y0, x0)]
        n01 = node[np.ix_(y0, x0 + 1)]
        n10 = node[np.ix_(y0 + 1, x0)]
        n11 = node[np.ix_(y0 + 1, x0 + 1)]
        return (
            n00 * (1 - ty) * (1 - tx)
            + n01 * (1 - ty) * tx
            + n10 * ty * (1 - tx)
            + n11 * ty * tx
        )

    xx, yy = np.meshgrid(np.arange(w, dtype=np.float32), np.arange(h, dtype=np.float32))
    map_x = (xx + interp(node_dx)).astype(np.float32)
    map_y = (yy + interp(node_dy)).astype(np.float32)
    out = cv2.remap(px, map_x, map_y, cv2.INTER_LINEAR, borderMode=cv2.BORDER_REPLICATE)
    return _hwc(out)

"""Synthetic structural x statistical textures.

An image is a binary structural mask whose foreground pixels are drawn from a
statistical distribution and whose background is a dim uniform noise floor.
Every image is a pure function of its :class:`TextureSpec` (seed included).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .errors import ConfigurationError

STRUCTURAL_KINDS = ("checkerboard", "cross", "stripe", "sandripple", "rocky", "craters", "flat")
STATISTICAL_KINDS = ("binomial", "multinomial", "constant")

BACKGROUND_RANGE = (0.0, 0.1)

DEFAULT_STRUCTURAL_PARAMS: dict[str, dict] = {
    "checkerboard": {"tile": 8},
    "cross": {"period": 16, "arm": 4},
    "stripe": {"period": 8, "orientation": "horizontal"},
    # thresholded oriented sinusoid; orientation in degrees from horizontal bands
    "sandripple": {"wavelength": 8.0, "orientation": 0.0, "orientation_jitter": 10.0, "warp": 0.6},
    # union of random disks, blurred, thresholded at a coverage quantile
    "rocky": {"density": 0.012, "radius_min": 2.0, "radius_max": 5.0, "blur": 1.5, "coverage": 0.5},
    "craters": {"density": 0.002, "radius_min": 3.0, "radius_max": 6.0},
    "flat": {},
}

DEFAULT_STATISTICAL_PARAMS: dict[str, dict] = {
    "binomial": {"n": 8, "p": 0.6},
    "multinomial": {"levels": (0.3, 0.6, 0.9), "probs": (1 / 3, 1 / 3, 1 / 3)},
    "constant": {"c": 0.6},
}


@dataclass
class TextureSpec:
    structural: str
    statistical: str
    size: tuple[int, int] = (64, 64)
    seed: int = 0
    structural_params: dict = field(default_factory=dict)
    statistical_params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.structural not in STRUCTURAL_KINDS:
            raise ConfigurationError(f"unknown structural kind {self.structural!r}")
        if self.statistical not in STATISTICAL_KINDS:
            raise ConfigurationError(f"unknown statistical kind {self.statistical!r}")
        self.size = tuple(int(v) for v in self.size)

    def with_seed(self, seed: int) -> "TextureSpec":
        return TextureSpec(
            self.structural, self.statistical, self.size, int(seed),
            dict(self.structural_params), dict(self.statistical_params),
        )


def _merged(defaults: dict, overrides: Optional[dict]) -> dict:
    out = dict(defaults)
    out.update(overrides or {})
    return out


def structural_mask(
    kind: str,
    size: Sequence[int],
    structural_params: Optional[dict] = None,
    seed: int = 0,
) -> np.ndarray:
    """Binary foreground mask (uint8, 1 = foreground) of shape ``size``."""
    if kind not in STRUCTURAL_KINDS:
        raise ConfigurationError(f"unknown structural kind {kind!r}")
    h, w = (int(v) for v in size)
    params = _merged(DEFAULT_STRUCTURAL_PARAMS[kind], structural_params)
    rng = np.random.default_rng(seed)
    rows, cols = np.mgrid[0:h, 0:w]

    if kind == "checkerboard":
        tile = int(params["tile"])
        _check_period(tile, h, w, kind)
        mask = ((rows // tile + cols // tile) % 2) == 0
    elif kind == "cross":
        period, arm = int(params["period"]), int(params["arm"])
        _check_period(period, h, w, kind)
        lo = (period - arm) // 2
        in_row = ((rows % period) >= lo) & ((rows % period) < lo + arm)
        in_col = ((cols % period) >= lo) & ((cols % period) < lo + arm)
        mask = in_row | in_col
    elif kind == "stripe":
        period = int(params["period"])
        _check_period(period, h, w, kind)
        if params["orientation"] not in ("horizontal", "vertical"):
            raise ConfigurationError("stripe orientation must be horizontal or vertical")
        coord = rows if params["orientation"] == "horizontal" else cols
        mask = (coord % period) < period // 2
    elif kind == "sandripple":
        wavelength = float(params["wavelength"])
        _check_period(int(math.ceil(wavelength)), h, w, kind)
        theta = math.radians(
            float(params["orientation"])
            + rng.uniform(-1.0, 1.0) * float(params["orientation_jitter"])
        )
        phase = rng.uniform(0.0, 2.0 * math.pi)
        # slow sinusoidal phase warp along the crest direction
        warp_freq = rng.uniform(0.5, 1.5) * 2.0 * math.pi / max(h, w)
        warp_phase = rng.uniform(0.0, 2.0 * math.pi)
        across = rows * math.cos(theta) + cols * math.sin(theta)
        along = -rows * math.sin(theta) + cols * math.cos(theta)
        arg = 2.0 * math.pi * across / wavelength + phase
        arg = arg + float(params["warp"]) * np.sin(warp_freq * along + warp_phase)
        mask = np.sin(arg) > 0
    elif kind == "rocky":
        field_ = _disk_field(rng, h, w, params)
        blurred = ndimage.gaussian_filter(field_, float(params["blur"]), mode="wrap")
        blurred = blurred + rng.uniform(0.0, 1e-9, size=blurred.shape)  # break plateaus
        coverage = float(params["coverage"])
        if not 0.0 < coverage < 1.0:
            raise ConfigurationError(f"rocky coverage must be in (0, 1), got {coverage}")
        mask = blurred > np.quantile(blurred, 1.0 - coverage)
    elif kind == "craters":
        mask = _disk_field(rng, h, w, params) > 0
    else:  # flat
        mask = np.zeros((h, w), dtype=bool)
    return mask.astype(np.uint8)


def _check_period(period: int, h: int, w: int, kind: str) -> None:
    if period < 1:
        raise ConfigurationError(f"{kind}: pattern period must be >= 1")
    if period > min(h, w):
        raise ConfigurationError(f"{kind}: image {h}x{w} is smaller than pattern period {period}")


def _disk_field(rng: np.random.Generator, h: int, w: int, params: dict) -> np.ndarray:
    count = max(1, int(round(float(params["density"]) * h * w)))
    cy = rng.uniform(0, h, count)
    cx = rng.uniform(0, w, count)
    radius = rng.uniform(float(params["radius_min"]), float(params["radius_max"]), count)
    rows, cols = np.mgrid[0:h, 0:w]
    out = np.zeros((h, w))
    for y, x, r in zip(cy, cx, radius):
        dy = np.minimum(np.abs(rows - y), h - np.abs(rows - y))  # wrap-around
        dx = np.minimum(np.abs(cols - x), w - np.abs(cols - x))
        out[dy * dy + dx * dx <= r * r] = 1.0
    return out


def sample_statistical(
    dist: str,
    count: int,
    statistical_params: Optional[dict] = None,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """``count`` foreground intensities in [0, 1]."""
    if dist not in STATISTICAL_KINDS:
        raise ConfigurationError(f"unknown statistical kind {dist!r}")
    if count < 0:
        raise ConfigurationError("count must be >= 0")
    rng = rng if rng is not None else np.random.default_rng(0)
    params = _merged(DEFAULT_STATISTICAL_PARAMS[dist], statistical_params)
    if dist == "constant":
        c = float(params["c"])
        if not 0.0 <= c <= 1.0:
            raise ConfigurationError(f"constant level {c} outside [0, 1]")
        return np.full(count, c)
    if dist == "binomial":
        n, p = int(params["n"]), float(params["p"])
        if n < 1 or not 0.0 <= p <= 1.0:
            raise ConfigurationError(f"invalid binomial parameters n={n}, p={p}")
        return rng.binomial(n, p, size=count) / n
    levels = np.asarray(params["levels"], dtype=float)
    probs = np.asarray(params["probs"], dtype=float)
    if (
        levels.shape != probs.shape
        or levels.size == 0
        or np.any(probs < 0)
        or not math.isclose(probs.sum(), 1.0, abs_tol=1e-9)
        or np.any((levels < 0) | (levels > 1))
    ):
        raise ConfigurationError(f"invalid multinomial levels {levels} / probabilities {probs}")
    idx = rng.choice(levels.size, size=count, p=probs / probs.sum())
    return levels[idx]


def render_texture(spec: TextureSpec) -> np.ndarray:
    """Render one image (float64, shape ``spec.size``, values in [0, 1])."""
    h, w = spec.size
    seq = np.random.SeedSequence(spec.seed)
    mask_seed, pixel_seed = seq.spawn(2)
    mask = structural_mask(
        spec.structural, spec.size, spec.structural_params,
        int(mask_seed.generate_state(1, np.uint64)[0]),
    )
    rng = np.random.default_rng(pixel_seed)
    fg = sample_statistical(spec.statistical, h * w, spec.statistical_params, rng).reshape(h, w)
    bg = rng.uniform(*BACKGROUND_RANGE, size=(h, w))
    return np.where(mask == 1, fg, bg)


def derive_seed(master_seed: int, *path: int) -> int:
    """64-bit per-image seed; independent of generation order."""
    seq = np.random.SeedSequence([int(master_seed) & (2**64 - 1), *[int(p) for p in path]])
    return int(seq.generate_state(1, np.uint64)[0])


def random_crop(
    image: np.ndarray, crop_size: Sequence[int], rng: np.random.Generator
) -> np.ndarray:
    """Patch of ``crop_size`` from the last two axes at a uniform random corner."""
    ch, cw = (int(v) for v in crop_size)
    h, w = image.shape[-2:]
    if ch > h or cw > w or ch < 1 or cw < 1:
        raise ConfigurationError(f"crop {ch}x{cw} does not fit image {h}x{w}")
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    return image[..., top : top + ch, left : left + cw]


def center_crop(image: np.ndarray, crop_size: Sequence[int]) -> np.ndarray:
    ch, cw = (int(v) for v in crop_size)
    h, w = image.shape[-2:]
    if ch > h or cw > w:
        raise ConfigurationError(f"crop {ch}x{cw} does not fit image {h}x{w}")
    top, left = (h - ch) // 2, (w - cw) // 2
    return image[..., top : top + ch, left : left + cw]

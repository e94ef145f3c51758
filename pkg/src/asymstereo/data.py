"""Stereo samples, asymmetric view degradation, and evaluation metrics.

Conventions used throughout the package:

* The left view is the high-quality reference, an ``(H, W, 3)`` float array
  with values in ``[0, 1]``.  ``H`` and ``W`` are multiples of 32.
* The right view may be degraded: grayscale and/or downsampled by an integer
  factor ``k``, giving an ``(H/k, W/k, c)`` array with ``c`` in ``{1, 3}``.
* Ground-truth disparity is referenced to the left view, in full-resolution
  pixels: the scene point at left pixel ``(x, y)`` appears at ``(x - d, y)``
  in the right view.
* All resampling is plain bilinear with half-pixel-centered coordinates and
  edge clamping, so outputs are convex combinations of inputs.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, EvaluationError, ParameterError

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])

VALID_FACTORS = (1, 2, 4, 6, 8)


@dataclass(frozen=True)
class DegradationSpec:
    """How the right view differs from the left: resolution and color depth."""

    downsample_factor: int = 1
    grayscale: bool = False

    def __post_init__(self):
        if self.downsample_factor not in VALID_FACTORS:
            raise ParameterError(
                f"downsample_factor must be one of {VALID_FACTORS}, "
                f"got {self.downsample_factor}"
            )

    @property
    def channels(self) -> int:
        return 1 if self.grayscale else 3

    @property
    def is_identity(self) -> bool:
        return self.downsample_factor == 1 and not self.grayscale


@dataclass(frozen=True)
class AlignmentConfig:
    """Which views feed which feature family.

    The right view is always upsampled to the nominal grid; each flag
    selects whether the corresponding family sees the pristine left view or
    the left view degraded to the right view's information content.
    """

    degrade_left_for_corr: bool = True
    degrade_left_for_cat: bool = False


@dataclass(frozen=True)
class MetricsReport:
    """Disparity error aggregates over the valid pixels of one or more samples."""

    epe: float
    d1: float
    gt3px: float
    n_valid: int


# ---------------------------------------------------------------------------
# Resampling primitives
# ---------------------------------------------------------------------------

def resize_weights(n_out: int, n_in: int) -> np.ndarray:
    """Row-stochastic bilinear resampling matrix along one axis.

    Output sample ``i`` reads the input at half-pixel-centered coordinate
    ``(i + 0.5) * n_in / n_out - 0.5``, with taps clamped to the valid range.
    """
    w = np.zeros((n_out, n_in))
    coords = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    lo = np.floor(coords).astype(int)
    frac = coords - lo
    lo_c = np.clip(lo, 0, n_in - 1)
    hi_c = np.clip(lo + 1, 0, n_in - 1)
    rows = np.arange(n_out)
    w[rows, lo_c] += 1.0 - frac
    w[rows, hi_c] += frac
    return w


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of an ``(H, W)`` or ``(H, W, C)`` array (separable)."""
    if img.ndim == 2:
        return bilinear_resize(img[:, :, None], out_h, out_w)[:, :, 0]
    if img.ndim != 3:
        raise DimensionError(f"expected 2D or 3D array, got shape {img.shape}")
    wr = resize_weights(out_h, img.shape[0])
    wc = resize_weights(out_w, img.shape[1])
    return np.einsum("oi,ijc,pj->opc", wr, img, wc, optimize=True)


def rgb_to_gray(img: np.ndarray) -> np.ndarray:
    """Collapse an ``(H, W, 3)`` image to ``(H, W, 1)`` luma."""
    if img.ndim != 3 or img.shape[2] != 3:
        raise DimensionError(f"expected (H, W, 3) image, got shape {img.shape}")
    return (img @ LUMA_WEIGHTS)[:, :, None]


def replicate_channels(img: np.ndarray) -> np.ndarray:
    """Expand a single-channel image to 3 channels; pass 3-channel through."""
    if img.shape[2] == 3:
        return img
    if img.shape[2] == 1:
        return np.repeat(img, 3, axis=2)
    raise DimensionError(f"expected 1 or 3 channels, got {img.shape[2]}")


def _check_divisible(img: np.ndarray, k: int):
    h, w = img.shape[:2]
    if h % k or w % k:
        raise DimensionError(f"image size {h}x{w} not divisible by factor {k}")


def degrade_right(image: np.ndarray, spec: DegradationSpec) -> np.ndarray:
    """Apply the right-view degradation: grayscale first, then bilinear
    downsampling by the spec factor.  Identity specs return the input as-is.
    """
    _check_divisible(image, spec.downsample_factor)
    if spec.is_identity:
        return image
    out = rgb_to_gray(image) if spec.grayscale else image
    k = spec.downsample_factor
    if k > 1:
        out = bilinear_resize(out, image.shape[0] // k, image.shape[1] // k)
    return out


def upsample_right_for_cat(right: np.ndarray, spec: DegradationSpec) -> np.ndarray:
    """Bilinearly upsample a degraded right view back to the nominal grid."""
    k = spec.downsample_factor
    if k == 1:
        return right
    return bilinear_resize(right, right.shape[0] * k, right.shape[1] * k)


def degrade_left_for_corr(left: np.ndarray, spec: DegradationSpec) -> np.ndarray:
    """Degrade the left view to the right view's information content.

    Defined compositionally as the down/up bilinear round trip of
    :func:`degrade_right`, so the result lives on the nominal ``H x W`` grid
    while matching the degraded right view's effective resolution and color.
    """
    return upsample_right_for_cat(degrade_right(left, spec), spec)


# ---------------------------------------------------------------------------
# Synthetic scenes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SceneParams:
    """Knobs for procedural stereo scene generation."""

    height: int
    width: int
    d_max: int
    shape_count: int = 4
    texture_scale: float = 8.0
    background_disparity: float | None = None

    def __post_init__(self):
        if self.height % 32 or self.width % 32:
            raise ParameterError(
                f"scene size {self.height}x{self.width} must be a multiple of 32"
            )
        if self.d_max > self.width // 2:
            raise ParameterError(
                f"d_max={self.d_max} exceeds width/2={self.width // 2}"
            )
        if self.d_max < 1:
            raise ParameterError("d_max must be >= 1")


@dataclass(frozen=True)
class SceneLayer:
    """A fronto-parallel textured layer at a fixed disparity.

    Textures are analytic sinusoid mixtures, so both views can be shaded at
    arbitrary fractional coordinates with no rasterization error.
    """

    kind: str  # 'background' | 'rect' | 'ellipse'
    disparity: float
    geometry: tuple[float, ...]
    texture: np.ndarray  # (3, n_waves, 4): amplitude, fx, fy, phase per row

    def covers(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        if self.kind == "background":
            return np.ones_like(x, dtype=bool)
        cx, cy, hx, hy = self.geometry
        if self.kind == "rect":
            return (np.abs(x - cx) <= hx) & (np.abs(y - cy) <= hy)
        return ((x - cx) / hx) ** 2 + ((y - cy) / hy) ** 2 <= 1.0

    def shade(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        out = np.empty(x.shape + (3,))
        for c in range(3):
            amp, fx, fy, ph = self.texture[c].T
            waves = amp[:, None] * np.sin(
                2.0 * np.pi * (fx[:, None] * x.ravel() + fy[:, None] * y.ravel())
                + ph[:, None]
            )
            vals = 0.5 + 0.45 * waves.sum(axis=0) / np.abs(amp).sum()
            out[..., c] = vals.reshape(x.shape)
        return out


@dataclass
class StereoSample:
    """A stereo pair with exact ground truth and a degradation descriptor."""

    left: np.ndarray            # (H, W, 3) in [0, 1]
    right: np.ndarray           # (H/k, W/k, c), the degraded view
    gt_disparity: np.ndarray    # (H, W), left-referenced, full-res pixels
    valid_mask: np.ndarray      # (H, W) bool
    degradation: DegradationSpec
    d_max: int
    right_pristine: np.ndarray | None = None  # (H, W, 3), pre-degradation
    scene: tuple[SceneLayer, ...] | None = field(default=None, repr=False)

    def __post_init__(self):
        h, w = self.left.shape[:2]
        if h % 32 or w % 32:
            raise DimensionError(f"sample size {h}x{w} must be a multiple of 32")
        k = self.degradation.downsample_factor
        expect = (h // k, w // k, self.degradation.channels)
        if self.right.shape != expect:
            raise DimensionError(
                f"right view shape {self.right.shape} != expected {expect}"
            )
        if self.gt_disparity.shape != (h, w) or self.valid_mask.shape != (h, w):
            raise DimensionError("gt_disparity/valid_mask must match left view size")
        gt_valid = self.gt_disparity[self.valid_mask]
        if gt_valid.size and (gt_valid.min() < 0 or gt_valid.max() >= self.d_max):
            raise ParameterError("valid disparities must lie in [0, d_max)")

    @property
    def height(self) -> int:
        return self.left.shape[0]

    @property
    def width(self) -> int:
        return self.left.shape[1]


def _random_texture(rng: np.random.Generator, scale: float) -> np.ndarray:
    # per-layer wavelength jitter keeps the dataset from collapsing onto a
    # single texture statistic
    scale = scale * rng.uniform(0.6, 1.5)
    n_waves = 4
    tex = np.empty((3, n_waves, 4))
    tex[:, :, 0] = rng.uniform(0.3, 1.0, size=(3, n_waves))          # amplitude
    tex[:, :, 1:3] = rng.uniform(0.15, 1.0, size=(3, n_waves, 2)) / scale
    tex[:, :, 1:3] *= rng.choice([-1.0, 1.0], size=(3, n_waves, 2))  # direction
    tex[:, :, 3] = rng.uniform(0.0, 2.0 * np.pi, size=(3, n_waves))  # phase
    return tex


def _quarter_px(value: float) -> float:
    return np.floor(value * 4.0) / 4.0


def _random_scene(rng: np.random.Generator, params: SceneParams) -> tuple[SceneLayer, ...]:
    h, w, d_max = params.height, params.width, params.d_max
    if params.background_disparity is not None:
        d_bg = float(params.background_disparity)
        if not 0.0 <= d_bg < d_max:
            raise ParameterError("background_disparity must lie in [0, d_max)")
    else:
        d_bg = _quarter_px(rng.uniform(0.0, 0.25 * (d_max - 1)))
    layers = [SceneLayer("background", d_bg, (), _random_texture(rng, params.texture_scale))]

    lo = min(d_bg + 1.0, d_max - 0.5)
    disps = sorted(_quarter_px(rng.uniform(lo, d_max - 0.25)) for _ in range(params.shape_count))
    for d in disps:
        kind = "rect" if rng.random() < 0.5 else "ellipse"
        cx = rng.uniform(0.15 * w, 0.85 * w)
        cy = rng.uniform(0.15 * h, 0.85 * h)
        hx = rng.uniform(0.06 * w, 0.22 * w)
        hy = rng.uniform(0.10 * h, 0.30 * h)
        layers.append(SceneLayer(kind, float(d), (cx, cy, hx, hy),
                                 _random_texture(rng, params.texture_scale)))
    return tuple(layers)


def render_view(scene: tuple[SceneLayer, ...], x: np.ndarray, y: np.ndarray,
                view: str) -> tuple[np.ndarray, np.ndarray]:
    """Shade a scene at (possibly fractional) query coordinates.

    For ``view='left'`` the coordinates are left-view positions; for
    ``view='right'`` they are right-view positions and each layer is queried
    at ``x + disparity``.  Layers are composited far-to-near (scenes are
    ordered by ascending disparity).  Returns ``(image, layer_index)``.
    """
    if view not in ("left", "right"):
        raise ParameterError(f"view must be 'left' or 'right', got {view!r}")
    img = np.empty(x.shape + (3,))
    idx = np.zeros(x.shape, dtype=np.int64)
    for j, layer in enumerate(scene):
        xq = x + layer.disparity if view == "right" else x
        m = layer.covers(xq, y) if j else np.ones_like(idx, dtype=bool)
        if not m.any():
            continue
        shaded = layer.shade(xq[m], y[m])
        img[m] = shaded
        idx[m] = j
    return img, idx


def make_synthetic_pair(seed: int, params: SceneParams,
                        spec: DegradationSpec) -> StereoSample:
    """Procedurally generate a stereo sample with exact ground truth.

    The right view is shaded from the same analytic texture field as the
    left, shifted by each layer's disparity, so at every non-occluded pixel
    the pristine right view at ``(x - gt, y)`` reproduces the left view
    exactly.  Occluded pixels and pixels leaving the right frame are marked
    invalid.  Deterministic for a given seed.
    """
    if params.height % spec.downsample_factor or params.width % spec.downsample_factor:
        raise ParameterError(
            f"scene size {params.height}x{params.width} not divisible by "
            f"k={spec.downsample_factor}"
        )
    rng = np.random.default_rng(seed)
    scene = _random_scene(rng, params)
    y, x = np.mgrid[0:params.height, 0:params.width].astype(float)

    left, idx_left = render_view(scene, x, y, "left")
    disp_of = np.array([layer.disparity for layer in scene])
    gt = disp_of[idx_left]

    right_pristine, _ = render_view(scene, x, y, "right")

    # A left pixel survives in the right view iff its own layer is still the
    # topmost one at the matching (fractional) right-view coordinate.
    xr = x - gt
    _, idx_right_at = render_view(scene, xr, y, "right")
    valid = (idx_right_at == idx_left) & (xr >= 0.0)

    right = degrade_right(right_pristine, spec)
    return StereoSample(
        left=left,
        right=right,
        gt_disparity=gt,
        valid_mask=valid,
        degradation=spec,
        d_max=params.d_max,
        right_pristine=right_pristine,
        scene=scene,
    )


def redegrade(sample: StereoSample, spec: DegradationSpec) -> StereoSample:
    """The same scene under a different right-view degradation."""
    if sample.right_pristine is None:
        raise ParameterError("re-degrading requires the pristine right view")
    return StereoSample(
        left=sample.left,
        right=degrade_right(sample.right_pristine, spec),
        gt_disparity=sample.gt_disparity,
        valid_mask=sample.valid_mask,
        degradation=spec,
        d_max=sample.d_max,
        right_pristine=sample.right_pristine,
        scene=sample.scene,
    )


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def compute_metrics(pred: np.ndarray, gt: np.ndarray,
                    mask: np.ndarray) -> MetricsReport:
    """EPE, D1 (>3px and >5% of gt), and >3px rate over masked pixels."""
    if pred.shape != gt.shape or pred.shape != mask.shape:
        raise DimensionError(
            f"shape mismatch: pred {pred.shape}, gt {gt.shape}, mask {mask.shape}"
        )
    if not mask.any():
        raise EvaluationError("metrics requested over an empty valid mask")
    err = np.abs(pred[mask] - gt[mask])
    over3 = err > 3.0
    return MetricsReport(
        epe=float(err.mean()),
        d1=float((over3 & (err > 0.05 * np.abs(gt[mask]))).mean()),
        gt3px=float(over3.mean()),
        n_valid=int(mask.sum()),
    )


def aggregate_metrics(reports: list[MetricsReport]) -> MetricsReport:
    """Combine per-sample reports, weighting every rate by its pixel count."""
    if not reports:
        raise EvaluationError("no reports to aggregate")
    n = sum(r.n_valid for r in reports)
    return MetricsReport(
        epe=sum(r.epe * r.n_valid for r in reports) / n,
        d1=sum(r.d1 * r.n_valid for r in reports) / n,
        gt3px=sum(r.gt3px * r.n_valid for r in reports) / n,
        n_valid=n,
    )

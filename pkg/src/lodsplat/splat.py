"""Tile-based Gaussian rasterization with two interchangeable blenders.

The pipeline is the usual one: project each selected Gaussian to a screen-space
ellipse, bin it into every 16x16 tile its 3-sigma box touches, depth-sort each
tile, then composite front to back.  Two blenders share that machinery:

* ``blend_reference`` makes the skip decision (alpha below 1/255) per pixel,
  the way a GPU thread would, and therefore suffers lane divergence: some
  pixels of a 2x2 group integrate a Gaussian while neighbors idle.
* ``blend_grouped`` decides once per 2x2 group by testing the exponent power
  at the group center against ln(1/(255*opacity)), so the four lanes always
  agree; the mixed-group counter is zero by construction.

Both report ``DivergenceStats`` over (Gaussian, group) evaluations, which is
what the hardware model's SP-unit cycle accounting consumes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ImageFormatError, ParameterError
from .scene import Camera, Gaussian, quat_to_mat

TILE = 16
ALPHA_SKIP = 1.0 / 255.0
ALPHA_CLAMP = 0.99
T_STOP = 1e-4
COV_FLOOR = 0.3  # px^2 added to the diagonal, anti-aliasing floor

__all__ = [
    "ProjectedGaussian",
    "TileBins",
    "Image",
    "DivergenceStats",
    "project_gaussian",
    "project_selection",
    "bin_gaussians",
    "blend_reference",
    "blend_grouped",
    "blend_pipeline",
    "group_alpha_check",
    "render_image",
    "image_metrics",
    "write_image",
    "read_image",
]


@dataclass
class ProjectedGaussian:
    nid: int
    mean2d: np.ndarray
    cov2d: np.ndarray
    conic: np.ndarray  # inverse of cov2d
    depth: float
    opacity: float
    color: np.ndarray


@dataclass
class TileBins:
    width: int
    height: int
    tiles_x: int
    tiles_y: int
    lists: list[list[int]]  # row-major tile order; indices into projections

    def tile(self, tx: int, ty: int) -> list[int]:
        return self.lists[ty * self.tiles_x + tx]


@dataclass
class Image:
    width: int
    height: int
    pixels: np.ndarray  # (height, width, 3) float in [0, 1]


@dataclass
class DivergenceStats:
    """Per (Gaussian, 2x2 group) evaluation outcomes during blending."""

    evaluations: int = 0
    full_active: int = 0
    full_skip: int = 0
    mixed: int = 0
    active_lanes: int = 0

    @property
    def simd_utilization(self) -> float:
        """Mean occupancy of the 4 lanes over cycles that issue blend work."""
        issued = self.full_active + self.mixed
        if issued == 0:
            return 1.0
        return self.active_lanes / (4.0 * issued)

    def to_json(self) -> dict:
        return {
            "evaluations": self.evaluations,
            "full_active": self.full_active,
            "full_skip": self.full_skip,
            "mixed": self.mixed,
            "simd_utilization": self.simd_utilization,
        }


# ---------------------------------------------------------------------------
# projection and binning


def project_gaussian(g: Gaussian, camera: Camera, nid: int = 0) -> ProjectedGaussian | None:
    """EWA-style projection of one Gaussian; None when it sits at or before near."""
    rot = camera.rotation()
    t = rot @ (np.asarray(g.mean, dtype=np.float64) - camera.position)
    depth = float(t[2])
    if depth <= camera.near:
        return None
    f = camera.focal
    jac = np.array(
        [
            [f / depth, 0.0, -f * t[0] / (depth * depth)],
            [0.0, f / depth, -f * t[1] / (depth * depth)],
        ]
    )
    m = quat_to_mat(g.rotation) * np.asarray(g.scale, dtype=np.float64)[None, :]
    cov3d = m @ m.T
    jw = jac @ rot
    cov2d = jw @ cov3d @ jw.T
    cov2d[0, 0] += COV_FLOOR
    cov2d[1, 1] += COV_FLOOR
    det = cov2d[0, 0] * cov2d[1, 1] - cov2d[0, 1] * cov2d[1, 0]
    conic = np.array([[cov2d[1, 1], -cov2d[0, 1]], [-cov2d[1, 0], cov2d[0, 0]]]) / det
    mean2d = np.array(
        [
            f * t[0] / depth + (camera.width - 1) / 2.0,
            f * t[1] / depth + (camera.height - 1) / 2.0,
        ]
    )
    return ProjectedGaussian(
        nid=nid,
        mean2d=mean2d,
        cov2d=cov2d,
        conic=conic,
        depth=depth,
        opacity=float(g.opacity),
        color=np.asarray(g.color, dtype=np.float64).copy(),
    )


def project_selection(source, selected: list[int], camera: Camera, weights: dict[int, float] | None = None):
    """Project a cut using any object carrying per-nid Gaussian columns.

    Works for trees and partitioned trees alike.  Interpolation weights, when
    given, scale opacity before projection.
    """
    out: list[ProjectedGaussian] = []
    for nid in selected:
        op = float(source._opacity[nid])
        if weights is not None:
            op *= weights.get(nid, 1.0)
        g = Gaussian(
            mean=source._means[nid],
            scale=source._scales[nid],
            rotation=source._quats[nid],
            opacity=op,
            color=source._colors[nid],
        )
        pg = project_gaussian(g, camera, nid=nid)
        if pg is not None:
            out.append(pg)
    return out


def bin_gaussians(projections: list[ProjectedGaussian], width: int, height: int) -> TileBins:
    """Append each Gaussian to every tile its 3-sigma box overlaps, then sort.

    The box is mean2d +/- 3*sqrt(diag(cov2d)); tile lists sort by (depth, nid)
    so binning is deterministic under any construction order.
    """
    tiles_x = (width + TILE - 1) // TILE
    tiles_y = (height + TILE - 1) // TILE
    lists: list[list[int]] = [[] for _ in range(tiles_x * tiles_y)]
    for idx, pg in enumerate(projections):
        rx = 3.0 * math.sqrt(pg.cov2d[0, 0])
        ry = 3.0 * math.sqrt(pg.cov2d[1, 1])
        tx0 = max(0, int(math.floor((pg.mean2d[0] - rx) / TILE)))
        tx1 = min(tiles_x - 1, int(math.floor((pg.mean2d[0] + rx) / TILE)))
        ty0 = max(0, int(math.floor((pg.mean2d[1] - ry) / TILE)))
        ty1 = min(tiles_y - 1, int(math.floor((pg.mean2d[1] + ry) / TILE)))
        for ty in range(ty0, ty1 + 1):
            for tx in range(tx0, tx1 + 1):
                lists[ty * tiles_x + tx].append(idx)
    for lst in lists:
        lst.sort(key=lambda i: (projections[i].depth, projections[i].nid))
    return TileBins(width, height, tiles_x, tiles_y, lists)


# ---------------------------------------------------------------------------
# blending


def group_alpha_check(pg: ProjectedGaussian, group_center: np.ndarray) -> bool:
    """Keep/skip decision for a whole 2x2 group, without evaluating exp.

    keep  <=>  opacity * exp(power) >= 1/255  <=>  power >= ln(1/(255*opacity))
    with power measured at the group center.  The >= boundary counts as keep.
    Non-positive opacity can never reach 1/255, so it is always skipped.
    """
    if pg.opacity <= 0.0:
        return False
    dx = float(group_center[0] - pg.mean2d[0])
    dy = float(group_center[1] - pg.mean2d[1])
    a = pg.conic[0, 0]
    b = pg.conic[0, 1]
    c = pg.conic[1, 1]
    power = -0.5 * (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy)
    return power >= math.log(1.0 / (255.0 * pg.opacity))


def blend_pipeline(
    bins: TileBins,
    projections: list[ProjectedGaussian],
    width: int,
    height: int,
    mode: str,
) -> tuple[Image, DivergenceStats, list[tuple[int, int]]]:
    """Composite all tiles; returns the image, divergence stats, and per-tile
    (sorted count, SP evaluations) pairs the cycle model consumes.

    Tiles pad to a full 16x16 internally; pixels beyond the image edge start
    with zero transmittance so they act as permanently idle lanes, and their
    colors are cropped at write-back.
    """
    if mode not in ("reference", "grouped"):
        raise ParameterError(f"mode must be 'reference' or 'grouped', got {mode!r}")
    grouped = mode == "grouped"
    img = np.zeros((height, width, 3))
    stats = DivergenceStats()
    traces: list[tuple[int, int]] = []
    half = TILE // 2
    col = np.arange(float(TILE))
    for ty in range(bins.tiles_y):
        for tx in range(bins.tiles_x):
            lst = bins.tile(tx, ty)
            x0 = tx * TILE
            y0 = ty * TILE
            vw = min(TILE, width - x0)
            vh = min(TILE, height - y0)
            if not lst:
                traces.append((0, 0))
                continue
            xs = x0 + col[None, :]
            ys = y0 + col[:, None]
            trans = np.ones((TILE, TILE))
            trans[vh:, :] = 0.0
            trans[:, vw:] = 0.0
            color_acc = np.zeros((TILE, TILE, 3))
            evals = 0
            for idx in lst:
                pg = projections[idx]
                live = trans >= T_STOP
                live_group = live.reshape(half, 2, half, 2).any(axis=(1, 3))
                n_live = int(live_group.sum())
                if n_live == 0:
                    break
                dx = xs - pg.mean2d[0]
                dy = ys - pg.mean2d[1]
                a = pg.conic[0, 0]
                b = pg.conic[0, 1]
                c = pg.conic[1, 1]
                power = -0.5 * (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy)
                alpha = np.minimum(ALPHA_CLAMP, pg.opacity * np.exp(power))
                evals += n_live
                stats.evaluations += n_live
                if grouped:
                    if pg.opacity > 0.0:
                        gx = x0 + 0.5 + 2.0 * np.arange(float(half))[None, :] - pg.mean2d[0]
                        gy = y0 + 0.5 + 2.0 * np.arange(float(half))[:, None] - pg.mean2d[1]
                        gpower = -0.5 * (a * gx * gx + 2.0 * b * gx * gy + c * gy * gy)
                        keep = gpower >= math.log(1.0 / (255.0 * pg.opacity))
                    else:
                        keep = np.zeros((half, half), dtype=bool)
                    decide = keep & live_group
                    n_keep = int(decide.sum())
                    stats.full_active += n_keep
                    stats.full_skip += n_live - n_keep
                    stats.active_lanes += 4 * n_keep
                    contrib = np.repeat(np.repeat(decide, 2, axis=0), 2, axis=1)
                else:
                    m = live & (alpha >= ALPHA_SKIP)
                    lanes = m.reshape(half, 2, half, 2).sum(axis=(1, 3))
                    n_full = int(((lanes == 4) & live_group).sum())
                    n_skip = int(((lanes == 0) & live_group).sum())
                    stats.full_active += n_full
                    stats.full_skip += n_skip
                    stats.mixed += n_live - n_full - n_skip
                    stats.active_lanes += int(m.sum())
                    contrib = m
                w = alpha * trans
                color_acc += np.where(contrib[:, :, None], w[:, :, None] * pg.color[None, None, :], 0.0)
                trans = np.where(contrib, trans * (1.0 - alpha), trans)
            img[y0 : y0 + vh, x0 : x0 + vw] = color_acc[:vh, :vw]
            traces.append((len(lst), evals))
    return Image(width, height, img), stats, traces


def blend_reference(bins: TileBins, projections, width: int, height: int) -> tuple[Image, DivergenceStats]:
    img, stats, _ = blend_pipeline(bins, projections, width, height, "reference")
    return img, stats


def blend_grouped(bins: TileBins, projections, width: int, height: int) -> tuple[Image, DivergenceStats]:
    img, stats, _ = blend_pipeline(bins, projections, width, height, "grouped")
    return img, stats


def render_image(source, selected: list[int], camera: Camera, mode: str = "reference", weights=None):
    """Project a cut, bin it, and blend it; the one-call rendering entry."""
    projections = project_selection(source, selected, camera, weights)
    bins = bin_gaussians(projections, camera.width, camera.height)
    img, stats, _ = blend_pipeline(bins, projections, camera.width, camera.height, mode)
    return img, stats


# ---------------------------------------------------------------------------
# metrics and PPM I/O

_SSIM_K1 = 0.01
_SSIM_K2 = 0.03


def _ssim_window() -> np.ndarray:
    x = np.arange(11.0) - 5.0
    k = np.exp(-(x * x) / (2.0 * 1.5 * 1.5))
    return k / k.sum()


def image_metrics(a: Image, b: Image) -> dict:
    """PSNR (capped at 99 dB) and mean SSIM (11-tap window, K1/K2 standard)."""
    if (a.width, a.height) != (b.width, b.height):
        raise ParameterError(f"image sizes differ: {a.width}x{a.height} vs {b.width}x{b.height}")
    pa = a.pixels
    pb = b.pixels
    mse = float(np.mean((pa - pb) ** 2))
    psnr = 99.0 if mse == 0.0 else min(99.0, 10.0 * math.log10(1.0 / mse))
    k = _ssim_window()
    c1 = _SSIM_K1 * _SSIM_K1
    c2 = _SSIM_K2 * _SSIM_K2

    def smooth(img: np.ndarray) -> np.ndarray:
        tmp = ndimage.correlate1d(img, k, axis=0, mode="reflect")
        return ndimage.correlate1d(tmp, k, axis=1, mode="reflect")

    ssim_sum = 0.0
    for ch in range(3):
        x = pa[:, :, ch]
        y = pb[:, :, ch]
        mx = smooth(x)
        my = smooth(y)
        vx = smooth(x * x) - mx * mx
        vy = smooth(y * y) - my * my
        cxy = smooth(x * y) - mx * my
        num = (2.0 * mx * my + c1) * (2.0 * cxy + c2)
        den = (mx * mx + my * my + c1) * (vx + vy + c2)
        ssim_sum += float(np.mean(num / den))
    return {"psnr": psnr, "ssim": ssim_sum / 3.0}


def write_image(img: Image, path: str) -> None:
    data = np.rint(np.clip(img.pixels, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{img.width} {img.height}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_image(path: str) -> Image:
    with open(path, "rb") as fh:
        data = fh.read()

    pos = 0

    def token() -> bytes:
        nonlocal pos
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            return token()
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError(f"{path}: truncated header")
        return data[start:pos]

    if token() != b"P6":
        raise ImageFormatError(f"{path}: not a binary PPM (P6) file")
    try:
        width = int(token())
        height = int(token())
        maxval = int(token())
    except ValueError as exc:
        raise ImageFormatError(f"{path}: malformed header") from exc
    if maxval != 255:
        raise ImageFormatError(f"{path}: unsupported maxval {maxval}")
    pos += 1  # single whitespace byte separates header from pixel data
    need = width * height * 3
    raw = data[pos : pos + need]
    if len(raw) != need:
        raise ImageFormatError(f"{path}: expected {need} pixel bytes, found {len(raw)}")
    pixels = np.frombuffer(raw, dtype=np.uint8).astype(np.float64).reshape(height, width, 3) / 255.0
    return Image(width, height, pixels)

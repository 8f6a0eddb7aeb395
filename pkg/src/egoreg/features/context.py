"""Covariance region descriptors around keypoints.

Each keypoint gets a context vector summarizing the appearance of a square
region around it: local descriptors are sampled on a dense grid inside the
region, their sample covariance (made symmetric positive definite by a small
trace-scaled ridge) is mapped through the matrix logarithm, and the
log-matrix is half-vectorized with sqrt(2)-weighted off-diagonals. That
weighting makes the Euclidean norm of the vector equal the Frobenius norm
of the log-matrix, so vector distances reproduce the log-Euclidean metric
between covariance matrices exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from ..errors import NotPositiveDefinite, RoiTooSmall, TooFewSamples
from .detector import finalize_descriptor
from .image import GradientField, GrayImage
from .keypoint import DESCRIPTOR_DIM, Keypoint

PATCH = 16
MIN_ROI_SIDE = PATCH
RIDGE_SCALE = 1e-6
RIDGE_FLOOR = 1e-12


@dataclass(frozen=True)
class ContextConfig:
    """Region-of-interest sizing and sampling for context extraction.

    The region side is epsilon * roi_base * scale_factor times the keypoint
    scale; scale_factor is the sweep knob and leaves the default geometry
    unchanged at 1.0.
    """

    epsilon: float = 6.0
    roi_base: float = 4.0
    scale_factor: float = 1.0
    stride: int = 4


@dataclass(frozen=True)
class Roi:
    """An axis-aligned square pixel region, fully inside its image."""

    left: int
    top: int
    side: int

    @property
    def center(self) -> tuple[float, float]:
        return (self.left + self.side / 2.0, self.top + self.side / 2.0)


def context_roi(kp: Keypoint, epsilon: float, width: int, height: int,
                roi_base: float = 4.0, scale_factor: float = 1.0) -> Roi:
    """Square region centered on the keypoint, side proportional to its scale.

    The square is clamped to the image: first its side shrinks to the smaller
    image dimension if necessary, then it shifts inward so it fits entirely.
    Raises RoiTooSmall when the resulting side is under 16 px.
    """
    side = int(round(epsilon * roi_base * scale_factor * kp.scale))
    side = min(side, width, height)
    if side < MIN_ROI_SIDE:
        raise RoiTooSmall(f"side {side} is under the {MIN_ROI_SIDE}px minimum")
    left = int(round(kp.pos.u - side / 2.0))
    top = int(round(kp.pos.v - side / 2.0))
    left = min(max(left, 0), width - side)
    top = min(max(top, 0), height - side)
    return Roi(left, top, side)


def dense_descriptors(field: GradientField, roi: Roi, stride: int = 4) -> np.ndarray:
    """Descriptors on a dense grid inside the region, (n, 128) float64.

    Grid nodes are inset by half a patch from the region border and spaced
    by `stride`, giving ((side - 16) // stride + 1)^2 nodes. Each node's
    descriptor is the plain (unweighted) 4x4-cell orientation histogram of
    its fixed 16x16 pixel patch, normalized like any other descriptor.
    """
    if stride < 1:
        raise ValueError("stride must be at least 1")
    h, w = field.shape
    if roi.side < MIN_ROI_SIDE:
        raise RoiTooSmall(f"side {roi.side} is under the {MIN_ROI_SIDE}px minimum")
    if roi.left < 0 or roi.top < 0 or roi.left + roi.side > w or roi.top + roi.side > h:
        raise RoiTooSmall("region extends outside the image")

    n_axis = (roi.side - PATCH) // stride + 1
    xs = roi.left + PATCH // 2 + stride * np.arange(n_axis)
    ys = roi.top + PATCH // 2 + stride * np.arange(n_axis)

    cell = PATCH // 4
    cell_off = cell * np.arange(4)
    # top-left corner of each 4x4-cell window, per node and cell
    cx0 = (xs[:, None] - PATCH // 2) + cell_off[None, :]          # (nx, 4)
    cy0 = (ys[:, None] - PATCH // 2) + cell_off[None, :]          # (ny, 4)

    y0 = cy0[:, None, :, None, None]                               # ny,1,4,1,1
    y1 = y0 + cell
    x0 = cx0[None, :, None, :, None]                               # 1,nx,1,4,1
    x1 = x0 + cell
    sums = field.cell_sums(y0, y1, x0, x1)                         # ny,nx,4,4,1,8
    descs = sums.reshape(n_axis * n_axis, DESCRIPTOR_DIM)

    out = np.empty_like(descs)
    for i in range(descs.shape[0]):
        out[i] = finalize_descriptor(descs[i])
    return out


def covariance_descriptor(samples: np.ndarray) -> np.ndarray:
    """Regularized sample covariance of descriptor rows, (d, d) float64.

    Rows are lexicographically sorted before accumulation so the result is
    bitwise invariant to input permutation. The ridge added to the diagonal
    is 1e-6 * trace/d + 1e-12, which keeps the matrix positive definite even
    when there are fewer samples than dimensions.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("samples must be a 2D array")
    n, d = x.shape
    if n < 2:
        raise TooFewSamples(f"need at least 2 samples, got {n}")
    order = np.lexsort(x.T[::-1])
    x = x[order]
    m = x.mean(axis=0)
    xc = x - m
    c = xc.T @ xc / (n - 1)
    c = (c + c.T) / 2.0
    ridge = RIDGE_SCALE * float(np.trace(c)) / d + RIDGE_FLOOR
    c[np.diag_indices(d)] += ridge
    return c


def log_euclidean_vec(c: np.ndarray) -> np.ndarray:
    """Half-vectorized matrix logarithm of an SPD matrix.

    Output is the upper triangle of log(C) in row-major order with
    off-diagonal entries scaled by sqrt(2), length d*(d+1)/2. With that
    scaling ||vec(log C1) - vec(log C2)|| equals ||log C1 - log C2||_F.
    Raises NotPositiveDefinite when C has a non-positive eigenvalue.
    """
    c = np.asarray(c, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValueError("input must be a square matrix")
    evals, evecs = sla.eigh(c)
    if evals[0] <= 0.0:
        raise NotPositiveDefinite(f"minimum eigenvalue {evals[0]:.6g}")
    logm = (evecs * np.log(evals)) @ evecs.T
    logm = (logm + logm.T) / 2.0
    d = c.shape[0]
    iu, ju = np.triu_indices(d)
    weights = np.where(iu == ju, 1.0, math.sqrt(2.0))
    return logm[iu, ju] * weights


def attach_context(image: GrayImage, kps: list[Keypoint],
                   cfg: ContextConfig = ContextConfig(),
                   field: GradientField | None = None) -> tuple[list[Keypoint], int]:
    """Attach a context vector to each keypoint.

    Keypoints whose region is too small or yields fewer than two grid
    samples are dropped silently; the second return value counts the drops.
    """
    if field is None:
        field = GradientField(image)
    out: list[Keypoint] = []
    dropped = 0
    for kp in kps:
        try:
            roi = context_roi(kp, cfg.epsilon, image.width, image.height,
                              roi_base=cfg.roi_base, scale_factor=cfg.scale_factor)
            descs = dense_descriptors(field, roi, cfg.stride)
            cov = covariance_descriptor(descs)
        except (RoiTooSmall, TooFewSamples):
            dropped += 1
            continue
        vec = log_euclidean_vec(cov).astype(np.float32)
        out.append(kp.with_context(vec))
    return out, dropped

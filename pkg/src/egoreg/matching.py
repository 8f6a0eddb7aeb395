"""Keypoint assignment between a query frame and model images.

Query and model keypoints are matched one-to-one in the joint embedding
space by minimum-cost bipartite assignment on squared embedded distances,
then filtered with a ratio test: an assignment survives only when its
embedded distance is clearly smaller than the distance to the query's
second-closest model point. A plain nearest-neighbor matcher on raw
descriptors is provided as a baseline; it keeps every query keypoint.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from scipy.optimize import linear_sum_assignment

from .embedding import (
    SINGLE_FRAME,
    SPATIO_TEMPORAL,
    KernelConfig,
    assemble_affinity,
    gaussian_kernel,
    median_sigma,
    solve_embedding,
    spatial_similarity,
    temporal_similarity,
)
from .errors import EmptyInput, RaggedTracks
from .features import Keypoint, contexts, descriptors, positions

THREADS_ENV = "EGOREG_THREADS"

MODE_NN = "nn"
MODE_SINGLE = "single"
MODE_SPATIAL = "sp"
MODE_SPATIO_TEMPORAL = "sptemp"
MODES = (MODE_NN, MODE_SINGLE, MODE_SPATIAL, MODE_SPATIO_TEMPORAL)


@dataclass(frozen=True)
class MatchPair:
    """One accepted query-to-model keypoint assignment."""

    query_idx: int
    model_idx: int
    embed_dist: float
    ratio: float


@dataclass(frozen=True)
class MatchConfig:
    mode: str = MODE_SPATIO_TEMPORAL
    ratio_threshold: float = 0.8
    temporal_window: int = 20
    kernel: KernelConfig = field(default_factory=KernelConfig)


def hungarian(cost: np.ndarray) -> list[tuple[int, int]]:
    """Minimum-total-cost one-to-one assignment on a rectangular matrix.

    Returns min(p, q) (row, column) pairs sorted by row. Requires finite,
    non-negative costs.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.size == 0:
        raise EmptyInput("cost matrix must be 2D and non-empty")
    if not np.all(np.isfinite(cost)) or cost.min() < 0.0:
        raise ValueError("costs must be finite and non-negative")
    rows, cols = linear_sum_assignment(cost)
    return sorted(zip(rows.tolist(), cols.tolist()))


def ratio_filter(assignment: list[tuple[int, int]], zq: np.ndarray, zm: np.ndarray,
                 threshold: float = 0.8) -> list[MatchPair]:
    """Keep assignments whose distance beats the runner-up by `threshold`.

    For each assigned query the runner-up distance is the second-smallest
    embedded distance to any model point; the pair survives only when
    embed_dist < threshold * runner-up. With a single model point there is
    no runner-up and the pair is kept with ratio 0.
    """
    zq = np.atleast_2d(zq)
    zm = np.atleast_2d(zm)
    q = zm.shape[0]
    out: list[MatchPair] = []
    for i, j in assignment:
        diff = zm - zq[i]
        dists = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        d = float(dists[j])
        if q == 1:
            out.append(MatchPair(i, j, d, 0.0))
            continue
        second = float(np.partition(dists, 1)[1])
        if d < threshold * second:
            out.append(MatchPair(i, j, d, d / second if second > 0.0 else 0.0))
    return out


def _resolve(sig: float | None, a: np.ndarray, b: np.ndarray | None = None) -> float:
    return median_sigma(a, b) if sig is None else sig


def _embed_and_assign(F: list[Keypoint], M: list[Keypoint], cfg: MatchConfig,
                      S: np.ndarray | None, G: np.ndarray | None,
                      mode: str) -> list[MatchPair]:
    dq, dm = descriptors(F), descriptors(M)
    cq, cm = contexts(F), contexts(M)
    P = gaussian_kernel(dq, dm, _resolve(cfg.kernel.sigma_f, dq, dm))
    R = gaussian_kernel(cq, cm, _resolve(cfg.kernel.sigma_c, cq, cm))
    aff = assemble_affinity(P, R, S, G, mode=mode)
    emb = solve_embedding(aff, cfg.kernel.embedding_dim)
    usable_m = ~emb.zero_degree[len(F):]
    if not np.all(usable_m):
        # zero-degree model rows sit at the origin; exclude them from costs
        raise EmptyInput("model keypoints disconnected from the graph")
    cost = np.maximum(
        np.einsum("ij,ij->i", emb.query, emb.query)[:, None]
        + np.einsum("ij,ij->i", emb.model, emb.model)[None, :]
        - 2.0 * emb.query @ emb.model.T,
        0.0,
    )
    assignment = hungarian(cost)
    return ratio_filter(assignment, emb.query, emb.model, cfg.ratio_threshold)


def match_single_frame(F: list[Keypoint], M: list[Keypoint],
                       cfg: MatchConfig = MatchConfig(mode=MODE_SINGLE)) -> list[MatchPair]:
    """Match one query frame against one model image, descriptors + contexts only."""
    if not F or not M:
        raise EmptyInput("both keypoint sets must be non-empty")
    return _embed_and_assign(F, M, cfg, None, None, SINGLE_FRAME)


def match_spatiotemporal(F: list[Keypoint], track_pos: np.ndarray, M: list[Keypoint],
                         cfg: MatchConfig = MatchConfig()) -> list[MatchPair]:
    """Match with query-side spatial and temporal structure.

    track_pos is (p, K+1, 2) chronological positions for each query
    keypoint, last entry the current frame; callers pass K = 0 tracks
    (current positions only) for spatial-only matching, which makes the
    temporal kernel all-ones. Untrackable keypoints must already be removed.
    """
    if not F or not M:
        raise EmptyInput("both keypoint sets must be non-empty")
    tp = np.asarray(track_pos, dtype=np.float64)
    if tp.ndim != 3 or tp.shape[0] != len(F) or tp.shape[2] != 2:
        raise RaggedTracks(
            f"expected ({len(F)}, K+1, 2) track positions, got {tp.shape}")
    S = spatial_similarity(positions(F), cfg.kernel.sigma_s)
    G = temporal_similarity(tp, cfg.kernel.sigma_g)
    return _embed_and_assign(F, M, cfg, S, G, SPATIO_TEMPORAL)


def match_nearest_neighbor(F: list[Keypoint], M: list[Keypoint]) -> list[MatchPair]:
    """Baseline: every query keypoint to its nearest model descriptor.

    No assignment constraint and no rejection; the recorded ratio is the
    informational first-to-second descriptor distance ratio.
    """
    if not F or not M:
        raise EmptyInput("both keypoint sets must be non-empty")
    dq, dm = descriptors(F), descriptors(M)
    d2 = np.maximum(
        np.einsum("ij,ij->i", dq, dq)[:, None]
        + np.einsum("ij,ij->i", dm, dm)[None, :]
        - 2.0 * dq @ dm.T,
        0.0,
    )
    d = np.sqrt(d2)
    out = []
    for i in range(d.shape[0]):
        j = int(np.argmin(d[i]))
        best = float(d[i, j])
        if d.shape[1] > 1:
            second = float(np.partition(d[i], 1)[1])
            ratio = best / second if second > 0.0 else 0.0
        else:
            ratio = 0.0
        out.append(MatchPair(i, j, best, ratio))
    return out


def _trivial_tracks(F: list[Keypoint]) -> np.ndarray:
    return positions(F).reshape(len(F), 1, 2)


def match_frame_to_shortlist(F: list[Keypoint], track_pos: np.ndarray | None,
                             shortlist: list, cfg: MatchConfig) -> dict[int, list[MatchPair]]:
    """Match one query frame against each shortlisted model image.

    `shortlist` holds objects with `id` and `keypoints` attributes. Images
    are processed independently (optionally in parallel, thread count from
    the EGOREG_THREADS environment variable) and results are keyed by model
    image id in shortlist order. An image that fails to match contributes
    an empty list rather than aborting the frame.
    """
    if cfg.mode not in MODES:
        raise ValueError(f"unknown match mode: {cfg.mode!r}")

    def run(img) -> list[MatchPair]:
        try:
            if cfg.mode == MODE_NN:
                return match_nearest_neighbor(F, img.keypoints)
            if cfg.mode == MODE_SINGLE:
                return match_single_frame(F, img.keypoints, cfg)
            tp = _trivial_tracks(F) if cfg.mode == MODE_SPATIAL or track_pos is None \
                else track_pos
            return match_spatiotemporal(F, tp, img.keypoints, cfg)
        except EmptyInput:
            return []

    workers = max(1, int(os.environ.get(THREADS_ENV, "1")))
    if workers == 1 or len(shortlist) <= 1:
        results = [run(img) for img in shortlist]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, shortlist))
    return {img.id: res for img, res in zip(shortlist, results)}

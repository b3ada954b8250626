#!/usr/bin/env python3
""" Seeded Random Walker instance differentiation: every inside pixel goes
to the center region a random walk from it most likely reaches first """

import logging
from typing import NamedTuple, Optional, Tuple

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import cg

from cvnuclei.decoding import CenterRegions, NoCenterRegionsError
from cvnuclei.raster import (
    check_binary_mask,
    check_same_shape,
    check_scalar_field,
    connected_components,
    Connectivity,
    nearest_labels,
)


# Edge weights are floored so strong contrast never disconnects the graph
MIN_EDGE_WEIGHT = 1e-10
PROBABILITY_TOLERANCE = 1e-6
# Solves keep iterating past cg_tolerance toward this relative residual so
# that probabilities land well inside PROBABILITY_TOLERANCE
REFINE_TOLERANCE = 1e-12
# Labels whose probabilities differ by less than this count as tied; it sits
# above the probability error left by a REFINE_TOLERANCE solve
TIE_TOLERANCE = 1e-7
LOG = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    pass


class RWParams(NamedTuple):
    beta: float = 130.0
    cg_tolerance: float = 1e-6
    cg_max_iters: int = 2000
    connectivity: Connectivity = Connectivity.FOUR

    def validate(self) -> "RWParams":
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if self.cg_tolerance <= 0:
            raise ValueError(f"cg_tolerance must be > 0, got {self.cg_tolerance}")
        if self.cg_max_iters < 1:
            raise ValueError(f"cg_max_iters must be >= 1, got {self.cg_max_iters}")
        return self


def _graph_edges(
    node_index: np.ndarray, conn: Connectivity
) -> Tuple[np.ndarray, np.ndarray]:
    """(u, v) node pairs of adjacent inside pixels, each edge once"""
    offsets = [(0, 1), (1, 0)]
    if conn is Connectivity.EIGHT:
        offsets += [(1, 1), (1, -1)]

    height, width = node_index.shape
    sources, targets = [], []
    for dr, dc in offsets:
        src = node_index[: height - dr, max(0, -dc) : width - max(0, dc)]
        dst = node_index[dr:, max(0, dc) : width - max(0, -dc)]
        both = (src >= 0) & (dst >= 0)
        sources.append(src[both])
        targets.append(dst[both])
    return np.concatenate(sources), np.concatenate(targets)


def build_laplacian(
    n_nodes: int, edges: Tuple[np.ndarray, np.ndarray], weights: np.ndarray
) -> sparse.csr_matrix:
    """L = D - W for an undirected weighted graph"""
    u, v = edges
    rows = np.concatenate([u, v])
    cols = np.concatenate([v, u])
    data = -np.concatenate([weights, weights])
    lap = sparse.coo_matrix((data, (rows, cols)), shape=(n_nodes, n_nodes)).tocsr()
    degree = -np.asarray(lap.sum(axis=1)).ravel()
    return (lap + sparse.diags(degree)).tocsr()


def conjugate_gradient(
    matrix: sparse.spmatrix,
    rhs: np.ndarray,
    tol: float,
    max_iters: int,
    target_tol: Optional[float] = None,
) -> Tuple[np.ndarray, int]:
    """Jacobi preconditioned CG for a sparse SPD system

    Iterates toward the relative residual `target_tol` (default `tol`) and
    only fails if the residual is still above `tol` after `max_iters`."""
    if not np.any(rhs):
        return np.zeros(rhs.shape, dtype=np.float64), 0

    iterations = 0

    def _count(_xk: np.ndarray) -> None:
        nonlocal iterations
        iterations += 1

    target = tol if target_tol is None else min(tol, target_tol)
    x, info = cg(
        matrix,
        rhs,
        rtol=target,
        atol=0.0,
        maxiter=max_iters,
        M=sparse.diags(1.0 / matrix.diagonal()),
        callback=_count,
    )
    if info < 0:
        raise ConvergenceError(f"Conjugate gradient broke down (info={info})")
    if info > 0:
        residual = float(np.linalg.norm(rhs - matrix @ x) / np.linalg.norm(rhs))
        if residual > tol:
            raise ConvergenceError(
                f"Conjugate gradient did not reach relative residual {tol} "
                + f"in {max_iters} iterations (got {residual:.3g})"
            )
        LOG.debug(f"CG stopped at relative residual {residual:.3g} short of {target}")
    return x, iterations


def _check_probabilities(node_probabilities: np.ndarray) -> None:
    """Every reachable node lies in [0, 1] and sums to 1 over the labels,
    both within PROBABILITY_TOLERANCE"""
    low, high = float(node_probabilities.min()), float(node_probabilities.max())
    if low < -PROBABILITY_TOLERANCE or high > 1.0 + PROBABILITY_TOLERANCE:
        raise ConvergenceError(
            f"Random walker probabilities outside [0, 1]: [{low}, {high}]"
        )
    drift = float(np.abs(node_probabilities.sum(axis=0) - 1.0).max())
    if drift > PROBABILITY_TOLERANCE:
        raise ConvergenceError(f"Random walker probabilities sum to 1 +- {drift}")


def random_walker_probabilities(
    inside: np.ndarray,
    regions: CenterRegions,
    guidance: np.ndarray,
    params: RWParams = RWParams(),
    complement_last: bool = True,
) -> np.ndarray:
    """Per-label arrival probabilities, shape (count, height, width)

    Pixels outside `inside` or cut off from every seed get probability 0 for
    all labels. Seeds are exactly 1 for their own label."""
    params.validate()
    check_same_shape(check_binary_mask(inside), regions.labels, guidance)
    check_scalar_field(guidance)
    count = regions.count
    probabilities = np.zeros((count,) + inside.shape, dtype=np.float64)
    if count == 0:
        return probabilities

    seeds = np.where(inside, regions.labels, 0)
    # Only components holding a seed give a nonsingular system
    components = connected_components(inside, params.connectivity)
    seeded = np.unique(components[seeds > 0])
    reachable = np.isin(components, seeded) & inside
    if not reachable.any():
        LOG.debug("No center region intersects the inside mask")
        return probabilities

    node_index = np.full(inside.shape, -1, dtype=np.int64)
    node_rows, node_cols = np.nonzero(reachable)
    node_index[node_rows, node_cols] = np.arange(node_rows.size)
    edges = _graph_edges(node_index, params.connectivity)
    g = guidance[node_rows, node_cols]
    contrast = (g[edges[0]] - g[edges[1]]) ** 2
    weights = np.maximum(np.exp(-params.beta * contrast), MIN_EDGE_WEIGHT)
    lap = build_laplacian(node_rows.size, edges, weights)

    node_seeds = seeds[node_rows, node_cols]
    unseeded = np.flatnonzero(node_seeds == 0)
    seeded_nodes = np.flatnonzero(node_seeds > 0)
    lap_unseeded = lap[unseeded][:, unseeded].tocsr()
    # L_U x = -B m, with B the unseeded-to-seeded block of L
    coupling = -lap[unseeded][:, seeded_nodes]

    solved_labels = count - 1 if complement_last else count
    node_probabilities = np.zeros((count, node_rows.size), dtype=np.float64)
    for label in range(1, count + 1):
        node_probabilities[label - 1, seeded_nodes] = node_seeds[seeded_nodes] == label
    for label in range(1, solved_labels + 1):
        rhs = coupling @ (node_seeds[seeded_nodes] == label).astype(np.float64)
        x, iterations = (
            conjugate_gradient(
                lap_unseeded,
                rhs,
                params.cg_tolerance,
                params.cg_max_iters,
                target_tol=REFINE_TOLERANCE,
            )
            if unseeded.size
            else (np.zeros(0), 0)
        )
        LOG.debug(f"Label {label}: CG converged in {iterations} iterations")
        node_probabilities[label - 1, unseeded] = x
    if complement_last:
        node_probabilities[count - 1, unseeded] = 1.0 - node_probabilities[
            : count - 1, unseeded
        ].sum(axis=0)

    _check_probabilities(node_probabilities)
    probabilities[:, node_rows, node_cols] = node_probabilities
    return probabilities


def random_walker_segment(
    inside: np.ndarray,
    regions: CenterRegions,
    guidance: np.ndarray,
    params: RWParams = RWParams(),
) -> np.ndarray:
    check_binary_mask(inside)
    instances = np.zeros(inside.shape, dtype=np.int64)
    if not inside.any():
        return instances
    if regions.count == 0:
        raise NoCenterRegionsError("Random walker needs at least one center region")

    probabilities = random_walker_probabilities(inside, regions, guidance, params)
    inside_probabilities = probabilities[:, inside]
    # argmax keeps the first near-maximum, so ties go to the smaller label
    near_best = inside_probabilities >= inside_probabilities.max(axis=0) - TIE_TOLERANCE
    instances[inside] = np.argmax(near_best, axis=0) + 1
    seeds = inside & (regions.labels > 0)
    instances[seeds] = regions.labels[seeds]

    unreached = inside & (probabilities.sum(axis=0) == 0)
    if unreached.any():
        LOG.debug(f"{int(unreached.sum())} pixels cannot reach a seed")
        points = np.stack(np.nonzero(unreached), axis=1)
        instances[unreached] = nearest_labels(points, regions.labels)
    return instances

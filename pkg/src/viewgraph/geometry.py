"""View graph on the unit sphere: camera directions, edge lengths, spatial similarity.

A shape is observed from ``V`` viewpoints on the unit sphere. The viewpoints
form the nodes of a fully connected graph; each edge carries a similarity
``exp(-sigma * E)`` where ``E = 0.5 * (1 - cos(theta))`` normalizes the arc
length between the two viewpoints into [0, 1]. ``sigma`` controls how fast
the similarity decays with the edge length; ``sigma = 0`` makes every pair
equally similar, which disables the spatial weighting downstream.
"""

import math
from dataclasses import dataclass

import numpy as np

# Directions within this distance of unit norm are renormalized on ingestion;
# beyond it they are rejected. Chosen to survive a round trip through 32-bit
# floats written by external feature extractors.
DIRECTION_NORM_TOL = 1e-6

_GOLDEN_RATIO = (1.0 + math.sqrt(5.0)) / 2.0

# Platonic vertex counts with a regular polyhedron inscribed in the sphere.
PLATONIC_COUNTS = (4, 6, 8, 12, 20)


@dataclass(frozen=True)
class ViewGraph:
    """Immutable view graph: unit directions plus the pairwise similarity matrix.

    Attributes:
        directions: (V, 3) array, each row exactly unit norm.
        similarity: (V, V) symmetric matrix with unit diagonal, entries in (0, 1].
        sigma: decay parameter used to build ``similarity``.
    """

    directions: np.ndarray
    similarity: np.ndarray
    sigma: float

    @property
    def num_views(self) -> int:
        return self.directions.shape[0]


def _tetrahedron() -> np.ndarray:
    v = np.array(
        [[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=np.float64
    )
    return v / math.sqrt(3.0)


def _octahedron() -> np.ndarray:
    return np.concatenate([np.eye(3), -np.eye(3)])


def _cube() -> np.ndarray:
    corners = [[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)]
    return np.array(corners, dtype=np.float64) / math.sqrt(3.0)


def _icosahedron() -> np.ndarray:
    p = _GOLDEN_RATIO
    base = []
    for a in (-1.0, 1.0):
        for b in (-p, p):
            base.append([0.0, a, b])
            base.append([a, b, 0.0])
            base.append([b, 0.0, a])
    v = np.array(base, dtype=np.float64)
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _dodecahedron() -> np.ndarray:
    p = _GOLDEN_RATIO
    q = 1.0 / p
    verts = [[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)]
    for a in (-q, q):
        for b in (-p, p):
            verts.append([0.0, a, b])
            verts.append([a, b, 0.0])
            verts.append([b, 0.0, a])
    v = np.array(verts, dtype=np.float64)
    return v / np.linalg.norm(v, axis=1, keepdims=True)


_PLATONIC_BUILDERS = {
    4: _tetrahedron,
    6: _octahedron,
    8: _cube,
    12: _icosahedron,
    20: _dodecahedron,
}


def fibonacci_sphere(count: int) -> np.ndarray:
    """Spiral lattice of ``count`` near-uniform unit vectors (golden-angle spacing)."""
    if count < 1:
        raise ValueError(f"need at least one point, got {count}")
    n = np.arange(count, dtype=np.float64)
    z = 1.0 - (2.0 * n + 1.0) / count
    r = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    phi = math.pi * (3.0 - math.sqrt(5.0)) * n
    points = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    return points / np.linalg.norm(points, axis=1, keepdims=True)


def default_viewpoints(num_views: int) -> np.ndarray:
    """Deterministic camera rig of ``num_views`` unit vectors.

    For 4, 6, 8, 12 or 20 views, the vertex set of the corresponding regular
    polyhedron inscribed in the unit sphere; any other count >= 2 falls back
    to a Fibonacci spiral lattice. Rows are sorted lexicographically by
    (x, y, z) so the ordering is reproducible.

    Raises:
        ValueError: if ``num_views < 2``.
    """
    if num_views < 2:
        raise ValueError(f"need at least 2 viewpoints, got {num_views}")
    if num_views in _PLATONIC_BUILDERS:
        points = _PLATONIC_BUILDERS[num_views]()
    else:
        points = fibonacci_sphere(num_views)
    order = np.lexsort((points[:, 2], points[:, 1], points[:, 0]))
    return np.ascontiguousarray(points[order])


def _check_unit(vec: np.ndarray, name: str) -> np.ndarray:
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (3,):
        raise ValueError(f"{name} must be a 3-vector, got shape {vec.shape}")
    norm = np.linalg.norm(vec)
    if abs(norm - 1.0) > DIRECTION_NORM_TOL:
        raise ValueError(f"{name} is not unit norm (|v| = {norm:.9g})")
    return vec / norm


def edge_length(u: np.ndarray, w: np.ndarray) -> float:
    """Normalized edge length 0.5 * (1 - cos(theta)) between two unit directions.

    0 iff the directions coincide, 1 iff they are antipodal. Inputs must be
    unit norm within ``DIRECTION_NORM_TOL``.
    """
    u = _check_unit(u, "u")
    w = _check_unit(w, "w")
    return float(np.clip(0.5 * (1.0 - np.dot(u, w)), 0.0, 1.0))


def spatial_similarity(edge: float, sigma: float) -> float:
    """Similarity exp(-sigma * edge) of an edge length in [0, 1].

    Strictly decreasing in the edge length for sigma > 0 and exactly 1 at
    edge 0. ``sigma = 0`` returns 1 for every edge.
    """
    if not 0.0 <= edge <= 1.0:
        raise ValueError(f"edge length must lie in [0, 1], got {edge}")
    if sigma < 0.0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    return float(math.exp(-sigma * edge))


def build_view_graph(directions: np.ndarray, sigma: float) -> ViewGraph:
    """Build the fully connected view graph for a set of unit directions.

    Directions within ``DIRECTION_NORM_TOL`` of unit norm are renormalized;
    anything further off is rejected. The similarity matrix is symmetric by
    construction with an exactly-unit diagonal (the self-pair has edge
    length zero and is kept: downstream cumulative sums include it).
    """
    directions = np.asarray(directions, dtype=np.float64)
    if directions.ndim != 2 or directions.shape[1] != 3:
        raise ValueError(f"directions must be (V, 3), got shape {directions.shape}")
    if directions.shape[0] < 1:
        raise ValueError("need at least one direction")
    if sigma < 0.0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    with np.errstate(over="ignore", invalid="ignore"):
        norms = np.linalg.norm(directions, axis=1)
    off = np.abs(norms - 1.0)
    # not-all-within rather than any-outside, so NaN norms are rejected too
    if not np.all(off <= DIRECTION_NORM_TOL):
        bad = int(np.argmax(np.where(np.isnan(off), np.inf, off)))
        raise ValueError(
            f"direction {bad} is not unit norm (|v| = {norms[bad]:.9g})"
        )
    unit = directions / norms[:, None]

    cos = np.clip(unit @ unit.T, -1.0, 1.0)
    edges = np.clip(0.5 * (1.0 - cos), 0.0, 1.0)
    np.fill_diagonal(edges, 0.0)
    sim = np.exp(-sigma * edges)
    # Mirror the upper triangle so symmetry holds bit-for-bit.
    sim = np.triu(sim) + np.triu(sim, 1).T
    np.fill_diagonal(sim, 1.0)

    out = ViewGraph(directions=unit, similarity=sim, sigma=float(sigma))
    out.directions.setflags(write=False)
    out.similarity.setflags(write=False)
    return out

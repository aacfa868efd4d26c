"""Simplicial meshes (1D intervals, 2D structured triangulations) with facet data."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument


@dataclass(frozen=True)
class Mesh:
    """Immutable simplicial mesh.

    Interior facet ``F`` joins ``interior_elements[F, 0]`` and
    ``interior_elements[F, 1]``; ``interior_normals[F]`` points out of the
    first one.  Boundary facet normals point out of the domain.
    """

    dim: int
    vertices: np.ndarray  # (nv, dim)
    cells: np.ndarray  # (nel, dim + 1) vertex ids, counter-clockwise in 2D
    diameters: np.ndarray  # h_K
    measures: np.ndarray  # |K|
    inradii: np.ndarray
    interior_elements: np.ndarray  # (nfi, 2)
    interior_normals: np.ndarray  # (nfi, dim)
    interior_facets: np.ndarray  # (nfi, dim) vertex ids
    interior_measures: np.ndarray
    boundary_elements: np.ndarray  # (nfb,)
    boundary_normals: np.ndarray  # (nfb, dim)
    boundary_facets: np.ndarray  # (nfb, dim) vertex ids
    boundary_measures: np.ndarray
    eta: float
    lower: tuple
    upper: tuple

    @property
    def n_elements(self) -> int:
        return self.cells.shape[0]

    @property
    def n_interior(self) -> int:
        return self.interior_elements.shape[0]

    @property
    def n_boundary(self) -> int:
        return self.boundary_elements.shape[0]

    @property
    def h(self) -> float:
        """Global mesh size max h_K."""
        return float(self.diameters.max())

    @property
    def facet_size(self) -> np.ndarray:
        """𝗁_F = η⁻¹ min(h_K1, h_K2) on interior facets."""
        hk = self.diameters[self.interior_elements]
        return hk.min(axis=1) / self.eta

    @property
    def shape_regularity(self) -> float:
        """Υ = min_K ϱ_K / h_K."""
        return float((self.inradii / self.diameters).min())

    @property
    def domain_measure(self) -> float:
        return float(np.prod(np.asarray(self.upper) - np.asarray(self.lower)))

    def element_vertices(self) -> np.ndarray:
        """Vertex coordinates per element, shape (nel, dim + 1, dim)."""
        return self.vertices[self.cells]

    def summary(self) -> str:
        lines = [
            f"dim={self.dim}",
            f"elements={self.n_elements}",
            f"interior_facets={self.n_interior}",
            f"boundary_facets={self.n_boundary}",
            f"h={self.h:.6g}",
            f"upsilon={self.shape_regularity:.6g}",
            f"eta={self.eta:.6g}",
        ]
        return "\n".join(lines)


def build_interval_mesh(a: float, b: float, M: int, eta: float = 1.0) -> Mesh:
    """Uniform partition of (a, b) into ``M`` elements."""
    if not (isinstance(M, (int, np.integer)) and M >= 1):
        raise InvalidArgument(f"element count must be a positive integer, got {M!r}")
    if not a < b:
        raise InvalidArgument(f"need a < b, got a={a}, b={b}")
    if eta <= 0:
        raise InvalidArgument("eta must be positive")
    x = np.linspace(a, b, M + 1)
    vertices = x[:, None]
    cells = np.stack([np.arange(M), np.arange(1, M + 1)], axis=1)
    lengths = np.diff(x)
    ids = np.arange(1, M)
    return Mesh(
        dim=1,
        vertices=vertices,
        cells=cells,
        diameters=lengths,
        measures=lengths.copy(),
        inradii=lengths / 2.0,
        interior_elements=np.stack([ids - 1, ids], axis=1),
        interior_normals=np.ones((M - 1, 1)),
        interior_facets=ids[:, None],
        interior_measures=np.ones(M - 1),
        boundary_elements=np.array([0, M - 1]),
        boundary_normals=np.array([[-1.0], [1.0]]),
        boundary_facets=np.array([[0], [M]]),
        boundary_measures=np.ones(2),
        eta=float(eta),
        lower=(float(a),),
        upper=(float(b),),
    )


def build_structured_tri_mesh(
    nx: int, ny: int, box=((0.0, 0.0), (1.0, 1.0)), eta: float = 1.0
) -> Mesh:
    """Split each cell of an ``nx`` by ``ny`` grid along its bottom-left to top-right diagonal."""
    for n in (nx, ny):
        if not (isinstance(n, (int, np.integer)) and n >= 1):
            raise InvalidArgument(f"cell counts must be positive integers, got {nx!r}, {ny!r}")
    (x0, y0), (x1, y1) = box
    if not (x0 < x1 and y0 < y1):
        raise InvalidArgument(f"degenerate box {box!r}")
    if eta <= 0:
        raise InvalidArgument("eta must be positive")

    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.stack([X.ravel(), Y.ravel()], axis=1)

    def vid(i, j):
        return j * (nx + 1) + i

    cells = []
    for j in range(ny):
        for i in range(nx):
            v00, v10, v01, v11 = vid(i, j), vid(i + 1, j), vid(i, j + 1), vid(i + 1, j + 1)
            cells.append((v00, v10, v11))
            cells.append((v00, v11, v01))
    cells = np.array(cells, dtype=np.int64)

    P = vertices[cells]
    e = np.stack([P[:, 1] - P[:, 0], P[:, 2] - P[:, 1], P[:, 0] - P[:, 2]], axis=1)
    edge_len = np.linalg.norm(e, axis=2)
    area = 0.5 * np.abs(e[:, 0, 0] * (-e[:, 2, 1]) - e[:, 0, 1] * (-e[:, 2, 0]))

    seen: dict[tuple[int, int], int] = {}
    owners: list[list[int]] = []
    normals: list[np.ndarray] = []
    fverts: list[tuple[int, int]] = []
    flen: list[float] = []
    for k, c in enumerate(cells):
        for loc in range(3):
            a, b = int(c[loc]), int(c[(loc + 1) % 3])
            key = (min(a, b), max(a, b))
            if key in seen:
                owners[seen[key]].append(k)
                continue
            seen[key] = len(owners)
            owners.append([k])
            d = vertices[b] - vertices[a]
            L = float(np.hypot(d[0], d[1]))
            normals.append(np.array([d[1], -d[0]]) / L)
            fverts.append((a, b))
            flen.append(L)

    inter = [f for f, o in enumerate(owners) if len(o) == 2]
    bnd = [f for f, o in enumerate(owners) if len(o) == 1]
    normals = np.array(normals)
    fverts = np.array(fverts, dtype=np.int64)
    flen = np.array(flen)

    return Mesh(
        dim=2,
        vertices=vertices,
        cells=cells,
        diameters=edge_len.max(axis=1),
        measures=area,
        inradii=2.0 * area / edge_len.sum(axis=1),
        interior_elements=np.array([owners[f] for f in inter], dtype=np.int64).reshape(-1, 2),
        interior_normals=normals[inter].reshape(-1, 2),
        interior_facets=fverts[inter].reshape(-1, 2),
        interior_measures=flen[inter],
        boundary_elements=np.array([owners[f][0] for f in bnd], dtype=np.int64),
        boundary_normals=normals[bnd],
        boundary_facets=fverts[bnd],
        boundary_measures=flen[bnd],
        eta=float(eta),
        lower=(float(x0), float(y0)),
        upper=(float(x1), float(y1)),
    )


@dataclass(frozen=True)
class FluxOrientation:
    """Per interior facet: first/second element, normal out of the first, weight α_F."""

    rule: str
    first: np.ndarray
    second: np.ndarray
    normals: np.ndarray
    alpha: np.ndarray


def orient_facets(mesh: Mesh, rule: str = "directional", alpha: float = 1.0) -> FluxOrientation:
    """Choose K1, n_F and α_F on every interior facet.

    ``standard`` keeps the mesh ordering (K1 has the smaller id) with the given
    α.  ``directional`` forces α_F = 1; in 1D it sets n_F = +1, in 2D it picks
    K1 with (1,1)·n_K1 ≤ 0, ties going to the smaller element id.
    """
    if not 0.0 <= alpha <= 1.0:
        raise InvalidArgument(f"alpha must lie in [0, 1], got {alpha}")
    k = mesh.interior_elements
    n = mesh.interior_normals
    nfi = k.shape[0]
    if rule == "standard":
        return FluxOrientation(rule, k[:, 0].copy(), k[:, 1].copy(), n.copy(), np.full(nfi, float(alpha)))
    if rule != "directional":
        raise InvalidArgument(f"unknown orientation rule {rule!r}")
    # n points out of k[:, 0], so -n is the outward normal of k[:, 1]
    # 1D: n_F = +1 (K1 is the left element); 2D: (1,1)·n_K1 ≤ 0
    s = -n[:, 0] if mesh.dim == 1 else n.sum(axis=1)
    tol = 1e-12
    keep = s < -tol
    flip = s > tol
    tie = ~(keep | flip)
    flip = flip | (tie & (k[:, 1] < k[:, 0]))
    first = np.where(flip, k[:, 1], k[:, 0])
    second = np.where(flip, k[:, 0], k[:, 1])
    normals = np.where(flip[:, None], -n, n)
    return FluxOrientation(rule, first, second, normals, np.ones(nfi))

"""Post-alignment statistics: symmetrized distances, Ward clustering and
two-sample t-fields on spatial grids."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage


class DistanceError(ValueError):
    """Invalid distance input."""


def symmetrize_distances(forward: float, backward: float) -> float:
    """Geometric mean of the two directed distances."""
    if forward < 0 or backward < 0:
        raise DistanceError("distances must be nonnegative")
    return float(np.sqrt(forward * backward))


@dataclass(eq=False)
class DistanceMatrix:
    """Symmetric nonnegative matrix with zero diagonal."""

    values: np.ndarray
    kind: str = "map"
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise DistanceError("distance matrix must be square")
        if not np.allclose(v, v.T, atol=1e-12):
            raise DistanceError("distance matrix must be symmetric")
        if np.any(np.diag(v) != 0):
            raise DistanceError("diagonal must be zero")
        if np.any(v < 0):
            raise DistanceError("distances must be nonnegative")
        self.values = v
        if self.labels is None:
            self.labels = tuple(str(i) for i in range(v.shape[0]))
        else:
            self.labels = tuple(self.labels)
            if len(self.labels) != v.shape[0]:
                raise DistanceError("label count must match matrix size")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def save(self, path, header_lines=()):
        with open(path, "w") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            fh.write("\t".join(self.labels) + "\n")
            for row in self.values:
                fh.write("\t".join(repr(float(x)) for x in row) + "\n")

    @classmethod
    def load(cls, path, kind: str = "map") -> "DistanceMatrix":
        with open(path) as fh:
            body = [line for line in fh if line.strip() and not line.startswith("#")]
        labels = body[0].split()
        rows = [[float(x) for x in line.split()] for line in body[1:]]
        return cls(np.array(rows), kind=kind, labels=labels)


@dataclass(eq=False)
class WardDendrogram:
    """Agglomerative merge table in linkage-matrix layout.

    Each row holds (cluster index i, cluster index j, merge height, new
    cluster size); original observations are clusters 0..n-1 and the merge
    in row r creates cluster n + r.
    """

    merges: np.ndarray
    labels: tuple[str, ...]

    @property
    def heights(self) -> np.ndarray:
        return self.merges[:, 2]

    def to_newick(self) -> str:
        n = len(self.labels)
        height = {i: 0.0 for i in range(n)}
        text = {i: self.labels[i] for i in range(n)}
        for r, (a, b, h, _size) in enumerate(self.merges):
            a, b = int(a), int(b)
            node = n + r
            la = h - height[a]
            lb = h - height[b]
            text[node] = f"({text[a]}:{la:.10g},{text[b]}:{lb:.10g})"
            height[node] = h
        return text[n + len(self.merges) - 1] + ";"

    def save(self, path, header_lines=()):
        with open(path, "w") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            fh.write("cluster_i\tcluster_j\theight\tsize\n")
            for a, b, h, size in self.merges:
                fh.write(f"{int(a)}\t{int(b)}\t{repr(float(h))}\t{int(size)}\n")


def ward_cluster(distances) -> WardDendrogram:
    """Agglomerative clustering by Ward's minimum-variance criterion.

    Uses the Lance-Williams distance update
    d(k, i+j) = sqrt[((n_i + n_k) d_ki^2 + (n_j + n_k) d_kj^2
                      - n_k d_ij^2) / (n_i + n_j + n_k)],
    merging the closest active pair at every step (ties broken by lowest
    indices).  Heights are checked to be non-decreasing.
    """
    if isinstance(distances, DistanceMatrix):
        labels = distances.labels
        d = distances.values.copy()
    else:
        d = np.asarray(distances, dtype=float).copy()
        labels = tuple(str(i) for i in range(d.shape[0]))
        DistanceMatrix(d)  # validate
    n = d.shape[0]
    if n < 2:
        raise DistanceError("clustering needs at least two items")
    sizes = {i: 1 for i in range(n)}
    ids = list(range(n))  # active cluster ids; position-aligned with d
    work = d
    merges = np.zeros((n - 1, 4))
    last_height = 0.0
    for step in range(n - 1):
        k = len(ids)
        best = None
        for p in range(k - 1):
            for q in range(p + 1, k):
                if best is None or work[p, q] < best[0]:
                    best = (work[p, q], p, q)
        h, p, q = best
        if h < last_height - 1e-12:
            raise AssertionError("Ward merge heights must be non-decreasing")
        last_height = max(last_height, h)
        ci, cj = ids[p], ids[q]
        ni, nj = sizes[ci], sizes[cj]
        new_id = n + step
        merges[step] = (min(ci, cj), max(ci, cj), h, ni + nj)
        # Lance-Williams update against every other active cluster
        new_row = np.zeros(k)
        for r in range(k):
            if r in (p, q):
                continue
            nk = sizes[ids[r]]
            num = (
                (ni + nk) * work[p, r] ** 2
                + (nj + nk) * work[q, r] ** 2
                - nk * h**2
            )
            new_row[r] = np.sqrt(max(num / (ni + nj + nk), 0.0))
        keep = [r for r in range(k) if r not in (p, q)]
        work = work[np.ix_(keep, keep)]
        row = new_row[keep]
        work = np.block(
            [[work, row[:, None]], [row[None, :], np.zeros((1, 1))]]
        )
        ids = [ids[r] for r in keep] + [new_id]
        sizes[new_id] = ni + nj
    return WardDendrogram(merges, labels)


@dataclass(frozen=True)
class GridSpec:
    """Regular grid: origin corner, uniform spacing and per-axis counts."""

    origin: tuple[float, ...]
    spacing: float
    shape: tuple[int, ...]

    def __post_init__(self):
        if self.spacing <= 0:
            raise ValueError("spacing must be positive")
        if any(c < 1 for c in self.shape):
            raise ValueError("grid shape entries must be positive")
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        object.__setattr__(self, "shape", tuple(int(v) for v in self.shape))
        if len(self.origin) != len(self.shape):
            raise ValueError("origin and shape dimensions differ")

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.shape))

    def nodes(self) -> np.ndarray:
        """All grid nodes, first axis fastest."""
        axes = [
            o + self.spacing * np.arange(c) for o, c in zip(self.origin, self.shape)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.column_stack([m.ravel(order="F") for m in mesh])

    @classmethod
    def covering(cls, coords, spacing: float, padding: float) -> "GridSpec":
        pts = np.atleast_2d(np.asarray(coords, dtype=float))
        lo = pts.min(axis=0) - padding
        hi = pts.max(axis=0) + padding
        counts = np.floor((hi - lo) / spacing).astype(int) + 1
        return cls(tuple(lo), spacing, tuple(int(c) for c in counts))


@dataclass(eq=False)
class TFieldGrid:
    """Two-sample t statistic at every grid node."""

    grid: GridSpec
    t: np.ndarray  # shaped grid.shape
    offset: float
    n_a: int
    n_b: int

    def flat(self) -> np.ndarray:
        """Node values with the first axis fastest."""
        return self.t.ravel(order="F")

    def save(self, path, header_lines=()):
        with open(path, "w") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            fh.write(f"# origin: {' '.join(repr(v) for v in self.grid.origin)}\n")
            fh.write(f"# spacing: {self.grid.spacing!r}\n")
            fh.write(f"# shape: {' '.join(str(v) for v in self.grid.shape)}\n")
            fh.write(f"# offset: {self.offset!r}\n")
            fh.write(f"# groups: {self.n_a} {self.n_b}\n")
            for v in self.flat():
                fh.write(repr(float(v)) + "\n")


def _field_values(fields, nodes: np.ndarray, normalized: bool) -> np.ndarray:
    rows = []
    for f in fields:
        vals = f.predict(nodes)
        if normalized:
            vals = vals / f.norm
        rows.append(vals)
    return np.vstack(rows)


def t_statistic(values_a: np.ndarray, values_b: np.ndarray, offset_d: float) -> np.ndarray:
    """Pointwise two-sample t from per-member evaluation matrices.

    values_a is (n_a, n_nodes), values_b is (n_b, n_nodes); the pooled
    variance gets the offset added before the square root.
    """
    n_a, n_b = values_a.shape[0], values_b.shape[0]
    if n_a < 2 or n_b < 2:
        raise ValueError("each group needs at least two member fields")
    mean_a = values_a.mean(axis=0)
    mean_b = values_b.mean(axis=0)
    pooled = (
        (n_a - 1) * values_a.var(axis=0, ddof=1)
        + (n_b - 1) * values_b.var(axis=0, ddof=1)
    ) / (n_a + n_b - 2)
    return (mean_a - mean_b) / (
        np.sqrt(pooled + offset_d) * np.sqrt(1.0 / n_a + 1.0 / n_b)
    )


def t_field(
    group_fields_a,
    group_fields_b,
    grid: GridSpec,
    offset_d: float = 0.001,
    normalized: bool = True,
    chunk: int = 200_000,
) -> TFieldGrid:
    """Pointwise two-sample t statistic between two groups of fields.

    At each node the member fields are evaluated (normalized to unit RKHS
    norm by default), group means and the standard pooled variance are
    formed, the offset is added to the pooled variance, and
    t = (mean_a - mean_b) / (s*_pool sqrt(1/n_a + 1/n_b)).
    """
    n_a, n_b = len(group_fields_a), len(group_fields_b)
    if n_a < 2 or n_b < 2:
        raise ValueError("each group needs at least two member fields")
    if offset_d <= 0:
        raise ValueError("the variance offset must be positive")
    nodes = grid.nodes()
    out = np.empty(grid.n_nodes)
    for start in range(0, grid.n_nodes, chunk):
        block = nodes[start : start + chunk]
        va = _field_values(group_fields_a, block, normalized)
        vb = _field_values(group_fields_b, block, normalized)
        out[start : start + chunk] = t_statistic(va, vb, offset_d)
    return TFieldGrid(
        grid, out.reshape(grid.shape, order="F"), offset_d, n_a, n_b
    )


@dataclass(frozen=True)
class ThresholdRegion:
    """One face-connected super-threshold component."""

    sign: int
    size: int
    index_min: tuple[int, ...]
    index_max: tuple[int, ...]

    def bounds(self, grid: GridSpec) -> tuple[tuple[float, ...], tuple[float, ...]]:
        lo = tuple(
            o + grid.spacing * i for o, i in zip(grid.origin, self.index_min)
        )
        hi = tuple(
            o + grid.spacing * i for o, i in zip(grid.origin, self.index_max)
        )
        return lo, hi


def threshold_regions(tfield: TFieldGrid, threshold: float) -> list[ThresholdRegion]:
    """Connected components (face adjacency) of |t| > threshold, separated
    by sign, largest first."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    ndim = tfield.t.ndim
    structure = ndimage.generate_binary_structure(ndim, 1)
    regions = []
    for sign, mask in ((1, tfield.t > threshold), (-1, tfield.t < -threshold)):
        labeled, n = ndimage.label(mask, structure=structure)
        for comp in range(1, n + 1):
            idx = np.argwhere(labeled == comp)
            regions.append(
                ThresholdRegion(
                    sign=sign,
                    size=idx.shape[0],
                    index_min=tuple(int(v) for v in idx.min(axis=0)),
                    index_max=tuple(int(v) for v in idx.max(axis=0)),
                )
            )
    regions.sort(key=lambda r: (-r.size, r.sign, r.index_min))
    return regions


def write_regions(path, regions: list[ThresholdRegion], grid: GridSpec, header_lines=()):
    with open(path, "w") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write("sign\tsize\tindex_min\tindex_max\tworld_min\tworld_max\n")
        for r in regions:
            lo, hi = r.bounds(grid)
            fh.write(
                f"{r.sign}\t{r.size}\t"
                f"{','.join(map(str, r.index_min))}\t{','.join(map(str, r.index_max))}\t"
                f"{','.join(repr(v) for v in lo)}\t{','.join(repr(v) for v in hi)}\n"
            )

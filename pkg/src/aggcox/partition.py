"""Cell partitions: multi-way region intersections within each grid cell.

For every cell the partition stores the disjoint pieces induced by the
regions overlapping it, keyed by membership signature (a sorted tuple of
region indices). Only nonempty signatures are kept; disconnected pieces
sharing a signature are aggregated, since only total area enters the
allocation probabilities.

Per-(region, cell) intersection areas are computed with the clipping
kernels; the within-cell refinement for cells overlapped by two or more
regions uses shapely boolean operations. The partition invariants (element
areas summing to the cell area; signature sums matching the pairwise
areas) therefore cross-check the two geometry routes.
"""

import numpy as np
from shapely.geometry import box
from shapely.prepared import prep

from . import kernels
from .errors import GeometryError

# vertices this close to a cell edge are snapped onto it before clipping
DEFAULT_SNAP = 1e-12


class CellPartition:
    """Partition structure for one (grid, regions) pair.

    Attributes
    ----------
    grid, regions : the inputs the partition was built from.
    elements : list over cells; each entry is a list of (signature, area)
        with signature a sorted tuple of region indices.
    residual : (n_cells,) area covered by no region.
    region_cells : list over regions of (cell_indices, areas) arrays, the
        nonzero |A_i ∩ C_j|.
    """

    def __init__(self, grid, regions, elements, residual, region_cells):
        self.grid = grid
        self.regions = regions
        self.elements = elements
        self.residual = residual
        self.region_cells = region_cells

    @property
    def n_regions(self):
        return len(self.regions)

    def coverage(self):
        """Fraction of each cell covered by at least one region."""
        return 1.0 - self.residual / self.grid.cell_area

    def area_matrix(self):
        """Dense (n_regions, n_cells) matrix of |A_i ∩ C_j|."""
        out = np.zeros((self.n_regions, self.grid.n_cells))
        for i, (cells, areas) in enumerate(self.region_cells):
            out[i, cells] = areas
        return out

    def cells_of_region(self, i):
        return self.region_cells[i]

    def signature_areas(self, j):
        """List of (signature, area) for cell j."""
        return self.elements[j]


def intersect_region_cell(region, cell_bounds, snap=DEFAULT_SNAP):
    """Area of intersection between a region and an axis-aligned cell.

    Exact for polygonal inputs up to floating-point clipping tolerance.
    """
    x0, y0, x1, y1 = cell_bounds
    if not region.geometry.is_valid:
        raise GeometryError("invalid polygon", region.id)
    return kernels.rings_box_area(region.rings, x0, y0, x1, y1, snap)


def region_cell_areas(grid, regions, snap=DEFAULT_SNAP):
    """(n_regions, n_cells) matrix of |A_i ∩ C_j| via the clipping kernels."""
    out = np.zeros((len(regions), grid.n_cells))
    for i, region in enumerate(regions):
        acc = np.zeros(grid.n_cells)
        for ring in region.rings:
            kernels.ring_cell_areas(
                np.ascontiguousarray(ring, dtype=np.float64),
                grid.x0, grid.y0, grid.dx, grid.dy, grid.nx, grid.ny,
                snap, acc,
            )
        np.maximum(acc, 0.0, out=acc)
        out[i] = acc
    return out


def build_partition(grid, regions, snap=DEFAULT_SNAP):
    """Build the CellPartition of `grid` under `regions`.

    Cost is O(n_cells * n_regions) clip operations for the area matrix,
    then a per-cell refinement over only the locally intersecting regions.
    The result is immutable and reusable across Gibbs iterations while the
    regions stay fixed.
    """
    for region in regions:
        if not region.geometry.is_valid:
            raise GeometryError("invalid polygon", region.id)

    areas = region_cell_areas(grid, regions, snap)
    cell_area = grid.cell_area
    # treat areas below fp noise as empty so signatures stay stable
    tiny = cell_area * 1e-14
    areas[areas < tiny] = 0.0

    prepared = [prep(r.geometry) for r in regions]
    elements = []
    residual = np.empty(grid.n_cells)
    for j in range(grid.n_cells):
        hits = np.nonzero(areas[:, j] > 0.0)[0]
        cb = grid.cell_bounds(j)
        if hits.size == 0:
            elements.append([])
            residual[j] = cell_area
        elif hits.size == 1:
            i = int(hits[0])
            a = float(areas[i, j])
            elements.append([((i,), a)])
            residual[j] = max(cell_area - a, 0.0)
        else:
            elems = _refine_cell(cb, hits, regions, prepared, tiny)
            elements.append(elems)
            covered = sum(a for _, a in elems)
            residual[j] = max(cell_area - covered, 0.0)

    region_cells = []
    for i in range(len(regions)):
        cells = np.nonzero(areas[i] > 0.0)[0]
        region_cells.append((cells.astype(np.int64), areas[i, cells].copy()))

    return CellPartition(grid, regions, elements, residual, region_cells)


def _polygonal(geom):
    """Keep only the polygonal part of a boolean-op result."""
    if geom.is_empty or geom.geom_type in ("Polygon", "MultiPolygon"):
        return geom
    if geom.geom_type == "GeometryCollection":
        from shapely.ops import unary_union

        parts = [g for g in geom.geoms if g.geom_type in ("Polygon", "MultiPolygon")]
        if parts:
            return unary_union(parts)
    return box(0, 0, 0, 0).intersection(box(1, 1, 2, 2))  # empty polygon


def _refine_cell(cell_bounds, hits, regions, prepared, tiny):
    """Split one cell into signature pieces with shapely boolean ops."""
    cell = box(*cell_bounds)
    pieces = [((), cell)]
    for i in hits:
        i = int(i)
        geom = regions[i].geometry
        pgeom = prepared[i]
        nxt = []
        for sig, piece in pieces:
            if pgeom.contains_properly(piece):
                nxt.append((sig + (i,), piece))
                continue
            if pgeom.disjoint(piece):
                nxt.append((sig, piece))
                continue
            inside = _polygonal(piece.intersection(geom))
            outside = _polygonal(piece.difference(geom))
            if not inside.is_empty and inside.area > 0.0:
                nxt.append((sig + (i,), inside))
            if not outside.is_empty and outside.area > 0.0:
                nxt.append((sig, outside))
        pieces = nxt

    acc = {}
    for sig, piece in pieces:
        if not sig:
            continue
        a = piece.area
        if a > tiny:
            acc[sig] = acc.get(sig, 0.0) + a
    return sorted(acc.items())


def save_partition(part, path):
    """Flat-array serialisation of a partition (cacheable across runs)."""
    from .io import atomic_npz

    cell_idx, areas, offsets, sig_values = [], [], [0], []
    for j, elems in enumerate(part.elements):
        for sig, a in elems:
            cell_idx.append(j)
            areas.append(a)
            sig_values.extend(sig)
            offsets.append(len(sig_values))
    arrays = {
        "elem_cell": np.asarray(cell_idx, dtype=np.int64),
        "elem_area": np.asarray(areas, dtype=float),
        "sig_offsets": np.asarray(offsets, dtype=np.int64),
        "sig_values": np.asarray(sig_values, dtype=np.int64),
        "residual": part.residual,
        "n_regions": np.array([part.n_regions], dtype=np.int64),
    }
    for i, (cells, a) in enumerate(part.region_cells):
        arrays[f"rc_cells_{i}"] = np.asarray(cells, dtype=np.int64)
        arrays[f"rc_areas_{i}"] = np.asarray(a, dtype=float)
    atomic_npz(path, arrays)


def load_partition(path, grid, regions):
    """Rebuild a CellPartition saved by save_partition for the same inputs."""
    with np.load(path, allow_pickle=False) as z:
        arrays = {k: z[k] for k in z.files}
    m = int(arrays["n_regions"][0])
    if m != len(regions):
        raise GeometryError(f"cached partition has {m} regions, inputs have {len(regions)}")
    elements = [[] for _ in range(grid.n_cells)]
    offs = arrays["sig_offsets"]
    for k, j in enumerate(arrays["elem_cell"]):
        sig = tuple(int(v) for v in arrays["sig_values"][offs[k] : offs[k + 1]])
        elements[int(j)].append((sig, float(arrays["elem_area"][k])))
    region_cells = [(arrays[f"rc_cells_{i}"], arrays[f"rc_areas_{i}"]) for i in range(m)]
    return CellPartition(grid, regions, elements, arrays["residual"], region_cells)

"""Level-n cell graphs, wall graphs, face sets and vertex measures.

Vertices of the level-n graph are the N^n words in lexicographic order, so a
word is identified with its base-N integer index and prefix blocks are
contiguous index ranges.  All geometric predicates run on integer-scaled
corners (scale S = k^n * L with L the lcm of translation denominators), which
keeps graph construction exact and fast.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from fractions import Fraction
from math import lcm

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .geometry import (
    IfsSpec,
    Isometry,
    SpecError,
    Word,
    edge_threshold_constants,
    digit_map,
    format_rational,
    parse_rational,
)

CACHE_MAGIC = b"CGPH"
CACHE_VERSION = 2


class BudgetError(RuntimeError):
    """Vertex budget exceeded; retry with a smaller level or a larger budget."""


def word_index(word: Word, N: int) -> int:
    idx = 0
    for d in word:
        idx = idx * N + d
    return idx


def index_word(idx: int, n: int, N: int) -> Word:
    digits = []
    for _ in range(n):
        digits.append(idx % N)
        idx //= N
    return tuple(reversed(digits))


def _digit_arrays(n: int, N: int, count: int) -> list[np.ndarray]:
    """digit_arrays[j][i] = j-th digit of word i (vectorized base-N expansion)."""
    idx = np.arange(count, dtype=np.int64)
    out = []
    for j in range(n):
        out.append((idx // N ** (n - 1 - j)) % N)
    return out


@dataclass
class CellGraph:
    """Immutable level-n cell graph with face sets and contact metadata."""

    spec: IfsSpec
    n: int
    indptr: np.ndarray
    indices: np.ndarray
    corners: np.ndarray  # (V, 3) int64, scaled by self.scale
    scale: int  # corners are corner * scale, cell side is side_scaled
    side_scaled: int
    grid_word: np.ndarray  # bool: every digit touches the cube boundary
    threshold: Fraction  # contact-measure threshold constant C
    point_contact_edges: bool

    @property
    def num_vertices(self) -> int:
        return len(self.indptr) - 1

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr).astype(np.int64)

    def adjacency(self) -> csr_matrix:
        data = np.ones(len(self.indices), dtype=np.float64)
        v = self.num_vertices
        return csr_matrix((data, self.indices, self.indptr), shape=(v, v))

    def neighbors(self, u: int) -> np.ndarray:
        return self.indices[self.indptr[u] : self.indptr[u + 1]]

    def face_set(self, axis: int, side: int) -> np.ndarray:
        if side == 0:
            return self.corners[:, axis] == 0
        return self.corners[:, axis] + self.side_scaled == self.scale

    def boundary(self) -> np.ndarray:
        out = np.zeros(self.num_vertices, dtype=bool)
        for axis in range(3):
            for side in (0, 1):
                out |= self.face_set(axis, side)
        return out

    def word_of(self, idx: int) -> Word:
        return index_word(idx, self.n, self.spec.N)

    def index_of(self, word: Word) -> int:
        return word_index(word, self.spec.N)

    def block_range(self, prefix: Word) -> tuple[int, int]:
        """Index range of the block prefix.W_(n-m) (contiguous in lex order)."""
        m = len(prefix)
        size = self.spec.N ** (self.n - m)
        start = word_index(prefix, self.spec.N) * size
        return start, start + size


def faces(graph: CellGraph) -> dict[tuple[int, int], np.ndarray]:
    """The six face sets keyed by (axis, side), as boolean masks."""
    return {(o, s): graph.face_set(o, s) for o in range(3) for s in (0, 1)}


def boundary(graph: CellGraph) -> np.ndarray:
    return graph.boundary()


def middle_layers(graph: CellGraph) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(I, I+, I-): cells meeting the middle plane / upper / lower x1 halves."""
    lo = 2 * graph.corners[:, 0]
    hi = 2 * (graph.corners[:, 0] + graph.side_scaled)
    mid = graph.scale
    middle = (lo <= mid) & (hi >= mid)
    upper = hi >= mid
    lower = lo <= mid
    return middle, upper, lower


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------


def _scaled_geometry(spec: IfsSpec, n: int):
    """Integer corner array for all level-n cells plus (scale, side) ints."""
    k, N = spec.k, spec.N
    L = lcm(*(t.denominator for c in spec.cells for t in c), 1)
    scale = k**n * L
    digit_corners = np.array(
        [[int(t * k * L) for t in c] for c in spec.cells], dtype=np.int64
    )
    count = N**n
    corners = np.zeros((count, 3), dtype=np.int64)
    for j, digits in enumerate(_digit_arrays(n, N, count)):
        corners += digit_corners[digits] * (k ** (n - 1 - j))
    return corners, scale, L


def _grid_flags(spec: IfsSpec, n: int) -> np.ndarray:
    top = 1 - Fraction(1, spec.k)
    digit_boundary = np.array(
        [any(t == 0 or t == top for t in c) for c in spec.cells], dtype=bool
    )
    count = spec.N**n
    flags = np.ones(count, dtype=bool)
    for digits in _digit_arrays(n, spec.N, count):
        flags &= digit_boundary[digits]
    return flags


def _classify_pair(ci, cj, side: int, grid_i: bool, grid_j: bool,
                   thr_num: int, thr_den: int, L: int, point_contact: bool):
    """Exact edge decision for two scaled cells. Returns True if adjacent."""
    lens = [0, 0, 0]
    degenerate = 0
    aligned = 0
    for o in range(3):
        lo = ci[o] if ci[o] > cj[o] else cj[o]
        hi = min(ci[o], cj[o]) + side
        if lo > hi:
            return False
        ln = hi - lo
        lens[o] = ln
        if ln == 0:
            degenerate += 1
        if ci[o] == cj[o]:
            aligned += 1
    if grid_i and grid_j:
        # grid pairs: exact full-face match only
        return degenerate == 1 and aligned == 2
    if degenerate == 3:
        return point_contact
    if degenerate == 2:  # segment: length > C * k^-n  <=>  len*den > num*L
        ln = max(lens)
        return ln * thr_den > thr_num * L
    if degenerate == 1:  # rectangle: area > C * k^-2n
        area = 1
        for ln in lens:
            if ln > 0:
                area *= ln
        return area * thr_den > thr_num * L * L
    raise SpecError("cells overlap with positive volume; spec is invalid")


def _adjacency(corners: np.ndarray, side: int, grid: np.ndarray,
               threshold: Fraction, L: int, point_contact: bool):
    """CSR adjacency via spatial hashing of scaled cells (exact decisions)."""
    count = len(corners)
    buckets: dict[tuple[int, int, int], list[int]] = {}
    bidx = corners // side
    for i in range(count):
        buckets.setdefault((bidx[i, 0], bidx[i, 1], bidx[i, 2]), []).append(i)
    thr_num, thr_den = threshold.numerator, threshold.denominator
    rows: list[list[int]] = [[] for _ in range(count)]
    corner_list = corners.tolist()
    grid_list = grid.tolist()
    offs = [
        (dx, dy, dz)
        for dx in (-1, 0, 1)
        for dy in (-1, 0, 1)
        for dz in (-1, 0, 1)
    ]
    for (bx, by, bz), members in buckets.items():
        for off in offs:
            other = buckets.get((bx + off[0], by + off[1], bz + off[2]))
            if other is None:
                continue
            for i in members:
                ci, gi = corner_list[i], grid_list[i]
                for j in other:
                    if j <= i:
                        continue
                    if _classify_pair(ci, corner_list[j], side, gi, grid_list[j],
                                      thr_num, thr_den, L, point_contact):
                        rows[i].append(j)
                        rows[j].append(i)
    indptr = np.zeros(count + 1, dtype=np.int64)
    for i, r in enumerate(rows):
        r.sort()
        indptr[i + 1] = indptr[i] + len(r)
    indices = np.empty(indptr[-1], dtype=np.int64)
    for i, r in enumerate(rows):
        indices[indptr[i] : indptr[i + 1]] = r
    return indptr, indices


def build_graph(
    spec: IfsSpec,
    n: int,
    *,
    point_contact_edges: bool = True,
    max_vertices: int = 500_000,
    check_connected: bool = True,
) -> CellGraph:
    """Build the level-n cell graph.

    Edges follow the two-case contact rule: grid-word pairs are adjacent iff
    their cubes share an exact full face; other pairs are adjacent iff their
    contact is a point (when ``point_contact_edges``) or a segment/rectangle
    whose measure exceeds the threshold C*k^-n / C*k^-2n.
    """
    if n < 0:
        raise SpecError("level must be >= 0")
    count = spec.N**n
    if count > max_vertices:
        raise BudgetError(
            f"level {n} needs {count} vertices > budget {max_vertices}"
        )
    _, threshold = edge_threshold_constants(spec)
    corners, scale, L = _scaled_geometry(spec, n)
    side = L
    grid = _grid_flags(spec, n)
    indptr, indices = _adjacency(corners, side, grid, threshold, L, point_contact_edges)
    graph = CellGraph(
        spec=spec,
        n=n,
        indptr=indptr,
        indices=indices,
        corners=corners,
        scale=scale,
        side_scaled=side,
        grid_word=grid,
        threshold=threshold,
        point_contact_edges=point_contact_edges,
    )
    if check_connected and n >= 1:
        ncomp, _ = connected_components(graph.adjacency(), directed=False)
        if ncomp != 1:
            raise SpecError(f"level-{n} cell graph is disconnected ({ncomp} parts)")
    return graph


# ---------------------------------------------------------------------------
# balls, distances, neighborhoods
# ---------------------------------------------------------------------------


def _bfs_depths(graph: CellGraph, start: int | np.ndarray, limit: int | None = None):
    count = graph.num_vertices
    depth = np.full(count, -1, dtype=np.int64)
    if np.isscalar(start):
        frontier = [int(start)]
    else:
        frontier = [int(s) for s in np.atleast_1d(start)]
    for s in frontier:
        depth[s] = 0
    d = 0
    indptr, indices = graph.indptr, graph.indices
    while frontier and (limit is None or d < limit):
        nxt = []
        for u in frontier:
            for v in indices[indptr[u] : indptr[u + 1]]:
                if depth[v] < 0:
                    depth[v] = d + 1
                    nxt.append(int(v))
        frontier = nxt
        d += 1
    return depth


def graph_distance(graph: CellGraph, u: int, v: int) -> int:
    depth = _bfs_depths(graph, u)
    if depth[v] < 0:
        raise SpecError("vertices are disconnected")
    return int(depth[v])


def graph_ball(graph: CellGraph, u: int, r: int) -> np.ndarray:
    """Vertices at BFS distance < r from u (strict, so r=1 gives {u})."""
    depth = _bfs_depths(graph, u, limit=max(r - 1, 0))
    return (depth >= 0) & (depth < r)


def neighborhood(graph: CellGraph, u: int, l_star: int) -> np.ndarray:
    """Vertices reachable from u with at most l_star edges (boolean mask)."""
    depth = _bfs_depths(graph, u, limit=l_star)
    return (depth >= 0) & (depth <= l_star)


def adapted_audit(spec: IfsSpec, n: int, l_star: int,
                  graph: CellGraph | None = None) -> dict:
    """Empirical separation audit for the neighborhood radius l_star.

    Checks that any two level-n cells with no connecting path of <= l_star
    edges sit at Euclidean distance >= c_* k^-n.  Exact integer comparisons;
    intended for n <= 2.
    """
    from .geometry import separation_constant

    if graph is None:
        graph = build_graph(spec, n)
    c_star = separation_constant(spec)
    count = graph.num_vertices
    # threshold in scaled units: dist >= c* k^-n  <=>  dist_scaled >= c* L
    bound = c_star * graph.side_scaled
    bound_sq_num = bound.numerator**2
    bound_sq_den = bound.denominator**2
    violations = []
    for u in range(count):
        depth = _bfs_depths(graph, u, limit=l_star)
        far = np.nonzero((depth < 0) | (depth > l_star))[0]
        far = far[far > u]
        cu = graph.corners[u]
        for v in far:
            gaps = np.maximum(
                np.maximum(cu, graph.corners[v])
                - np.minimum(cu, graph.corners[v])
                - graph.side_scaled,
                0,
            )
            dist_sq = int((gaps.astype(object) ** 2).sum())
            if dist_sq * bound_sq_den < bound_sq_num:
                violations.append((graph.word_of(u), graph.word_of(int(v))))
    return {"l_star": l_star, "pass": not violations, "violations": violations[:10]}


def interface_sets(graph: CellGraph, w: Word, w2: Word) -> tuple[list[Word], np.ndarray]:
    """Suffix set J and vertex set I of the w-side interface toward w2.

    J collects the level-(n-m) suffixes eta with w.eta adjacent to the w2
    block in the level-n graph; I = w.J as a boolean vertex mask.  The order
    of (w, w2) matters.
    """
    m = len(w)
    if len(w2) != m:
        raise SpecError("interface words must have equal length")
    lo_w, hi_w = graph.block_range(w)
    lo_v, hi_v = graph.block_range(w2)
    if lo_w == lo_v:
        raise SpecError("interface requires distinct words")
    mask = np.zeros(graph.num_vertices, dtype=bool)
    suffixes: list[Word] = []
    size = hi_w - lo_w
    for u in range(lo_w, hi_w):
        nbr = graph.neighbors(u)
        if ((nbr >= lo_v) & (nbr < hi_v)).any():
            mask[u] = True
            suffixes.append(index_word(u - lo_w, graph.n - m, graph.spec.N))
    if not mask.any():
        raise SpecError("blocks are not adjacent at this level")
    return suffixes, mask


def word_permutation(graph: CellGraph, g: Isometry) -> np.ndarray:
    """Vertex permutation induced by an isometry (digitwise relabeling)."""
    dm = np.array(digit_map(graph.spec, g), dtype=np.int64)
    count = graph.num_vertices
    out = np.zeros(count, dtype=np.int64)
    N = graph.spec.N
    for j, digits in enumerate(_digit_arrays(graph.n, N, count)):
        out = out * N + dm[digits]
    return out


# ---------------------------------------------------------------------------
# measures
# ---------------------------------------------------------------------------


def counting_measure(graph: CellGraph) -> np.ndarray:
    return np.ones(graph.num_vertices, dtype=np.int64)


def walk_measure(graph: CellGraph) -> np.ndarray:
    """Degree measure with a +1 boundary bonus (the walk's reversing measure)."""
    deg = graph.degrees
    bad = (deg == 0) & ~graph.boundary()
    if bad.any():
        raise SpecError("zero-degree interior vertex; graph is disconnected")
    return deg + graph.boundary().astype(np.int64)


def degree_report(graph: CellGraph) -> dict:
    """Max degree and whether the walk measure stays within 8x counting."""
    deg = graph.degrees
    pi = walk_measure(graph)
    return {
        "max_degree": int(deg.max()),
        "pi_le_8": bool((pi <= 8).all()),
        "max_pi": int(pi.max()),
    }


# ---------------------------------------------------------------------------
# wall graphs
# ---------------------------------------------------------------------------


@dataclass
class WallGraph:
    """Stack of level-n blocks over the bottom-face (x2=0) level-m prefixes.

    Vertices are (prefix, suffix) pairs ordered lexicographically; adjacency
    is the level-(m+n) contact rule restricted to the wall.  ``fold`` sends
    each vertex to its level-n image under the coordinatewise tent map and
    ``outside_degree`` counts wall neighbors outside the vertex's own block.
    """

    spec: IfsSpec
    m: int
    n: int
    prefixes: list[Word]
    indptr: np.ndarray
    indices: np.ndarray
    fold: np.ndarray  # wall vertex -> level-n vertex index
    outside_degree: np.ndarray
    pi: np.ndarray  # reversing measure pi_{m,n}
    cell_graph: CellGraph  # the level-n graph the wall folds onto

    @property
    def num_vertices(self) -> int:
        return len(self.indptr) - 1

    @property
    def block_size(self) -> int:
        return self.spec.N**self.n

    def neighbors(self, u: int) -> np.ndarray:
        return self.indices[self.indptr[u] : self.indptr[u + 1]]

    def vertex_word(self, u: int) -> Word:
        b = self.block_size
        return self.prefixes[u // b] + index_word(u % b, self.n, self.spec.N)

    def adjacency(self) -> csr_matrix:
        data = np.ones(len(self.indices), dtype=np.float64)
        v = self.num_vertices
        return csr_matrix((data, self.indices, self.indptr), shape=(v, v))


def bottom_face_prefixes(spec: IfsSpec, m: int) -> list[Word]:
    """Level-m words flush to the x2=0 face, in lexicographic order."""
    import itertools as _it

    bottom_digits = [i for i, c in enumerate(spec.cells) if c[1] == 0]
    return [tuple(w) for w in _it.product(bottom_digits, repeat=m)]


def build_wall(
    spec: IfsSpec,
    m: int,
    n: int,
    *,
    cell_graph: CellGraph | None = None,
    max_vertices: int = 500_000,
    point_contact_edges: bool = True,
) -> WallGraph:
    """Build the wall graph of level-n blocks attached to the x2=0 face."""
    if cell_graph is None:
        cell_graph = build_graph(spec, n, max_vertices=max_vertices,
                                 point_contact_edges=point_contact_edges)
    prefixes = bottom_face_prefixes(spec, m)
    bs = spec.N**n
    count = len(prefixes) * bs
    if count > max_vertices:
        raise BudgetError(f"wall ({m},{n}) needs {count} vertices > budget")

    # scaled level-(m+n) corners of wall cells: prefix * k^n + suffix
    pm, scale_m, L = _scaled_geometry(spec, m)
    prefix_rows = np.array(
        [word_index(p, spec.N) for p in prefixes], dtype=np.int64
    )
    pm = pm[prefix_rows]
    cn = cell_graph.corners
    corners = np.repeat(pm * (spec.k**n), bs, axis=0) + np.tile(cn, (len(prefixes), 1))
    side = L
    scale = scale_m * spec.k**n

    suffix_grid = cell_graph.grid_word
    grid = np.tile(suffix_grid, len(prefixes))  # bottom prefixes are grid words
    _, threshold = edge_threshold_constants(spec)
    indptr, indices = _adjacency(corners, side, grid, threshold, L,
                                 point_contact_edges)

    # fold each wall cell onto its level-n image by integer tent-map algebra
    scale_n = cell_graph.scale
    corner_lookup = {tuple(c): i for i, c in enumerate(cell_graph.corners.tolist())}
    fold = np.empty(count, dtype=np.int64)
    for u, corner in enumerate(corners.tolist()):
        folded = []
        for o in range(3):
            a = corner[o]  # coordinate * scale; after *k^m it is over scale_n
            j, r = divmod(a, scale_n)
            if r + side > scale_n:
                raise SpecError("wall cell straddles a fold line")
            folded.append(r if j % 2 == 0 else scale_n - r - side)
        target = corner_lookup.get(tuple(folded))
        if target is None:
            raise SpecError("folded wall cell matches no level-n cell")
        fold[u] = target

    deg_wall = np.diff(indptr)
    deg_cell = cell_graph.degrees[fold]
    outside = deg_wall - deg_cell
    if outside.min() < 0 or outside.max() > 2:
        raise SpecError(
            f"wall outside degree out of range [0, 2]: "
            f"[{outside.min()}, {outside.max()}]"
        )
    pi_cell = walk_measure(cell_graph)
    return WallGraph(
        spec=spec,
        m=m,
        n=n,
        prefixes=prefixes,
        indptr=indptr,
        indices=indices,
        fold=fold,
        outside_degree=outside.astype(np.int64),
        pi=pi_cell[fold],
        cell_graph=cell_graph,
    )


def wall_measure(wall: WallGraph) -> np.ndarray:
    return wall.pi


# ---------------------------------------------------------------------------
# graph cache
# ---------------------------------------------------------------------------


def save_graph(graph: CellGraph, path: str) -> None:
    """Write the versioned binary cache: header JSON + raw numpy buffers."""
    meta = {
        "spec_hash": graph.spec.spec_hash(),
        "n": graph.n,
        "C": format_rational(graph.threshold),
        "scale": graph.scale,
        "side": graph.side_scaled,
        "point_contact_edges": graph.point_contact_edges,
        "spec": json.loads(graph.spec.canonical_json()),
    }
    blob = json.dumps(meta, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CACHE_MAGIC)
        f.write(struct.pack("<II", CACHE_VERSION, len(blob)))
        f.write(blob)
        for arr in (graph.indptr, graph.indices, graph.corners,
                    graph.grid_word):
            np.save(f, arr, allow_pickle=False)


def load_graph(spec: IfsSpec, path: str) -> CellGraph:
    """Load a cached graph; raises on magic/version/spec-hash mismatch."""
    with open(path, "rb") as f:
        if f.read(4) != CACHE_MAGIC:
            raise SpecError("bad cache magic")
        version, blob_len = struct.unpack("<II", f.read(8))
        if version != CACHE_VERSION:
            raise SpecError(f"cache version {version} != {CACHE_VERSION}")
        meta = json.loads(f.read(blob_len))
        if meta["spec_hash"] != spec.spec_hash():
            raise SpecError("cache spec hash mismatch; rebuild required")
        indptr = np.load(f, allow_pickle=False)
        indices = np.load(f, allow_pickle=False)
        corners = np.load(f, allow_pickle=False)
        grid = np.load(f, allow_pickle=False)
    return CellGraph(
        spec=spec,
        n=int(meta["n"]),
        indptr=indptr,
        indices=indices,
        corners=corners,
        scale=int(meta["scale"]),
        side_scaled=int(meta["side"]),
        grid_word=grid,
        threshold=parse_rational(meta["C"]),
        point_contact_edges=bool(meta["point_contact_edges"]),
    )


def export_adjacency_json(graph: CellGraph) -> str:
    """Adjacency as JSON for interop: list of neighbor lists in vertex order."""
    return json.dumps(
        {
            "n": graph.n,
            "N": graph.spec.N,
            "spec_hash": graph.spec.spec_hash(),
            "adjacency": [
                [int(v) for v in graph.neighbors(u)]
                for u in range(graph.num_vertices)
            ],
        },
        separators=(",", ":"),
    )

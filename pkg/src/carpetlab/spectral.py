"""Graph energies, Poincaré constants, effective resistances and scaling fits.

The quadratic form used everywhere is the ordered-pair energy: every edge is
counted in both directions, so the assembled Laplacian is 2*(D - A).  The
random-walk identities in :mod:`carpetlab.walks` compare against the per-edge
(half) energy; see the README for the convention table.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .cellgraph import CellGraph, build_graph, neighborhood, word_index
from .geometry import IfsSpec, SpecError, Word


@dataclass
class SolveOptions:
    """Linear/eigen solver knobs shared across the module."""

    method: str = "auto"  # auto | dense | iterative
    tol: float = 1e-10
    maxiter: int = 20000
    dense_cutoff: int = 2000

    def __post_init__(self) -> None:
        if not (0 < self.tol <= 1e-4):
            raise ValueError("tolerance must be in (0, 1e-4]")

    def resolved(self, size: int) -> str:
        if self.method != "auto":
            return self.method
        return "dense" if size <= self.dense_cutoff else "iterative"


DEFAULT_OPTS = SolveOptions()


@dataclass
class SolveInfo:
    method: str
    iterations: int
    residual: float


# ---------------------------------------------------------------------------
# energy and Laplacian
# ---------------------------------------------------------------------------


def _edge_arrays(graph) -> tuple[np.ndarray, np.ndarray]:
    u = np.repeat(np.arange(graph.num_vertices), np.diff(graph.indptr))
    return u, graph.indices


def dirichlet_energy(graph, f: np.ndarray, subset: np.ndarray | None = None) -> float:
    """Ordered-pair graph energy of f (each edge counted twice)."""
    u, v = _edge_arrays(graph)
    if subset is not None:
        keep = subset[u] & subset[v]
        u, v = u[keep], v[keep]
    d = f[u] - f[v]
    return float(d @ d)


def laplacian(graph, subset: np.ndarray | None = None) -> sp.csr_matrix:
    """Doubled graph Laplacian 2*(D - A), optionally induced on a subset."""
    adj = graph.adjacency()
    if subset is not None:
        keep = np.nonzero(subset)[0]
        adj = adj[keep][:, keep]
    deg = np.asarray(adj.sum(axis=1)).ravel()
    return (2.0 * (sp.diags(deg) - adj)).tocsr()


def _solve_singular_psd(L: sp.csr_matrix, b: np.ndarray, opts: SolveOptions):
    """Solve L x = b for b orthogonal to constants (x returned mean-free).

    Dense path uses lstsq; iterative path runs Jacobi-preconditioned CG on
    the mean-zero subspace.  Any solution works for quadratic-form values
    v.L+ v since v is deflated too.
    """
    size = L.shape[0]
    b = b - b.mean()
    method = opts.resolved(size)
    if method == "dense":
        x, *_ = np.linalg.lstsq(L.toarray(), b, rcond=None)
        res = np.linalg.norm(L @ x - b) / max(np.linalg.norm(b), 1e-300)
        return x - x.mean(), SolveInfo("dense", 1, float(res))
    diag = L.diagonal()
    inv = np.where(diag > 0, 1.0 / np.maximum(diag, 1e-300), 0.0)

    count = {"it": 0}

    def cb(_):
        count["it"] += 1

    def project(vec):
        return vec - vec.mean()

    M = spla.LinearOperator(L.shape, matvec=lambda v: project(inv * v))
    A = spla.LinearOperator(L.shape, matvec=lambda v: project(L @ project(v)))
    x, code = spla.cg(A, b, rtol=opts.tol, maxiter=opts.maxiter, M=M, callback=cb)
    if code != 0:
        raise RuntimeError(f"CG failed to converge (code {code})")
    res = np.linalg.norm(L @ project(x) - b) / max(np.linalg.norm(b), 1e-300)
    return project(x), SolveInfo("iterative", count["it"], float(res))


def _solve_pd(L: sp.csr_matrix, b: np.ndarray, opts: SolveOptions):
    size = L.shape[0]
    method = opts.resolved(size)
    if method == "dense":
        x = np.linalg.solve(L.toarray(), b)
        res = np.linalg.norm(L @ x - b) / max(np.linalg.norm(b), 1e-300)
        return x, SolveInfo("dense", 1, float(res))
    lu = spla.splu(L.tocsc())
    x = lu.solve(b)
    res = np.linalg.norm(L @ x - b) / max(np.linalg.norm(b), 1e-300)
    if res > 1e-6:
        raise RuntimeError(f"sparse LU residual too large: {res}")
    return x, SolveInfo("splu", 1, float(res))


# ---------------------------------------------------------------------------
# Poincare constant
# ---------------------------------------------------------------------------


@dataclass
class PoincareResult:
    value: float  # largest variance at unit (ordered) energy
    gap: float  # smallest nonzero eigenvalue of the doubled Laplacian
    info: SolveInfo


def poincare_constant(graph, opts: SolveOptions = DEFAULT_OPTS) -> PoincareResult:
    """Largest mean-centered variance at unit energy = 1/gap(2(D-A))."""
    L = laplacian(graph)
    size = L.shape[0]
    if opts.resolved(size) == "dense":
        vals = np.linalg.eigvalsh(L.toarray())
        gap = float(vals[1])
        return PoincareResult(1.0 / gap, gap, SolveInfo("dense", 1, 0.0))
    scale = float(L.diagonal().max())
    sigma = -1e-8 * scale
    vals, vecs = spla.eigsh(L, k=2, sigma=sigma, which="LM")
    order = np.argsort(vals)
    gap = float(vals[order[1]])
    vec = vecs[:, order[1]]
    res = float(np.linalg.norm(L @ vec - gap * vec) / gap)
    if gap <= 0:
        raise RuntimeError("nonpositive spectral gap; graph disconnected?")
    return PoincareResult(1.0 / gap, gap, SolveInfo("eigsh-shift-invert", 1, res))


# ---------------------------------------------------------------------------
# effective resistance
# ---------------------------------------------------------------------------


@dataclass
class ResistanceResult:
    value: float
    potential: np.ndarray
    info: SolveInfo


def effective_resistance(
    graph,
    set_a: np.ndarray,
    set_b: np.ndarray,
    opts: SolveOptions = DEFAULT_OPTS,
) -> ResistanceResult:
    """Effective resistance between disjoint vertex sets (ordered energy).

    Solves the Dirichlet problem f|A = 0, f|B = 1 and returns 1/energy(f).
    """
    set_a = np.asarray(set_a, dtype=bool)
    set_b = np.asarray(set_b, dtype=bool)
    if not set_a.any() or not set_b.any():
        raise SpecError("resistance endpoints must be nonempty")
    if (set_a & set_b).any():
        raise SpecError("resistance endpoints must be disjoint")
    f = np.zeros(graph.num_vertices)
    f[set_b] = 1.0
    free = ~(set_a | set_b)
    info = SolveInfo("pinned", 0, 0.0)
    if free.any():
        L = laplacian(graph)
        keep = np.nonzero(free)[0]
        L_ff = L[keep][:, keep].tocsc()
        rhs = -(L[keep] @ f)
        x, info = _solve_pd(L_ff, rhs, opts)
        f[keep] = x
    energy = dirichlet_energy(graph, f)
    if energy <= 0:
        raise SpecError("A and B are not connected through the graph")
    return ResistanceResult(1.0 / energy, f, info)


def face_resistance(graph: CellGraph, opts: SolveOptions = DEFAULT_OPTS) -> ResistanceResult:
    """Resistance between the two opposite x1 faces of the level slice."""
    return effective_resistance(
        graph, graph.face_set(0, 0), graph.face_set(0, 1), opts
    )


def face_resistance_upper_check(spec: IfsSpec, values: dict[int, float]) -> dict:
    """Check the explicit face-resistance decay bound (k/(4k-4))^n per level.

    The bound comes from counting the (4k-4)^n disjoint straight chains along
    the side shells; it is constant-free, so it is asserted directly.
    """
    alpha = spec.k / (4.0 * spec.k - 4.0)
    rows = {}
    for n, value in sorted(values.items()):
        bound = alpha**n
        rows[n] = {"value": value, "bound": bound, "pass": bool(value <= bound)}
    return {"alpha": alpha, "levels": rows, "pass": all(r["pass"] for r in rows.values())}


def resistance_probe(
    spec: IfsSpec,
    m: int,
    probe_words: list[Word],
    l_star: int,
    opts: SolveOptions = DEFAULT_OPTS,
    *,
    graphs: dict[int, CellGraph] | None = None,
    max_vertices: int = 500_000,
) -> dict:
    """Smallest block-to-far-complement resistance over the probe words.

    For each probe w the quantity is the resistance between the block w.W_m
    and the blocks outside the l_star-edge neighborhood of w, inside the
    level-(|w|+m) graph.  Probes whose neighborhood swallows the whole level
    are skipped with a warning entry.
    """
    graphs = graphs if graphs is not None else {}
    per_probe = []
    best = None
    for w in probe_words:
        if len(w) == 0:
            raise SpecError("probe words must be nonempty")
        level = len(w) + m
        if len(w) not in graphs:
            graphs[len(w)] = build_graph(spec, len(w), max_vertices=max_vertices)
        base = graphs[len(w)]
        mask = neighborhood(base, word_index(w, spec.N), l_star)
        if mask.all():
            per_probe.append({"word": w, "skipped": "neighborhood covers level"})
            continue
        if level not in graphs:
            graphs[level] = build_graph(spec, level, max_vertices=max_vertices)
        g = graphs[level]
        bs = spec.N**m
        set_a = np.zeros(g.num_vertices, dtype=bool)
        lo, hi = g.block_range(w)
        set_a[lo:hi] = True
        set_b = np.repeat(~mask, bs)
        res = effective_resistance(g, set_a, set_b, opts)
        per_probe.append({"word": w, "value": res.value})
        if best is None or res.value < best:
            best = res.value
    return {"m": m, "l_star": l_star, "value": best, "probes": per_probe}


# ---------------------------------------------------------------------------
# block-average gap constants
# ---------------------------------------------------------------------------


def sigma_pair(
    graph: CellGraph,
    w: Word,
    w2: Word,
    m: int,
    opts: SolveOptions = DEFAULT_OPTS,
) -> dict:
    """Largest squared block-average gap at unit energy, scaled by N^m.

    ``graph`` must be the level-(|w|+m) graph; the two blocks w.W_m, w2.W_m
    are paired with the signed averaging vector and one deflated solve gives
    the supremum value a.L+ a (times N^m).
    """
    if len(w) != len(w2) or len(w) + m != graph.n:
        raise SpecError("sigma pair levels are inconsistent with the graph")
    lo1, hi1 = graph.block_range(w)
    lo2, hi2 = graph.block_range(w2)
    subset = np.zeros(graph.num_vertices, dtype=bool)
    subset[lo1:hi1] = True
    subset[lo2:hi2] = True
    L = laplacian(graph, subset)
    keep = np.nonzero(subset)[0]
    ncomp, _ = sp.csgraph.connected_components(L, directed=False)
    if ncomp != 1:
        raise SpecError("two-block graph is disconnected; contact rule anomaly")
    bs = graph.spec.N**m
    a = np.zeros(len(keep))
    local = {idx: pos for pos, idx in enumerate(keep)}
    a[[local[i] for i in range(lo1, hi1)]] = 1.0 / bs
    a[[local[i] for i in range(lo2, hi2)]] = -1.0 / bs
    x, info = _solve_singular_psd(L, a, opts)
    value = graph.spec.N**m * float(a @ x)
    return {
        "value": value,
        "maximizer": x,
        "subset": subset,
        "info": info,
    }


def sigma_census(graph: CellGraph) -> list[tuple[Word, Word]]:
    """One adjacent pair per isometry-orbit of the level's edge set."""
    from .cellgraph import word_permutation
    from .geometry import isometry_group

    perms = [word_permutation(graph, g) for g in isometry_group()]
    seen = set()
    out = []
    u_arr, v_arr = _edge_arrays(graph)
    for u, v in zip(u_arr.tolist(), v_arr.tolist()):
        if u > v:
            continue
        key = min(
            (min(p[u], p[v]), max(p[u], p[v])) for p in perms
        )
        if key in seen:
            continue
        seen.add(key)
        out.append((graph.word_of(u), graph.word_of(v)))
    return out


def sigma_supremum(
    spec: IfsSpec,
    m: int,
    census_levels: list[int],
    opts: SolveOptions = DEFAULT_OPTS,
    *,
    graphs: dict[int, CellGraph] | None = None,
    max_vertices: int = 500_000,
) -> dict:
    """Max block-gap constant over a finite census of adjacent pairs.

    The true supremum ranges over all levels; the probe census (default
    levels <= 2) is recorded in the output so consumers can see what was
    actually maximized.
    """
    graphs = graphs if graphs is not None else {}
    best = None
    probes = []
    for nprime in census_levels:
        if nprime not in graphs:
            graphs[nprime] = build_graph(spec, nprime, max_vertices=max_vertices)
        level = nprime + m
        if level not in graphs:
            graphs[level] = build_graph(spec, level, max_vertices=max_vertices)
        for w, w2 in sigma_census(graphs[nprime]):
            val = sigma_pair(graphs[level], w, w2, m, opts)["value"]
            probes.append({"pair": (w, w2), "value": val})
            if best is None or val > best:
                best = val
    if best is None:
        raise SpecError("empty census")
    return {"m": m, "value": best, "census_levels": census_levels, "probes": probes}


def face_gap_constants(
    graph: CellGraph, opts: SolveOptions = DEFAULT_OPTS
) -> dict:
    """Squared face-average gap constants at unit energy.

    ``adjacent`` pairs the x1=0 face with the x2=0 face (neighboring faces);
    ``opposite`` pairs x1=0 with x1=1.  Both are v.L+ v values for the signed
    normalized indicator v.
    """
    L = laplacian(graph)
    out = {}
    f10 = graph.face_set(0, 0)
    for key, other in (("adjacent", graph.face_set(1, 0)),
                       ("opposite", graph.face_set(0, 1))):
        v = np.zeros(graph.num_vertices)
        v[f10] += 1.0 / f10.sum()
        v[other] -= 1.0 / other.sum()
        x, info = _solve_singular_psd(L, v, opts)
        out[key] = float(v @ x)
        out[f"{key}_info"] = info
    return out


def pinned_face_gap(
    graph: CellGraph, opts: SolveOptions = DEFAULT_OPTS
) -> dict:
    """Supremum of (avg over x2=0 face of f)^2 / energy among f = 0 on x1=0.

    One Dirichlet-constrained solve; returns 0 with a warning when the
    pinning forces the face average to vanish.
    """
    pinned = graph.face_set(0, 0)
    target = graph.face_set(1, 0)
    free = ~pinned
    a_full = np.zeros(graph.num_vertices)
    a_full[target] = 1.0 / target.sum()
    if not (target & free).any():
        return {"value": 0.0, "warning": "target face entirely pinned"}
    L = laplacian(graph)
    keep = np.nonzero(free)[0]
    L_ff = L[keep][:, keep].tocsc()
    a = a_full[keep]
    x, info = _solve_pd(L_ff, a, opts)
    return {"value": float(a @ x), "info": info}


# ---------------------------------------------------------------------------
# measures for the averaging bound
# ---------------------------------------------------------------------------


def block_measure_constant(graph: CellGraph, nu: np.ndarray) -> float:
    """Smallest C with nu(block)/nu(all) <= C k^-m over all levels/blocks."""
    total = float(nu.sum())
    if total <= 0:
        raise SpecError("measure must have positive mass")
    N, k, n = graph.spec.N, graph.spec.k, graph.n
    best = 0.0
    for m in range(1, n + 1):
        sums = nu.reshape(N**m, N ** (n - m)).sum(axis=1)
        best = max(best, float(sums.max()) / total * k**m)
    return best


def interface_measure(graph: CellGraph, w: Word, w2: Word) -> np.ndarray:
    """Counting measure on the w-side interface toward w2 (Example-a style)."""
    from .cellgraph import interface_sets

    _, mask = interface_sets(graph, w, w2)
    return mask.astype(np.float64)


def height_ladder_measure(graph: CellGraph) -> dict:
    """Unit masses on one path cell per height band (Example-b style).

    B is a BFS shortest path from the top x1 face into the middle layer; the
    i-th band wants a cell of B whose lower x1 corner lies in
    [(k^n - i)/k^n, (k^n - i + 1)/k^n).
    """
    from .cellgraph import middle_layers, _bfs_depths

    top = graph.face_set(0, 1)
    middle, _, _ = middle_layers(graph)
    depth = _bfs_depths(graph, np.nonzero(top)[0])
    target = np.nonzero(middle)[0]
    end = target[np.argmin(depth[target])]
    # walk back along decreasing depth to extract one shortest path
    path = [int(end)]
    cur = int(end)
    while depth[cur] > 0:
        nbr = graph.neighbors(cur)
        cur = int(nbr[np.argmin(depth[nbr])])
        path.append(cur)
    kn = graph.spec.k**graph.n
    bands = kn // 2
    chosen = {}
    corners = graph.corners[:, 0]
    scale = graph.scale
    for i in range(1, bands + 1):
        lo = (kn - i) * scale  # compare corner*kn against band edges * scale
        hi = (kn - i + 1) * scale
        for u in path:
            c = int(corners[u]) * kn
            if lo <= c < hi:
                chosen[i] = u
                break
        else:
            raise SpecError(f"height band {i} has no representative on the path")
    nu = np.zeros(graph.num_vertices)
    for u in chosen.values():
        nu[u] += 1.0
    return {"nu": nu, "path": path, "chosen": chosen}


def average_comparison_report(
    graph: CellGraph,
    nu: np.ndarray,
    lam: float,
    *,
    samples: int = 64,
    seed: int = 0,
) -> dict:
    """Empirical constant in the measure-vs-counting average comparison.

    For random f, |avg_nu f - avg f| is divided by sqrt(N^-n lam energy(f));
    the max over the sample estimates C2 sqrt(C1) and the exact C1 of the
    block-mass condition is reported alongside.
    """
    rng = np.random.default_rng(seed)
    count = graph.num_vertices
    nonzero = nu > 0
    c1 = block_measure_constant(graph, nu)
    scale = graph.spec.N ** (-graph.n) * lam
    worst = 0.0
    for i in range(samples):
        if i % 3 == 0:
            f = rng.standard_normal(count)
        elif i % 3 == 1:
            f = (rng.random(count) < 0.3).astype(float)
        else:
            center = rng.integers(count)
            d = _bfs_for_bump(graph, int(center))
            f = np.exp(-(d / max(d.max(), 1)) * 3.0)
        energy = dirichlet_energy(graph, f)
        if energy <= 0:
            continue
        gap = abs(nu[nonzero] @ f[nonzero] / nu.sum() - f.mean())
        worst = max(worst, gap / math.sqrt(scale * energy))
    return {"empirical_c2_sqrt_c1": worst, "c1": c1}


def _bfs_for_bump(graph, center: int) -> np.ndarray:
    from .cellgraph import _bfs_depths

    d = _bfs_depths(graph, center)
    d[d < 0] = d.max() + 1
    return d.astype(float)


# ---------------------------------------------------------------------------
# constants table and scaling fits
# ---------------------------------------------------------------------------


@dataclass
class ConstantsRow:
    level: int
    quantity: str
    value: float
    method: str = ""
    tolerance: float = 0.0
    iterations: int = 0


@dataclass
class ConstantsTable:
    rows: list[ConstantsRow] = field(default_factory=list)

    def add(self, level: int, quantity: str, value: float,
            info: SolveInfo | None = None, tolerance: float = 0.0) -> None:
        self.rows.append(
            ConstantsRow(
                level=level,
                quantity=quantity,
                value=float(value),
                method=info.method if info else "",
                tolerance=tolerance,
                iterations=info.iterations if info else 0,
            )
        )

    def values(self, quantity: str) -> dict[int, float]:
        return {r.level: r.value for r in self.rows if r.quantity == quantity}

    def to_csv(self) -> str:
        lines = ["level,quantity,value,method,tolerance,iterations"]
        for r in self.rows:
            lines.append(
                f"{r.level},{r.quantity},{r.value!r},{r.method},"
                f"{r.tolerance!r},{r.iterations}"
            )
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps([asdict(r) for r in self.rows], indent=2)

    @classmethod
    def from_csv(cls, text: str) -> "ConstantsTable":
        rows = []
        for line in text.strip().splitlines()[1:]:
            level, quantity, value, method, tolerance, iterations = line.split(",")
            rows.append(
                ConstantsRow(int(level), quantity, float(value), method,
                             float(tolerance), int(iterations))
            )
        return cls(rows)


@dataclass
class ScalingFit:
    """Least-squares fit of log(value) against the level index."""

    quantity: str
    points: list[tuple[int, float]]
    slope: float
    intercept: float
    residual: float
    rho: float
    d_h: float
    d_w: float

    def as_dict(self) -> dict:
        return {
            "quantity": self.quantity,
            "points": self.points,
            "slope": self.slope,
            "intercept": self.intercept,
            "residual": self.residual,
            "rho": self.rho,
            "d_H": self.d_h,
            "d_W": self.d_w,
        }


# how each supported quantity's log-slope converts into the renormalization
# factor: r_face ~ rho^-n, lambda ~ (N/rho)^n, inv_lambda_scaled ~ rho^n
_RHO_MODES = {
    "r_face": lambda slope, N: math.exp(-slope),
    "lambda": lambda slope, N: N * math.exp(-slope),
    "inv_lambda_scaled": lambda slope, N: math.exp(slope),
}


def scaling_fit(spec: IfsSpec, quantity: str, values: dict[int, float]) -> ScalingFit:
    """Fit log(value) vs level and derive (rho, d_W) for known quantities."""
    pts = sorted(values.items())
    if len(pts) < 2:
        raise SpecError("scaling fit needs at least 2 levels")
    ns = np.array([p[0] for p in pts], dtype=float)
    logs = np.array([math.log(p[1]) for p in pts])
    A = np.vstack([ns, np.ones_like(ns)]).T
    coef, res, *_ = np.linalg.lstsq(A, logs, rcond=None)
    slope, intercept = float(coef[0]), float(coef[1])
    residual = float(np.sqrt(res[0])) if len(res) else 0.0
    mode = _RHO_MODES.get(quantity)
    if mode is None:
        raise SpecError(f"unknown scaling quantity {quantity!r}")
    rho = mode(slope, spec.N)
    if rho <= 0:
        raise SpecError("fitted renormalization factor must be positive")
    d_h = math.log(spec.N) / math.log(spec.k)
    d_w = d_h - math.log(rho) / math.log(spec.k)
    return ScalingFit(quantity, [(int(n), float(v)) for n, v in pts],
                      slope, intercept, residual, rho, d_h, d_w)

"""Discrete single- and double-layer heat potentials on closed curves.

Densities are continuous and piecewise linear in time (hat functions on the
uniform grid, zero at ``t = 0``) and sampled at uniform parameter nodes in
space. Time integrals of the kernel against each hat are exact; space
integrals use the periodic trapezoid rule, with Kress' logarithmic product
rule for the weakly singular same-curve blocks.

Every boundary operator is stored as a causal block-Toeplitz sequence
``A[l]`` (``l = m - k`` the step lag) acting as

    (A mu)[m] = sum_{k=1..m} A[m - k] @ mu[k],      (A mu)[0] = 0.
"""

from __future__ import annotations

import functools
import struct
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import signal

from .geometry import BoundaryCurve, GeometryError, SpaceTimeGrid
from .heat_kernel import (
    UNDERFLOW_ARG,
    _e1,
    time_integrated_grad_S,
    time_integrated_grad_S_dr,
    time_integrated_S,
    time_moment_S,
)

EULER_GAMMA = 0.5772156649015329
KINDS = ("single", "single_dn", "double", "double_dn")
MAX_UPSAMPLED_NODES = 16384


@dataclass
class Density:
    """Lattice values ``values[m, j]`` at time ``t_m`` and node ``theta_j``; row 0 is zero."""

    values: np.ndarray
    curve: BoundaryCurve | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("density values must be a (Nt+1, N) array")
        if np.any(self.values[0] != 0):
            raise ValueError("density row 0 (t = 0) must be identically zero")

    @classmethod
    def zeros(cls, grid: SpaceTimeGrid, curve=None, n_nodes: int | None = None):
        return cls(np.zeros((grid.Nt + 1, n_nodes or grid.Nx)), curve)

    @classmethod
    def from_function(cls, fn, grid: SpaceTimeGrid, curve=None):
        """Sample ``fn(t, theta)`` on the lattice; row 0 is forced to zero."""
        t = grid.times[:, None]
        vals = np.broadcast_to(fn(t, grid.theta[None, :]), grid.shape).astype(float).copy()
        vals[0] = 0.0
        return cls(vals, curve)

    @property
    def shape(self):
        return self.values.shape


def _values(x):
    return x.values if isinstance(x, Density) else np.asarray(x, dtype=float)


@dataclass
class BlockOperator:
    """Causal block-Toeplitz operator; ``blocks[l]`` is the lag-``l`` matrix."""

    blocks: np.ndarray
    kind: str = ""
    source: str = ""
    target: str = ""

    def __post_init__(self):
        self.blocks = np.ascontiguousarray(self.blocks, dtype=float)
        L, nt, ns = self.blocks.shape
        # lag-major concatenation so that history sums are a single matvec
        self._cat = np.ascontiguousarray(self.blocks.transpose(1, 0, 2).reshape(nt, L * ns))

    @property
    def n_steps(self) -> int:
        return self.blocks.shape[0] - 1

    @property
    def n_target(self) -> int:
        return self.blocks.shape[1]

    @property
    def n_source(self) -> int:
        return self.blocks.shape[2]

    def same_time(self) -> np.ndarray:
        return self.blocks[0]

    def _prepare(self, x):
        x = _values(x)
        if x.shape[1] != self.n_source:
            x = resample_nodes(x, self.n_source)
        return x

    def history(self, x, m: int) -> np.ndarray:
        """``sum_{k=1..m-1} A[m-k] @ x[k]``: the part of step ``m`` known before solving it."""
        x = self._prepare(x)
        ns = self.n_source
        top = min(m, self.blocks.shape[0])
        if top <= 1:
            return np.zeros(self.n_target)
        return self._cat[:, ns:top * ns] @ x[m - 1:m - top:-1].reshape(-1)

    def apply(self, x) -> np.ndarray:
        x = self._prepare(x)
        nsteps = x.shape[0] - 1
        out = np.zeros((nsteps + 1, self.n_target))
        ns = self.n_source
        L = self.blocks.shape[0]
        for m in range(1, nsteps + 1):
            top = min(m, L)
            out[m] = self._cat[:, :top * ns] @ x[m:m - top:-1].reshape(-1)
        return out

    def __matmul__(self, x):
        return self.apply(x)

    def to_csv(self, path) -> None:
        """Rows ``lag, i, j, value``."""
        L, nt, ns = self.blocks.shape
        lag, i, j = np.meshgrid(np.arange(L), np.arange(nt), np.arange(ns), indexing="ij")
        table = np.column_stack([lag.ravel(), i.ravel(), j.ravel(), self.blocks.ravel()])
        np.savetxt(path, table, delimiter=",", header="lag,i,j,value", comments="",
                   fmt=["%d", "%d", "%d", "%.17g"])

    def to_binary(self, path) -> None:
        """Header ``b'HBIEBLK1'`` + three little-endian int64 (lags, rows, cols), then
        per block its int64 lag index followed by the row-major float64 entries."""
        L, nt, ns = self.blocks.shape
        with open(path, "wb") as fh:
            fh.write(b"HBIEBLK1" + struct.pack("<3q", L, nt, ns))
            for lag in range(L):
                fh.write(struct.pack("<q", lag))
                fh.write(self.blocks[lag].astype("<f8").tobytes(order="C"))

    @classmethod
    def from_binary(cls, path, **meta) -> "BlockOperator":
        with open(path, "rb") as fh:
            if fh.read(8) != b"HBIEBLK1":
                raise ValueError(f"{path} is not a block-operator dump")
            L, nt, ns = struct.unpack("<3q", fh.read(24))
            blocks = np.empty((L, nt, ns))
            for _ in range(L):
                (lag,) = struct.unpack("<q", fh.read(8))
                blocks[lag] = np.frombuffer(fh.read(8 * nt * ns), dtype="<f8").reshape(nt, ns)
        return cls(blocks, **meta)


def resample_nodes(values, n: int) -> np.ndarray:
    """Trigonometric interpolation of each time row onto ``n`` uniform nodes."""
    values = np.asarray(values, dtype=float)
    if values.shape[1] == n:
        return values
    return signal.resample(values, n, axis=1)


@dataclass(frozen=True)
class Nodes:
    """Quadrature nodes of a curve: positions, normals, speeds, curvature, trapezoid weights."""

    theta: np.ndarray
    points: np.ndarray
    normals: np.ndarray
    speed: np.ndarray
    curvature: np.ndarray
    weights: np.ndarray

    @classmethod
    def on(cls, curve: BoundaryCurve, n: int) -> "Nodes":
        theta = 2 * np.pi * np.arange(n) / n
        speed = curve.speed(theta)
        return cls(theta, curve.position(theta), curve.normal(theta), speed,
                   curve.curvature(theta), speed * 2 * np.pi / n)


# --- time weights of the hat basis -------------------------------------------------------

def lag_pieces(lag: int, h: float):
    """Windows ``(a, b, alpha, beta)`` with hat weight ``alpha + beta s`` on ``s in [a, b]``."""
    if lag == 0:
        return [(0.0, h, 1.0, -1.0 / h)]
    return [((lag - 1) * h, lag * h, 1.0 - lag, 1.0 / h),
            (lag * h, (lag + 1) * h, lag + 1.0, -1.0 / h)]


def pieces_at_time(t: float, k: int, h: float):
    """Windows of hat ``k`` seen from time ``t`` (only ``tau <= t`` contributes)."""
    tk = k * h
    out = []
    lo, hi = tk - h, min(tk, t)
    if hi > lo:
        out.append((t - hi, t - lo, (t - tk + h) / h, -1.0 / h))
    lo, hi = tk, min(tk + h, t)
    if hi > lo:
        out.append((t - hi, t - lo, (tk + h - t) / h, 1.0 / h))
    return out


def _radial(kind: str, r, pieces):
    """Radial factor of ``kind`` summed over time windows.

    ``single``: sum alpha M0 + beta M1;  the gradient kinds return
    ``G = sum alpha g0 + beta M0 / 2`` (and ``dG/dr`` for ``double_dn``).
    """
    val = np.zeros_like(r)
    dval = np.zeros_like(r) if kind == "double_dn" else None
    for a, b, alpha, beta in pieces:
        if b <= a:
            continue
        if kind == "single":
            val += alpha * time_integrated_S(r, a, b) + beta * time_moment_S(r, a, b)
        else:
            g0 = time_integrated_grad_S(r, a, b)
            val += alpha * g0 + 0.5 * beta * time_integrated_S(r, a, b)
            if dval is not None:
                dval += alpha * time_integrated_grad_S_dr(r, a, b) - 0.5 * beta * r * g0
    return val, dval


def _combine(kind, z, r, nx, ny, G, dG):
    if kind == "single":
        return G
    if kind == "single_dn":
        return -np.einsum("pnk,pk->pn", z, nx) * G
    zny = np.einsum("pnk,nk->pn", z, ny)
    if kind == "double":
        return zny * G
    znx = np.einsum("pnk,pk->pn", z, nx)
    return (nx @ ny.T) * G + zny * znx * dG / r


def _kernel(kind, z, r, nx, ny, pieces):
    """Kernel matrix for displacement ``z = x - y`` (shape (P, N, 2)), excluding weights."""
    G, dG = _radial(kind, r, pieces)
    return _combine(kind, z, r, nx, ny, G, dG)


class _LagTable:
    """Kernel matrices lag by lag on grid-aligned windows.

    The special functions are evaluated once per window endpoint ``l h`` and
    shared by the neighbouring lags; ``_radial`` is the reference path.
    """

    def __init__(self, kind, z, r, nx, ny, h):
        self.kind, self.z, self.r, self.nx, self.ny, self.h = kind, z, r, nx, ny, h
        self.c = r * r / 4
        self._cache = {}

    def _end(self, l):
        if l not in self._cache:
            if l == 0:
                e1 = np.zeros_like(self.c)
                ex = np.zeros_like(self.c)
            else:
                x = self.c / (l * self.h)
                e1 = _e1(x)
                ex = np.where(x > UNDERFLOW_ARG, 0.0, np.exp(-np.minimum(x, UNDERFLOW_ARG)))
            self._cache[l] = (e1, ex)
            self._cache.pop(l - 3, None)
        return self._cache[l]

    def _window(self, l1, l2, alpha, beta):
        h, c, r = self.h, self.c, self.r
        e1a, xa = self._end(l1)
        e1b, xb = self._end(l2)
        m0 = (e1b - e1a) / (4 * np.pi)
        if self.kind == "single":
            m1 = (l2 * h * xb - l1 * h * xa - c * (e1b - e1a)) / (4 * np.pi)
            return alpha * m0 + beta * m1, None
        if l1 == 0:
            diff = xb
        else:
            diff = -xb * np.expm1(-c * (1.0 / (l1 * h) - 1.0 / (l2 * h)))
        g0 = diff / (2 * np.pi * r * r)
        G = alpha * g0 + 0.5 * beta * m0
        if self.kind != "double_dn":
            return G, None
        ta = 0.0 if l1 == 0 else xa / (2 * l1 * h)
        dg0 = -2 * g0 / r + (ta - xb / (2 * l2 * h)) / (2 * np.pi * r)
        return G, alpha * dg0 - 0.5 * beta * r * g0

    def radial(self, lag):
        if lag == 0:
            return self._window(0, 1, 1.0, -1.0 / self.h)
        G1, d1 = self._window(lag - 1, lag, 1.0 - lag, 1.0 / self.h)
        G2, d2 = self._window(lag, lag + 1, lag + 1.0, -1.0 / self.h)
        return G1 + G2, (None if d1 is None else d1 + d2)

    def kernel(self, lag):
        G, dG = self.radial(lag)
        return _combine(self.kind, self.z, self.r, self.nx, self.ny, G, dG)


def _check_kind(kind):
    if kind not in KINDS:
        raise ValueError(f"unknown kernel kind {kind!r}; expected one of {KINDS}")


# --- smooth (disjoint) assembly ----------------------------------------------------------

def _smooth_blocks(kind, targets, target_normals, src: Nodes, grid: SpaceTimeGrid, lags=None):
    _check_kind(kind)
    z = targets[:, None, :] - src.points[None, :, :]
    r = np.linalg.norm(z, axis=-1)
    if np.any(r <= 0):
        raise GeometryError("target point coincides with a source node")
    n_lags = grid.Nt + 1 if lags is None else lags
    blocks = np.empty((n_lags, len(targets), len(src.theta)))
    table = _LagTable(kind, z, r, target_normals, src.normals, grid.ht)
    for lag in range(n_lags):
        blocks[lag] = table.kernel(lag) * src.weights[None, :]
    return blocks


# --- singular (same-curve) assembly --------------------------------------------------------

@functools.lru_cache(maxsize=32)
def kress_weights(n: int) -> np.ndarray:
    """Matrix ``R[i, j]`` with ``int log(4 sin^2((t_i - s)/2)) f(s) ds ~ sum_j R[i, j] f(t_j)``."""
    d = 2 * np.pi * (np.arange(n)[:, None] - np.arange(n)[None, :]) / n
    if n % 2 == 0:
        half = n // 2
        m = np.arange(1, half)
        R = -(2 * np.pi / half) * np.tensordot(np.cos(d[..., None] * m), 1.0 / m, axes=1)
        R -= (np.pi / half ** 2) * np.cos(half * d)
    else:
        m = np.arange(1, (n - 1) // 2 + 1)
        R = -(4 * np.pi / n) * np.tensordot(np.cos(d[..., None] * m), 1.0 / m, axes=1)
    R.setflags(write=False)
    return R


def _log_parts(kind, z, r2, nx, ny, pieces, nodes: Nodes):
    """Coefficient ``A`` of ``log r^2`` and the diagonal limit of ``K - A log r^2``."""
    A = np.zeros_like(r2)
    diag = np.zeros(len(nodes.theta))
    for a, b, alpha, beta in pieces:
        if a > 0:
            if kind == "single":
                diag += alpha * np.log(b / a) / (4 * np.pi) + beta * (b - a) / (4 * np.pi)
            continue
        if kind == "single":
            A += -alpha / (4 * np.pi) + beta * r2 / (16 * np.pi)
            diag += alpha * (np.log(4 * b) - EULER_GAMMA) / (4 * np.pi) + beta * b / (4 * np.pi)
        else:
            # log r^2 enters only through beta M0 / 2
            if kind == "single_dn":
                A += np.einsum("pnk,pk->pn", z, nx) * beta / (8 * np.pi)
            else:
                A -= np.einsum("pnk,nk->pn", z, ny) * beta / (8 * np.pi)
            diag += -alpha * nodes.curvature / (4 * np.pi)
    return A, diag


def _singular_blocks(kind, nodes: Nodes, grid: SpaceTimeGrid):
    if kind not in ("single", "single_dn", "double"):
        raise ValueError(f"no same-curve assembly for kind {kind!r}")
    n = len(nodes.theta)
    z = nodes.points[:, None, :] - nodes.points[None, :, :]
    r2 = np.sum(z * z, axis=-1)
    eye = np.eye(n, dtype=bool)
    r = np.sqrt(np.where(eye, 1.0, r2))
    dtheta = nodes.theta[:, None] - nodes.theta[None, :]
    with np.errstate(divide="ignore"):
        L = np.where(eye, 0.0, np.log(4 * np.sin(dtheta / 2) ** 2))
    R = kress_weights(n)
    h_quad = 2 * np.pi / n
    log_speed2 = 2 * np.log(nodes.speed)
    blocks = np.empty((grid.Nt + 1, n, n))
    table = _LagTable(kind, z, r, nodes.normals, nodes.normals, grid.ht)
    for lag in range(grid.Nt + 1):
        pieces = lag_pieces(lag, grid.ht)
        K = table.kernel(lag)
        A, diag = _log_parts(kind, z, np.where(eye, 0.0, r2), nodes.normals, nodes.normals, pieces, nodes)
        B = K - A * L
        # K - A log(4 sin^2) = (K - A log r^2) + A log(r^2 / 4 sin^2) -> diag + A |gamma'|^2 term
        B[eye] = diag + A[eye] * log_speed2
        blocks[lag] = (A * R + B * h_quad) * nodes.speed[None, :]
    return blocks


# --- public assembly ------------------------------------------------------------------------

def _assemble_same(kind, curve, grid, label):
    nodes = Nodes.on(curve, grid.Nx)
    return BlockOperator(_singular_blocks(kind, nodes, grid), label, curve.name, curve.name)


def assemble_V(curve: BoundaryCurve, grid: SpaceTimeGrid) -> BlockOperator:
    """Trace of the single-layer potential on its own curve."""
    return _assemble_same("single", curve, grid, "V")


def assemble_Wstar(curve: BoundaryCurve, grid: SpaceTimeGrid) -> BlockOperator:
    """Direct value of the normal derivative of the single layer (normal at the target)."""
    return _assemble_same("single_dn", curve, grid, "W*")


def assemble_W(curve: BoundaryCurve, grid: SpaceTimeGrid) -> BlockOperator:
    """Direct value of the double layer (normal at the source)."""
    return _assemble_same("double", curve, grid, "W")


def curve_separation(a: BoundaryCurve, b: BoundaryCurve) -> float:
    """Distance between two curves; raises if they cross."""
    pb = b.polyline(1024)
    inside = a.contains(pb)
    if inside.any() and not inside.all():
        raise GeometryError(f"curves {a.name!r} and {b.name!r} intersect")
    sep = float(np.min(a.distance(pb[::4])))
    if sep <= 1e-12:
        raise GeometryError(f"curves {a.name!r} and {b.name!r} touch")
    return sep


def assemble_cross(source: BoundaryCurve, target: BoundaryCurve, grid: SpaceTimeGrid,
                   kind: str = "value") -> BlockOperator:
    """Single layer on ``source`` evaluated on the disjoint ``target`` curve.

    ``kind`` is ``"value"`` or ``"normal-derivative"`` (along the target's outward normal).
    """
    curve_separation(source, target)
    kmap = {"value": "single", "normal-derivative": "single_dn"}
    if kind not in kmap:
        raise ValueError(f"cross kind must be 'value' or 'normal-derivative', got {kind!r}")
    src = Nodes.on(source, grid.Nx)
    tgt = Nodes.on(target, grid.Nx)
    blocks = _smooth_blocks(kmap[kind], tgt.points, tgt.normals, src, grid)
    return BlockOperator(blocks, kind, source.name, target.name)


# --- off-surface evaluation -----------------------------------------------------------------

def upsampled_count(curve: BoundaryCurve, n: int, min_distance: float, ratio: float = 3.0) -> int:
    """Node count whose spacing is at most ``min_distance / ratio`` (multiple of ``n``)."""
    theta = 2 * np.pi * np.arange(512) / 512
    vmax = float(np.max(curve.speed(theta)))
    need = ratio * 2 * np.pi * vmax / max(min_distance, 1e-300)
    m = max(n, int(np.ceil(need / n)) * n)
    if m > MAX_UPSAMPLED_NODES:
        warnings.warn(f"probe distance {min_distance:.3g} needs {m} nodes; capped at {MAX_UPSAMPLED_NODES}")
        m = (MAX_UPSAMPLED_NODES // n) * n
    return m


def _probe_distance(curve, points):
    d = curve.distance(points)
    if np.any(d <= 1e-10):
        raise GeometryError("probe lies on the boundary; use the boundary operators for traces")
    return float(np.min(d))


def smooth_count(curve: BoundaryCurve, n: int, s_min: float) -> int:
    """Node count resolving kernels whose time windows start at ``s >= s_min``.

    The kernel is a Gaussian of width ``sqrt(s)`` in the source point, so the
    trapezoid aliasing error is about ``exp(-s_min (2 pi / spacing)^2)``; the
    returned count keeps the exponent above 36.
    """
    theta = 2 * np.pi * np.arange(512) / 512
    vmax = float(np.max(curve.speed(theta)))
    need = 6.0 * vmax / np.sqrt(s_min)
    return max(n, int(np.ceil(need / n)) * n)


class OffSurfaceOperator:
    """Density-to-probe operator at the grid times.

    Lags whose time windows touch ``s = 0`` see the near-singular kernel and
    use an upsampled source; the remaining lags use a coarser source.
    """

    def __init__(self, near: BlockOperator, far: BlockOperator):
        self.near, self.far = near, far

    @property
    def n_target(self) -> int:
        return self.near.n_target

    def apply(self, x) -> np.ndarray:
        return self.near.apply(x) + self.far.apply(x)

    def __matmul__(self, x):
        return self.apply(x)


def offsurface_operator(curve: BoundaryCurve, points, grid: SpaceTimeGrid, kind: str = "single",
                        directions=None, n_nodes: int | None = None) -> OffSurfaceOperator:
    """Operator from a density on ``curve`` to off-surface points at the grid times.

    ``directions`` gives the unit vectors for the derivative kinds. Densities
    on any node count are interpolated automatically in ``apply``.
    """
    _check_kind(kind)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    dmin = _probe_distance(curve, points)
    n_far = smooth_count(curve, grid.Nx, grid.ht)
    n = n_nodes or max(upsampled_count(curve, grid.Nx, dmin), n_far)
    dirs = None if directions is None else np.atleast_2d(np.asarray(directions, dtype=float))
    near = _smooth_blocks(kind, points, dirs, Nodes.on(curve, n), grid, lags=min(2, grid.Nt + 1))
    far = _smooth_blocks(kind, points, dirs, Nodes.on(curve, n_far), grid)
    far[:2] = 0.0
    return OffSurfaceOperator(BlockOperator(near, kind, curve.name, "probes"),
                              BlockOperator(far, kind, curve.name, "probes"))


def _eval_at_times(kind, curve, density, times, points, grid, directions=None):
    values = _values(density)
    times = np.atleast_1d(np.asarray(times, dtype=float))
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if len(times) != len(points):
        raise ValueError("need one time per probe point")
    if np.any(times < 0) or np.any(times > grid.T * (1 + 1e-12)):
        raise ValueError("probe times must lie in [0, T]")
    dmin = _probe_distance(curve, points)
    h = grid.ht
    n_far = smooth_count(curve, values.shape[1], h)
    n_near = max(upsampled_count(curve, values.shape[1], dmin), n_far)
    dirs = None if directions is None else np.atleast_2d(np.asarray(directions, dtype=float))
    out = np.zeros(len(times))
    for n_src, near in ((n_near, True), (n_far, False)):
        fine = resample_nodes(values, n_src)
        src = Nodes.on(curve, n_src)
        for p, (t, x) in enumerate(zip(times, points)):
            z = x[None, None, :] - src.points[None, :, :]
            r = np.linalg.norm(z, axis=-1)
            nx = None if dirs is None else dirs[p:p + 1]
            acc = 0.0
            for k in range(1, grid.Nt + 1):
                pieces = pieces_at_time(t, k, h)
                if not pieces:
                    break
                # windows starting below h are near-singular
                pieces = [pc for pc in pieces if (pc[0] < h * (1 - 1e-12)) == near]
                if pieces:
                    K = _kernel(kind, z, r, nx, src.normals, pieces)[0]
                    acc += np.dot(K * src.weights, fine[k])
            out[p] += acc
    return out


def eval_single_layer(curve, density, times, points, grid: SpaceTimeGrid) -> np.ndarray:
    """Single-layer potential at off-boundary probes ``(times[p], points[p])``."""
    return _eval_at_times("single", curve, density, times, points, grid)


def eval_double_layer(curve, density, times, points, grid: SpaceTimeGrid) -> np.ndarray:
    """Double-layer potential at off-boundary probes."""
    return _eval_at_times("double", curve, density, times, points, grid)


def eval_single_layer_derivative(curve, density, times, points, directions, grid) -> np.ndarray:
    """Directional derivative of the single layer at off-boundary probes."""
    return _eval_at_times("single_dn", curve, density, times, points, grid, directions)


def eval_double_layer_derivative(curve, density, times, points, directions, grid) -> np.ndarray:
    return _eval_at_times("double_dn", curve, density, times, points, grid, directions)


def eval_normal_derivative_single_layer(curve: BoundaryCurve, density, target: BoundaryCurve,
                                        grid: SpaceTimeGrid, side: int = +1,
                                        Wstar: BlockOperator | None = None) -> Density:
    """Normal derivative of ``v[density]`` on ``target``.

    On the same curve this is ``side/2 mu + W* mu`` (``side=+1`` interior,
    ``-1`` exterior); on a disjoint curve it is the smooth cross operator.
    """
    mu = _values(density)
    if target == curve:
        if side not in (1, -1):
            raise ValueError("side must be +1 (interior) or -1 (exterior)")
        op = Wstar if Wstar is not None else assemble_Wstar(curve, grid)
        out = 0.5 * side * mu + op.apply(mu)
    else:
        out = assemble_cross(curve, target, grid, "normal-derivative").apply(mu)
    out[0] = 0.0
    return Density(out, target)

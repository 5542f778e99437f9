"""Discretized signed distance field of a watertight mesh plus contact gating.

Unsigned node distances come from a dense surface sampling (spacing tied to
the cell size, so refinement tightens the field), sign from an x-axis
scanline parity test. Queries are trilinear inside the grid and fall back to
boundary value + distance-to-box outside, keeping the far field positive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateMesh, NotWatertight
from .geometry import TriMesh

DEFAULT_RESOLUTION = 96
_MARGIN_CELLS = 3
_SAMPLE_SPACING_CELLS = 0.4


@dataclass
class SdfGrid:
    origin: np.ndarray  # (3,) meters, node (0,0,0)
    cell_size: float
    dims: tuple  # (nx, ny, nz)
    values: np.ndarray  # (nx, ny, nz) meters, negative inside

    def node_coords(self):
        nx, ny, nz = self.dims
        ax = [self.origin[i] + self.cell_size * np.arange(self.dims[i]) for i in range(3)]
        return ax

    @property
    def upper(self):
        return self.origin + self.cell_size * (np.asarray(self.dims) - 1)


def _surface_samples(mesh: TriMesh, spacing: float):
    """Deterministic dense samples covering every triangle at ~spacing."""
    v = mesh.vertices
    a, b, c = v[mesh.faces[:, 0]], v[mesh.faces[:, 1]], v[mesh.faces[:, 2]]
    out = [a, b, c]
    for fa, fb, fc in zip(a, b, c):
        n1 = max(1, int(np.ceil(np.linalg.norm(fb - fa) / spacing)))
        n2 = max(1, int(np.ceil(np.linalg.norm(fc - fa) / spacing)))
        n = max(n1, n2)
        us, ws = np.meshgrid(
            (np.arange(n + 1)) / n, (np.arange(n + 1)) / n, indexing="ij"
        )
        keep = us + ws <= 1.0 + 1e-12
        u, w = us[keep], ws[keep]
        out.append(fa + np.outer(u, fb - fa) + np.outer(w, fc - fa))
    return np.concatenate(out, axis=0)


def _parity_inside(mesh: TriMesh, grid_axes, eps_shift):
    """Inside flags for all grid nodes via x-scanline crossing parity."""
    xs, ys, zs = grid_axes
    nx, ny, nz = len(xs), len(ys), len(zs)
    # Shift the ray lattice slightly off mesh-aligned planes.
    ys_r = ys + eps_shift
    zs_r = zs + eps_shift * 1.137
    v = mesh.vertices
    tris = v[mesh.faces]  # (F, 3, 3)
    inside = np.zeros((nx, ny, nz), dtype=bool)
    # Crossing x-positions per (iy, iz) column collected triangle by triangle.
    col_cross = {}
    for tri in tris:
        ty, tz = tri[:, 1], tri[:, 2]
        iy0 = np.searchsorted(ys_r, ty.min())
        iy1 = np.searchsorted(ys_r, ty.max(), side="right")
        iz0 = np.searchsorted(zs_r, tz.min())
        iz1 = np.searchsorted(zs_r, tz.max(), side="right")
        if iy0 >= iy1 or iz0 >= iz1:
            continue
        gy, gz = np.meshgrid(ys_r[iy0:iy1], zs_r[iz0:iz1], indexing="ij")
        # 2-D barycentric test in the yz plane.
        d = (ty[1] - ty[0]) * (tz[2] - tz[0]) - (tz[1] - tz[0]) * (ty[2] - ty[0])
        if abs(d) < 1e-18:
            continue  # triangle parallel to the ray; measure-zero crossings
        l1 = ((gy - ty[0]) * (tz[2] - tz[0]) - (gz - tz[0]) * (ty[2] - ty[0])) / d
        l2 = ((gz - tz[0]) * (ty[1] - ty[0]) - (gy - ty[0]) * (tz[1] - tz[0])) / d
        hit = (l1 >= 0) & (l2 >= 0) & (l1 + l2 <= 1)
        if not hit.any():
            continue
        l0 = 1 - l1 - l2
        xhit = l0 * tri[0, 0] + l1 * tri[1, 0] + l2 * tri[2, 0]
        hy, hz = np.nonzero(hit)
        for yy, zz, xv in zip(hy + iy0, hz + iz0, xhit[hit]):
            col_cross.setdefault((int(yy), int(zz)), []).append(xv)
    for (iy, iz), crossings in col_cross.items():
        cr = np.sort(np.asarray(crossings))
        counts = np.searchsorted(cr, xs, side="right")
        inside[:, iy, iz] = counts % 2 == 1
    return inside


def build_sdf(mesh: TriMesh, resolution: int = DEFAULT_RESOLUTION) -> SdfGrid:
    if resolution < 16:
        raise ValueError("resolution must be >= 16")
    if not mesh.watertight:
        raise NotWatertight("SDF requires a watertight mesh")
    lo, hi = mesh.aabb
    extent = hi - lo
    longest = float(extent.max())
    if longest <= 0:
        raise DegenerateMesh("mesh has zero extent")
    cell = longest / resolution
    origin = lo - _MARGIN_CELLS * cell
    dims = tuple(int(np.ceil(extent[i] / cell)) + 2 * _MARGIN_CELLS + 1 for i in range(3))
    axes = [origin[i] + cell * np.arange(dims[i]) for i in range(3)]

    samples = _surface_samples(mesh, _SAMPLE_SPACING_CELLS * cell)
    tree = cKDTree(samples)
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
    dist, _ = tree.query(nodes, k=1)
    dist = dist.reshape(dims)

    inside = _parity_inside(mesh, axes, eps_shift=2.718e-5 * cell)
    values = np.where(inside, -dist, dist)
    return SdfGrid(origin=np.asarray(origin, dtype=np.float64), cell_size=cell, dims=dims, values=values)


def query(grid: SdfGrid, pts: np.ndarray) -> np.ndarray:
    """Trilinear SDF lookup; outside bounds: boundary value + box distance."""
    p = np.asarray(pts, dtype=np.float64)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    upper = grid.upper
    clamped = np.clip(p, grid.origin, upper)
    outside = np.linalg.norm(p - clamped, axis=1)

    f = (clamped - grid.origin) / grid.cell_size
    dims = np.asarray(grid.dims)
    i0 = np.clip(np.floor(f).astype(int), 0, dims - 2)
    t = f - i0
    v = grid.values
    ix, iy, iz = i0[:, 0], i0[:, 1], i0[:, 2]
    tx, ty, tz = t[:, 0], t[:, 1], t[:, 2]

    def g(dx, dy, dz):
        return v[ix + dx, iy + dy, iz + dz]

    c00 = g(0, 0, 0) * (1 - tx) + g(1, 0, 0) * tx
    c01 = g(0, 0, 1) * (1 - tx) + g(1, 0, 1) * tx
    c10 = g(0, 1, 0) * (1 - tx) + g(1, 1, 0) * tx
    c11 = g(0, 1, 1) * (1 - tx) + g(1, 1, 1) * tx
    c0 = c00 * (1 - ty) + c10 * ty
    c1 = c01 * (1 - ty) + c11 * ty
    out = c0 * (1 - tz) + c1 * tz + outside
    return float(out[0]) if single else out


def soft_gate(distances: np.ndarray, sigma: float) -> np.ndarray:
    """w = 1 - tanh(sigma * max(0, d)); penetrating vertices keep w = 1."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    d = np.maximum(0.0, np.asarray(distances, dtype=np.float64))
    return 1.0 - np.tanh(sigma * d)


def gating_weights(grid: SdfGrid, local_hand_verts: np.ndarray, sigma: float) -> np.ndarray:
    return soft_gate(query(grid, local_hand_verts), sigma)


def point_mesh_distance(points: np.ndarray, mesh: TriMesh) -> np.ndarray:
    """Exact unsigned point-to-surface distance (brute force over faces)."""
    return closest_mesh_points(points, mesh)[1]


def closest_mesh_points(points: np.ndarray, mesh: TriMesh, block: int = 512, return_faces: bool = False):
    """Exact closest surface points and distances (brute force over faces).

    Points are processed in blocks so the (block, F, 3) broadcast stays
    within a bounded memory footprint. With ``return_faces`` the index of the
    supporting face is returned as a third array.
    """
    p = np.atleast_2d(np.asarray(points, dtype=np.float64))
    v = mesh.vertices
    a = v[mesh.faces[:, 0]]
    b = v[mesh.faces[:, 1]]
    c = v[mesh.faces[:, 2]]
    best = np.empty(len(p))
    feet = np.empty_like(p)
    fids = np.empty(len(p), dtype=np.int64)
    for lo in range(0, len(p), block):
        pb = p[lo : lo + block]
        closest = _point_triangle_closest_many(pb, a, b, c)  # (n, F, 3)
        d2 = np.sum((pb[:, None, :] - closest) ** 2, axis=2)
        idx = np.argmin(d2, axis=1)
        rows = np.arange(len(pb))
        best[lo : lo + block] = np.sqrt(d2[rows, idx])
        feet[lo : lo + block] = closest[rows, idx]
        fids[lo : lo + block] = idx
    if return_faces:
        return feet, best, fids
    return feet, best


def _point_triangle_distance(p, a, b, c):
    return np.linalg.norm(p - _point_triangle_closest(p, a, b, c), axis=1)


def _point_triangle_closest_many(p, a, b, c):
    """Closest points on triangles (a, b, c) (F, 3) for points p (n, 3),
    broadcast over both; returns (n, F, 3). Ericson's region method."""
    ab = b - a  # (F, 3)
    ac = c - a
    ap = p[:, None, :] - a[None, :, :]  # (n, F, 3)
    d1 = np.einsum("nfk,fk->nf", ap, ab)
    d2 = np.einsum("nfk,fk->nf", ap, ac)
    bp = p[:, None, :] - b[None, :, :]
    d3 = np.einsum("nfk,fk->nf", bp, ab)
    d4 = np.einsum("nfk,fk->nf", bp, ac)
    cp = p[:, None, :] - c[None, :, :]
    d5 = np.einsum("nfk,fk->nf", cp, ab)
    d6 = np.einsum("nfk,fk->nf", cp, ac)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    m_a = (d1 <= 0) & (d2 <= 0)
    m_b = (d3 >= 0) & (d4 <= d3)
    m_c = (d6 >= 0) & (d5 <= d6)
    with np.errstate(divide="ignore", invalid="ignore"):
        v_ab = np.where(d1 - d3 != 0, d1 / (d1 - d3), 0.0)
        w_ac = np.where(d2 - d6 != 0, d2 / (d2 - d6), 0.0)
        denom_bc = (d4 - d3) + (d5 - d6)
        w_bc = np.where(denom_bc != 0, (d4 - d3) / denom_bc, 0.0)
    m_ab = ~m_a & ~m_b & (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    m_ac = ~m_a & ~m_c & (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    m_bc = ~m_b & ~m_c & (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)

    denom = va + vb + vc
    with np.errstate(divide="ignore", invalid="ignore"):
        v_in = np.where(denom != 0, vb / denom, 0.0)
        w_in = np.where(denom != 0, vc / denom, 0.0)

    closest = a[None, :, :] + v_in[..., None] * ab[None, :, :] + w_in[..., None] * ac[None, :, :]
    e_bc = b[None, :, :] + np.clip(w_bc, 0, 1)[..., None] * (c - b)[None, :, :]
    e_ac = a[None, :, :] + np.clip(w_ac, 0, 1)[..., None] * ac[None, :, :]
    e_ab = a[None, :, :] + np.clip(v_ab, 0, 1)[..., None] * ab[None, :, :]
    closest = np.where(m_bc[..., None], e_bc, closest)
    closest = np.where(m_ac[..., None], e_ac, closest)
    closest = np.where(m_ab[..., None], e_ab, closest)
    closest = np.where(m_c[..., None], np.broadcast_to(c, closest.shape), closest)
    closest = np.where(m_b[..., None], np.broadcast_to(b, closest.shape), closest)
    closest = np.where(m_a[..., None], np.broadcast_to(a, closest.shape), closest)
    return closest


def _point_triangle_closest(p, a, b, c):
    """Distance from points p (N, 3) to triangle (a, b, c); Ericson's method."""
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = ap @ ab
    d2 = ap @ ac
    bp = p - b
    d3 = bp @ ab
    d4 = bp @ ac
    cp = p - c
    d5 = cp @ ab
    d6 = cp @ ac
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    closest = np.empty_like(p)
    # vertex regions
    m_a = (d1 <= 0) & (d2 <= 0)
    m_b = (d3 >= 0) & (d4 <= d3)
    m_c = (d6 >= 0) & (d5 <= d6)
    # edge regions
    with np.errstate(divide="ignore", invalid="ignore"):
        v_ab = np.where(d1 - d3 != 0, d1 / (d1 - d3), 0.0)
        w_ac = np.where(d2 - d6 != 0, d2 / (d2 - d6), 0.0)
        denom_bc = (d4 - d3) + (d5 - d6)
        w_bc = np.where(denom_bc != 0, (d4 - d3) / denom_bc, 0.0)
    m_ab = ~m_a & ~m_b & (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    m_ac = ~m_a & ~m_c & (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    m_bc = ~m_b & ~m_c & (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)

    denom = va + vb + vc
    with np.errstate(divide="ignore", invalid="ignore"):
        v_in = np.where(denom != 0, vb / denom, 0.0)
        w_in = np.where(denom != 0, vc / denom, 0.0)

    closest[:] = a + np.outer(v_in, ab) + np.outer(w_in, ac)  # interior default
    closest[m_bc] = b + np.outer(np.clip(w_bc[m_bc], 0, 1), c - b)
    closest[m_ac] = a + np.outer(np.clip(w_ac[m_ac], 0, 1), ac)
    closest[m_ab] = a + np.outer(np.clip(v_ab[m_ab], 0, 1), ab)
    closest[m_c] = c
    closest[m_b] = b
    closest[m_a] = a
    return closest

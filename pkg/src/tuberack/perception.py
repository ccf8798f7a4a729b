"""Synthetic point-cloud perception of racks and tubes.

Pipeline: density clustering isolates the rack surface, PCA gives a rough
pose, point-to-point ICP refines it, and points above each hole are binned
and classified by a feature-centroid model registered from a rack whose
contents are known.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .rack import EMPTY, HoleCoord, RackLayout, RackState
from .transforms import RigidTransform, rot_z, wrap_angle
from .world import WorldModel

NOISE = -1


class PerceptionError(ValueError):
    pass


class DegenerateCloud(PerceptionError):
    pass


class DegenerateCorrespondences(PerceptionError):
    pass


class RackNotFound(PerceptionError):
    pass


class MissingTypeExamples(PerceptionError):
    pass


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud has non-finite coordinates")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)

    def transformed(self, T: RigidTransform) -> PointCloud:
        return PointCloud(T.apply(self.points))

    def subset(self, mask: np.ndarray) -> PointCloud:
        return PointCloud(self.points[mask])


@dataclass(frozen=True)
class SensorParams:
    points_per_mm2: float = 1.0
    gauss_sigma_mm: float = 0.0
    dropout_rate: float = 0.0
    reflective_noise_count: int = 0
    seed: int = 0
    side_band_mm: float = 4.0  # visible upper strip of each tube wall
    frustum: tuple[tuple[float, float, float], tuple[float, float, float]] | None = None

    def __post_init__(self) -> None:
        if self.points_per_mm2 <= 0:
            raise ValueError("points_per_mm2 must be positive")
        if not 0.0 <= self.dropout_rate <= 1.0:
            raise ValueError("dropout_rate must lie in [0, 1]")
        if self.gauss_sigma_mm < 0 or self.reflective_noise_count < 0:
            raise ValueError("noise parameters must be non-negative")


@dataclass(frozen=True)
class PerceptionParams:
    eps_mm: float = 3.0
    min_pts: int = 5
    min_rack_points: int = 200
    icp_iters: int = 50
    icp_eps_mm: float = 1e-5
    template_spacing_mm: float = 1.0
    crop_z_min_mm: float = 2.0


def _in_rect(xy: np.ndarray, rect: tuple[float, float, float, float]) -> np.ndarray:
    x0, x1, y0, y1 = rect
    return (xy[:, 0] >= x0) & (xy[:, 0] <= x1) & (xy[:, 1] >= y0) & (xy[:, 1] <= y1)


def _on_rack_top(layout: RackLayout, xy: np.ndarray) -> np.ndarray:
    """Mask of local xy points on the rack's top face (holes cut out, key tab included)."""
    keep = _in_rect(xy, layout.footprint()) | _in_rect(xy, layout.key_tab())
    p, hw = layout.pitch_mm, layout.hole_width_mm / 2.0
    col = np.rint(xy[:, 0] / p)
    row = np.rint(xy[:, 1] / p)
    in_grid = (col >= 0) & (col < layout.cols) & (row >= 0) & (row < layout.rows)
    in_hole = in_grid & (np.abs(xy[:, 0] - col * p) < hw) & (np.abs(xy[:, 1] - row * p) < hw)
    return keep & ~in_hole


def _top_bbox(layout: RackLayout) -> tuple[float, float, float, float]:
    x0, x1, y0, y1 = layout.footprint()
    t0, t1, s0, s1 = layout.key_tab()
    return (min(x0, t0), max(x1, t1), min(y0, s0), max(y1, s1))


def rack_template(layout: RackLayout, spacing_mm: float = 1.0) -> PointCloud:
    """Regular grid over the rack top face, in the rack frame."""
    x0, x1, y0, y1 = _top_bbox(layout)
    xs = np.arange(x0 + spacing_mm / 2.0, x1, spacing_mm)
    ys = np.arange(y0 + spacing_mm / 2.0, y1, spacing_mm)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    xy = np.column_stack([gx.ravel(), gy.ravel()])
    xy = xy[_on_rack_top(layout, xy)]
    return PointCloud(np.column_stack([xy, np.zeros(len(xy))]))


def _scene_frustum(world: WorldModel) -> tuple[np.ndarray, np.ndarray]:
    corners = []
    tops = []
    for layout in world.layouts:
        x0, x1, y0, y1 = _top_bbox(layout)
        local = np.array([[x0, y0, 0.0], [x0, y1, 0.0], [x1, y0, 0.0], [x1, y1, 0.0]])
        corners.append(layout.base_pose.apply(local))
        tops.append(layout.base_pose.translation[2])
    c = np.vstack(corners)
    lo = np.array([c[:, 0].min() - 100.0, c[:, 1].min() - 100.0, min(tops) - 20.0])
    hi = np.array([c[:, 0].max() + 100.0, c[:, 1].max() + 100.0, max(tops) + 150.0])
    return lo, hi


def synth_cloud(world: WorldModel, sp: SensorParams, rng: np.random.Generator | None = None) -> PointCloud:
    """Top-down capture of the rack faces and tube tops with noise, dropout and spurious returns.

    ``rng`` overrides ``sp.seed`` so callers can feed a named sub-stream.
    """
    rng = rng if rng is not None else np.random.default_rng(sp.seed)
    d = sp.points_per_mm2
    rack_pts, tube_pts = [], []
    for k, layout in enumerate(world.layouts):
        x0, x1, y0, y1 = _top_bbox(layout)
        n = int(rng.poisson(d * (x1 - x0) * (y1 - y0)))
        xy = np.column_stack([rng.uniform(x0, x1, n), rng.uniform(y0, y1, n)])
        xy = xy[_on_rack_top(layout, xy)]
        rack_pts.append(layout.base_pose.apply(np.column_stack([xy, np.zeros(len(xy))])))
        for h, tid in world.state.occupied():
            if h.rack != k:
                continue
            t = world.tube(tid)
            centre = np.array([h.col * layout.pitch_mm, h.row * layout.pitch_mm, 0.0])
            n_top = int(rng.poisson(d * math.pi * t.radius_mm**2))
            r = t.radius_mm * np.sqrt(rng.uniform(0.0, 1.0, n_top))
            a = rng.uniform(0.0, 2.0 * math.pi, n_top)
            top = np.column_stack([r * np.cos(a), r * np.sin(a), np.full(n_top, t.protrusion_mm)])
            band = min(sp.side_band_mm, t.protrusion_mm)
            n_side = int(rng.poisson(d * 2.0 * math.pi * t.radius_mm * band))
            a = rng.uniform(0.0, 2.0 * math.pi, n_side)
            side = np.column_stack([t.radius_mm * np.cos(a), t.radius_mm * np.sin(a),
                                    t.protrusion_mm - rng.uniform(0.0, band, n_side)])
            pts = np.vstack([top, side]) + centre
            pts = pts[rng.uniform(0.0, 1.0, len(pts)) >= sp.dropout_rate]
            tube_pts.append(layout.base_pose.apply(pts))
    pts = np.vstack(rack_pts + tube_pts) if rack_pts or tube_pts else np.zeros((0, 3))
    if sp.gauss_sigma_mm > 0:
        pts = pts + rng.normal(0.0, sp.gauss_sigma_mm, pts.shape)
    if sp.reflective_noise_count:
        if sp.frustum is not None:
            lo, hi = np.array(sp.frustum[0], float), np.array(sp.frustum[1], float)
        else:
            lo, hi = _scene_frustum(world)
        pts = np.vstack([pts, rng.uniform(lo, hi, (sp.reflective_noise_count, 3))])
    return PointCloud(pts)


def dbscan(cloud: PointCloud, eps_mm: float, min_pts: int) -> np.ndarray:
    """Density clustering; label per point, ``NOISE`` (-1) for noise.

    Core points are those with at least ``min_pts`` points (themselves
    included) within ``eps_mm``. Clusters are the connected components of
    the core points; a border point joins the cluster of its nearest core
    neighbour, ties broken lexicographically on coordinates, which keeps
    the partition independent of input order. Cluster ids follow first
    appearance in the input.
    """
    if eps_mm <= 0 or min_pts < 1:
        raise ValueError("need eps_mm > 0 and min_pts >= 1")
    pts = cloud.points
    n = len(pts)
    if n == 0:
        return np.full(0, NOISE, dtype=int)
    pairs = cKDTree(pts).query_pairs(eps_mm, output_type="ndarray").reshape(-1, 2)
    core = np.bincount(pairs.ravel(), minlength=n) + 1 >= min_pts
    if not core.any():
        return np.full(n, NOISE, dtype=int)
    both = core[pairs[:, 0]] & core[pairs[:, 1]]
    cc = pairs[both]
    graph = coo_matrix((np.ones(len(cc)), (cc[:, 0], cc[:, 1])), shape=(n, n))
    _, comp = connected_components(graph, directed=False)
    raw = np.where(core, comp, NOISE)
    # border points: nearest core neighbour, ties by core coordinates
    mixed = pairs[core[pairs[:, 0]] ^ core[pairs[:, 1]]]
    if len(mixed):
        border = np.where(core[mixed[:, 0]], mixed[:, 1], mixed[:, 0])
        anchor = np.where(core[mixed[:, 0]], mixed[:, 0], mixed[:, 1])
        d2 = np.sum((pts[border] - pts[anchor]) ** 2, axis=1)
        q = pts[anchor]
        order = np.lexsort((q[:, 2], q[:, 1], q[:, 0], d2, border))
        border, anchor = border[order], anchor[order]
        first = np.ones(len(border), dtype=bool)
        first[1:] = border[1:] != border[:-1]
        raw[border[first]] = raw[anchor[first]]
    # renumber by first appearance in the input
    uniq, first_idx = np.unique(raw[raw != NOISE], return_index=True)
    pos = np.flatnonzero(raw != NOISE)[first_idx]
    rank = np.empty(len(uniq), dtype=int)
    rank[np.argsort(pos)] = np.arange(len(uniq))
    labels = np.full(n, NOISE, dtype=int)
    mask = raw != NOISE
    labels[mask] = rank[np.searchsorted(uniq, raw[mask])]
    return labels


def _principal_frame(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if len(pts) < 3:
        raise DegenerateCloud("need at least 3 points")
    mu = pts.mean(axis=0)
    X = pts - mu
    w, V = np.linalg.eigh(X.T @ X / len(pts))
    order = np.argsort(w)[::-1]
    w, V = w[order], V[:, order]
    if w[1] <= 1e-9 * max(w[0], 1e-300):
        raise DegenerateCloud("points are collinear")
    a1, a3 = V[:, 0], V[:, 2]
    # the sensor looks down -z, so the least-variance axis is turned toward it;
    # a1 then points into the densest quadrant and a2 completes a proper frame.
    # A near-symmetric cloud can still come out turned by 180 degrees, which
    # estimate_rack_pose resolves.
    if a3[2] < 0:
        a3 = -a3
    a2 = np.cross(a3, a1)
    p1, p2 = X @ a1, X @ a2
    counts = {(s1, s2): int(np.sum((np.sign(p1) == s1) & (np.sign(p2) == s2)))
              for s1 in (1, -1) for s2 in (1, -1)}
    s1, _ = max(counts, key=lambda k: (counts[k], k))
    a1, a2 = a1 * s1, a2 * s1
    return mu, np.column_stack([a1, a2, a3])


def pca_align(cloud: PointCloud, template: PointCloud) -> RigidTransform:
    """Template-to-cloud transform aligning centroids and principal axes."""
    mu_c, F_c = _principal_frame(cloud.points)
    mu_t, F_t = _principal_frame(template.points)
    R = F_c @ F_t.T
    return RigidTransform(R, mu_c - R @ mu_t)


def _kabsch(src: np.ndarray, dst: np.ndarray) -> RigidTransform:
    """Least-squares rigid map src -> dst via SVD of the cross-covariance."""
    ms, md = src.mean(axis=0), dst.mean(axis=0)
    H = (src - ms).T @ (dst - md)
    U, _, Vt = np.linalg.svd(H)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0])
    R = Vt.T @ D @ U.T
    return RigidTransform(R, md - R @ ms)


@dataclass
class IcpResult:
    transform: RigidTransform
    residual_mm: float
    history: list[float] = field(default_factory=list)
    iterations: int = 0


def icp_refine(
    cloud: PointCloud,
    template: PointCloud,
    init: RigidTransform,
    max_iters: int = 50,
    conv_eps_mm: float = 1e-6,
) -> IcpResult:
    """Point-to-point ICP refining a template-to-cloud transform.

    Each cloud point is matched to its nearest template point; the update
    is the closed-form rigid fit of the matched pairs. The residual is the
    RMS correspondence distance, which the alternation cannot increase.
    ``history[k]`` is the residual at the start of iteration k; the final
    entry is the returned residual.
    """
    if len(cloud) == 0 or len(template) == 0:
        raise DegenerateCorrespondences("empty cloud or template")
    tree = cKDTree(template.points)
    c = cloud.points
    T = init

    def match(T: RigidTransform) -> tuple[float, np.ndarray]:
        local = T.inverse().apply(c)
        dist, idx = tree.query(local)
        return float(np.sqrt(np.mean(dist**2))), idx

    res, idx = match(T)
    history = [res]
    it = 0
    while it < max_iters:
        matched = template.points[idx]
        if len(np.unique(idx)) < 3:
            raise DegenerateCorrespondences("fewer than 3 distinct correspondences")
        T_new = _kabsch(matched, c)
        res_new, idx_new = match(T_new)
        it += 1
        if res_new > res:
            break  # round-off at convergence; keep the better transform
        improvement = res - res_new
        T, res, idx = T_new, res_new, idx_new
        history.append(res)
        if improvement < conv_eps_mm:
            break
    return IcpResult(T, res, history, it)


def crop_holes(cloud: PointCloud, rack_transform: RigidTransform, layout: RackLayout,
               z_min_mm: float = 2.0) -> list[PointCloud]:
    """Per-hole point sets (row-major) in rack-local coordinates relative to the hole centre.

    A point belongs to a hole when it lies inside the hole's pitch cell and
    more than ``z_min_mm`` above the rack top.
    """
    local = rack_transform.inverse().apply(cloud.points)
    p = layout.pitch_mm
    col = np.rint(local[:, 0] / p).astype(int)
    row = np.rint(local[:, 1] / p).astype(int)
    ok = (col >= 0) & (col < layout.cols) & (row >= 0) & (row < layout.rows) & (local[:, 2] > z_min_mm)
    out = []
    for r in range(layout.rows):
        for cc in range(layout.cols):
            sel = ok & (row == r) & (col == cc)
            out.append(PointCloud(local[sel] - np.array([cc * p, r * p, 0.0])))
    return out


def hole_features(hole: PointCloud, expected_count: float) -> np.ndarray:
    """(top height, RMS horizontal radius, count ratio); zeros for an empty bin."""
    pts = hole.points
    if len(pts) == 0:
        return np.zeros(3)
    top = float(np.percentile(pts[:, 2], 95))
    rms = float(np.sqrt(np.mean(pts[:, 0] ** 2 + pts[:, 1] ** 2)))
    return np.array([top, rms, len(pts) / expected_count])


@dataclass(frozen=True)
class ClassifierModel:
    type_ids: tuple[int, ...]
    centroids: np.ndarray  # one row per type id
    scale: np.ndarray  # per-feature normalisation
    empty_threshold: float  # bins with fewer points are Empty
    expected_count: float

    def classify(self, hole: PointCloud) -> int:
        if len(hole) < self.empty_threshold:
            return EMPTY
        f = hole_features(hole, self.expected_count)
        d = np.sum(((self.centroids - f) / self.scale) ** 2, axis=1)
        return self.type_ids[int(np.argmin(d))]

    def to_dict(self) -> dict:
        return {
            "type_ids": list(self.type_ids),
            "centroids": self.centroids.tolist(),
            "scale": self.scale.tolist(),
            "empty_threshold": self.empty_threshold,
            "expected_count": self.expected_count,
        }

    @classmethod
    def from_dict(cls, d: dict) -> ClassifierModel:
        return cls(tuple(int(t) for t in d["type_ids"]), np.array(d["centroids"], float),
                   np.array(d["scale"], float), float(d["empty_threshold"]), float(d["expected_count"]))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ClassifierModel):
            return NotImplemented
        return (self.type_ids == other.type_ids and np.array_equal(self.centroids, other.centroids)
                and np.array_equal(self.scale, other.scale)
                and self.empty_threshold == other.empty_threshold
                and self.expected_count == other.expected_count)


def expected_hole_count(layout: RackLayout, sp: SensorParams) -> float:
    return sp.points_per_mm2 * layout.pitch_mm**2


def register_classifier(
    hole_clouds: Sequence[Sequence[PointCloud]],
    ground_truth: RackState,
    catalog_ids: Sequence[int],
    expected_count: float,
) -> ClassifierModel:
    """Fit per-type feature centroids from labelled hole bins.

    ``hole_clouds[k]`` lists rack k's bins row-major. The Empty threshold
    sits halfway between the fullest empty bin and the sparsest occupied
    one; without empty examples it is a quarter of the sparsest occupied bin.
    """
    feats: dict[int, list[np.ndarray]] = {}
    empty_counts, occ_counts = [], []
    for k, cells in enumerate(ground_truth.cells):
        if len(hole_clouds[k]) != len(cells):
            raise ValueError(f"rack {k}: {len(hole_clouds[k])} bins for {len(cells)} holes")
        for hole, tid in zip(hole_clouds[k], cells):
            if tid == EMPTY:
                empty_counts.append(len(hole))
            else:
                occ_counts.append(len(hole))
                feats.setdefault(tid, []).append(hole_features(hole, expected_count))
    missing = sorted(set(catalog_ids) - set(feats))
    if missing:
        raise MissingTypeExamples(f"no registration examples for tube ids {missing}")
    ids = tuple(sorted(feats))
    centroids = np.array([np.mean(feats[t], axis=0) for t in ids])
    allf = np.array([f for t in ids for f in feats[t]])
    scale = np.maximum(allf.std(axis=0), 1e-6)
    lo_occ = min(occ_counts)
    if empty_counts:
        thr = (max(empty_counts) + lo_occ) / 2.0
    else:
        thr = lo_occ / 4.0
    return ClassifierModel(ids, centroids, scale, max(thr, 1.0), expected_count)


@dataclass(frozen=True)
class Perception:
    state: RackState
    transforms: tuple[RigidTransform, ...]
    residuals: tuple[float, ...]


def estimate_rack_pose(cluster: PointCloud, template: PointCloud, layout: RackLayout,
                       params: PerceptionParams) -> IcpResult:
    """PCA start, then ICP from both 180 degree yaw hypotheses; lower residual wins.

    The alternative hypothesis turns about the footprint centre, the
    symmetry centre of the hole grid, so it starts inside ICP's basin.
    """
    T0 = pca_align(cluster, template)
    x0, x1, y0, y1 = layout.footprint()
    mu = np.array([(x0 + x1) / 2.0, (y0 + y1) / 2.0, 0.0])
    flip = RigidTransform(rot_z(math.pi), mu - rot_z(math.pi) @ mu)
    best = None
    for init in (T0, T0.compose(flip)):
        r = icp_refine(cluster, template, init, params.icp_iters, params.icp_eps_mm)
        key = (round(r.residual_mm, 9), abs(wrap_angle(r.transform.yaw)))
        if best is None or key < best[0]:
            best = (key, r)
    return best[1]


def perceive(
    cloud: PointCloud,
    layouts: Sequence[RackLayout],
    model: ClassifierModel,
    params: PerceptionParams = PerceptionParams(),
) -> Perception:
    """Estimate occupancy and rack poses from a scene cloud.

    One rack is taken as the largest cluster. With several racks the
    largest clusters are matched to layouts by distance to the centroid
    each layout's nominal pose predicts.
    """
    labels = dbscan(cloud, params.eps_mm, params.min_pts)
    ids, counts = np.unique(labels[labels != NOISE], return_counts=True)
    order = sorted(zip(counts.tolist(), ids.tolist()), key=lambda x: (-x[0], x[1]))
    big = [cid for n, cid in order if n >= params.min_rack_points]
    if len(big) < len(layouts):
        raise RackNotFound(f"found {len(big)} rack-sized clusters, need {len(layouts)}")
    clusters = [cloud.subset(labels == cid) for cid in big[: len(layouts)]]
    templates = [rack_template(l, params.template_spacing_mm) for l in layouts]
    if len(layouts) > 1:
        cents = [c.points.mean(axis=0) for c in clusters]
        assigned = []
        free = list(range(len(clusters)))
        for layout, tmpl in zip(layouts, templates):
            guess = layout.base_pose.apply(tmpl.points.mean(axis=0)[None])[0]
            j = min(free, key=lambda i: (float(np.linalg.norm(cents[i][:2] - guess[:2])), i))
            free.remove(j)
            assigned.append(clusters[j])
        clusters = assigned
    transforms, residuals, cells = [], [], []
    for layout, tmpl, cluster in zip(layouts, templates, clusters):
        fit = estimate_rack_pose(cluster, tmpl, layout, params)
        transforms.append(fit.transform)
        residuals.append(fit.residual_mm)
        bins = crop_holes(cloud, fit.transform, layout, params.crop_z_min_mm)
        cells.append(tuple(model.classify(b) for b in bins))
    shapes = tuple(l.shape for l in layouts)
    return Perception(RackState(shapes, tuple(cells)), tuple(transforms), tuple(residuals))


def flatten_pose(T: RigidTransform) -> RigidTransform:
    """Drop estimated tilt, keeping yaw and translation."""
    return RigidTransform.from_xyz_yaw(*T.translation, T.yaw)


def world_hole_bins(world: WorldModel, cloud: PointCloud, z_min_mm: float = 2.0) -> list[list[PointCloud]]:
    """Bins cropped with the true rack poses (registration uses known placement)."""
    return [crop_holes(cloud, l.base_pose, l, z_min_mm) for l in world.layouts]


def write_xyz(path: str | Path, cloud: PointCloud) -> None:
    np.savetxt(path, cloud.points, fmt="%.6f")


def read_xyz(path: str | Path) -> PointCloud:
    text = Path(path).read_text(encoding="utf-8")
    if not text.strip():
        return PointCloud(np.zeros((0, 3)))
    pts = np.loadtxt(io.StringIO(text), dtype=float, ndmin=2)
    if pts.shape[1] != 3:
        raise ValueError(f"expected 3 columns, got {pts.shape[1]}")
    return PointCloud(pts)


def register_from_world(world: WorldModel, sp: SensorParams, params: PerceptionParams = PerceptionParams(),
                        rng: np.random.Generator | None = None) -> ClassifierModel:
    """Scan ``world`` (whose state is the labelled registration rack) and fit a classifier."""
    cloud = synth_cloud(world, sp, rng)
    bins = world_hole_bins(world, cloud, params.crop_z_min_mm)
    return register_classifier(bins, world.state, [t.id for t in world.tube_catalog],
                               expected_hole_count(world.layouts[0], sp))

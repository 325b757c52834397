"""Point-cloud similarity metrics and 7-parameter registration.

The moving cloud undergoes ``p_hat = K (R_theta p + X)``: rotation by the
fixed z.y.x operator product, translation, then uniform scaling of the
translated point. Distances are always measured from the reference cloud
``s`` into the moving cloud (the metrics are deliberately asymmetric; the
more trusted acquisition is the reference).

Three interchangeable metrics: mean nearest-neighbour distance (D), its
mean-square variant (D2) and the squared point-to-plane projection
(D2_plane). Minimization is derivative-free (Powell line searches over a
maintained direction set); an ICP comparison mode with a closed-form
point-to-plane solve per iteration is provided as well.

Nearest neighbours are exact. One KD-tree is built on the moving cloud;
every objective evaluation maps the reference points through the inverse
transform instead of rebuilding an index on the transformed cloud
(similarity transforms preserve nearest-neighbour assignments, distances
pick up the factor K).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.spatial import cKDTree

from .errors import ContractError
from .mesh import PointCloud

__all__ = [
    "SimilarityTransform",
    "NormalField",
    "RegistrationReport",
    "apply_transform",
    "point_to_point",
    "point_to_point_sq",
    "point_to_plane_sq",
    "estimate_normals",
    "pca_initial_transform",
    "register",
    "register_icp",
]

METRICS = ("point_to_point", "point_to_point_sq", "point_to_plane_sq")


def _rot_x(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1, 0, 0], [0, c, s], [0, -s, c]])


def _rot_y(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0, -s], [0, 1, 0], [s, 0, c]])


def _rot_z(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, s, 0], [-s, c, 0], [0, 0, 1]])


@dataclass(frozen=True)
class SimilarityTransform:
    """Translation X (mm), rotation angles theta (degrees), scale K.

    The rotation operator is the fixed product z(theta3) . y(theta2) .
    x(theta1) of the matrices above, i.e. the sequence theta1 -> theta2 ->
    theta3. Points map as ``K (R p + X)``: the scale multiplies the
    translated point.
    """

    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    angles_deg: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scale: float = 1.0

    def __post_init__(self):
        t = np.asarray(self.translation, dtype=np.float64).reshape(3).copy()
        a = np.asarray(self.angles_deg, dtype=np.float64).reshape(3).copy()
        if not self.scale > 0:
            raise ContractError(f"scale must be positive, got {self.scale}")
        t.flags.writeable = False
        a.flags.writeable = False
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "angles_deg", a)
        object.__setattr__(self, "scale", float(self.scale))

    @classmethod
    def identity(cls):
        return cls()

    def rotation_matrix(self):
        t1, t2, t3 = np.deg2rad(self.angles_deg)
        return _rot_z(t3) @ _rot_y(t2) @ _rot_x(t1)

    @classmethod
    def from_rotation_matrix(cls, rot, translation=(0, 0, 0), scale=1.0):
        """Recover the angle triple from an orthonormal matrix of this convention."""
        rot = np.asarray(rot, dtype=np.float64)
        s2 = np.clip(rot[2, 0], -1.0, 1.0)
        t2 = np.arcsin(s2)
        if abs(rot[2, 0]) < 1.0 - 1e-12:
            t3 = np.arctan2(-rot[1, 0], rot[0, 0])
            t1 = np.arctan2(-rot[2, 1], rot[2, 2])
        else:
            # gimbal lock: fold the x-rotation into the z-rotation
            t1 = 0.0
            t3 = np.arctan2(rot[0, 1], rot[1, 1])
        return cls(translation, np.rad2deg([t1, t2, t3]), scale)

    def apply_points(self, points):
        pts = np.asarray(points, dtype=np.float64)
        return self.scale * (pts @ self.rotation_matrix().T + self.translation)

    def pull_back_points(self, points):
        """Map points through the inverse: ``R^T (q / K - X)``."""
        pts = np.asarray(points, dtype=np.float64)
        return (pts / self.scale - self.translation) @ self.rotation_matrix()

    def inverse(self):
        rot = self.rotation_matrix()
        return SimilarityTransform.from_rotation_matrix(
            rot.T, -(rot.T @ self.translation) * self.scale, 1.0 / self.scale
        )

    def as_dict(self):
        return {
            "translation_mm": self.translation.tolist(),
            "angles_deg": self.angles_deg.tolist(),
            "scale": self.scale,
        }


def apply_transform(transform, cloud):
    """Transformed copy of a point cloud."""
    return PointCloud(transform.apply_points(cloud.points))


@dataclass(frozen=True)
class NormalField:
    """Per-point unit normals attached to a reference cloud."""

    normals: np.ndarray

    def __post_init__(self):
        n = np.asarray(self.normals, dtype=np.float64)
        if n.ndim != 2 or n.shape[1] != 3:
            raise ContractError(f"normals must have shape (n, 3), got {n.shape}")
        lengths = np.linalg.norm(n, axis=1)
        if np.any(np.abs(lengths - 1.0) > 1e-9):
            raise ContractError("normals are not unit length")
        n.flags.writeable = False
        object.__setattr__(self, "normals", n)

    def __len__(self):
        return len(self.normals)


def _nn_indices(s_points, p_points, tree=None):
    tree = tree or cKDTree(p_points)
    _, idx = tree.query(s_points, k=1, workers=-1)
    return idx


def _distances(s_points, p_points, idx):
    diff = s_points - p_points[idx]
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def point_to_point(s, p):
    """Mean Euclidean distance from each reference point to its NN in ``p``."""
    idx = _nn_indices(s.points, p.points)
    return float(np.mean(_distances(s.points, p.points, idx)))


def point_to_point_sq(s, p):
    """Mean squared NN distance (the MSE of the error distribution)."""
    idx = _nn_indices(s.points, p.points)
    diff = s.points - p.points[idx]
    return float(np.mean(np.einsum("ij,ij->i", diff, diff)))


def point_to_plane_sq(s, p, normals):
    """Mean squared projection of the NN displacement on the reference normals."""
    if len(normals) != len(s):
        raise ContractError("normals must cover every reference point")
    idx = _nn_indices(s.points, p.points)
    diff = s.points - p.points[idx]
    proj = np.einsum("ij,ij->i", diff, normals.normals)
    return float(np.mean(proj * proj))


def pca_initial_transform(s, p, allow_scale=True):
    """Coarse alignment of ``p`` onto ``s`` from their principal frames.

    Builds the rotation mapping the moving cloud's principal directions
    onto the reference's, the matching centroid translation, and (when
    allowed) a scale estimate from the total-variance ratio. This is the
    pre-orientation step the minimizers expect: they refine, they do not
    search globally.
    """
    from .orientation import principal_frame

    fs = principal_frame(s)
    fp = principal_frame(p)
    rot = fs.axes.T @ fp.axes
    if allow_scale:
        var_s = np.sum((s.points - fs.centroid) ** 2) / len(s)
        var_p = np.sum((p.points - fp.centroid) ** 2) / len(p)
        k = float(np.sqrt(var_s / var_p))
    else:
        k = 1.0
    x = fs.centroid / k - rot @ fp.centroid
    return SimilarityTransform.from_rotation_matrix(rot, x, k)


def estimate_normals(cloud, k=10):
    """Normals from the PCA of each point's k-neighbourhood covariance.

    The normal is the eigenvector of the smallest eigenvalue. Signs are
    seeded from the +z hemisphere and then smoothed twice against the
    neighbourhood majority; this is consistent for the open, roughly
    horizontal surfaces registration works on (closed surfaces would need
    orientation propagation instead).
    """
    pts = cloud.points
    if k < 3:
        raise ContractError("need k >= 3 neighbours")
    if len(pts) <= k:
        raise ContractError("cloud must contain more than k points")
    tree = cKDTree(pts)
    _, nbrs = tree.query(pts, k=k + 1, workers=-1)  # neighbourhood includes the point
    local = pts[nbrs]
    centered = local - local.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / (k + 1)
    evals, evecs = np.linalg.eigh(cov)
    normals = evecs[:, :, 0].copy()
    degenerate = evals[:, 1] < 1e-12 * np.maximum(evals[:, 2], 1e-300)
    if degenerate.any():
        warnings.warn(
            f"{int(degenerate.sum())} degenerate neighbourhoods (collinear); "
            "falling back to +z",
            stacklevel=2,
        )
        normals[degenerate] = (0.0, 0.0, 1.0)
    flip = normals[:, 2] < 0
    normals[flip] = -normals[flip]
    for _ in range(2):
        mean_nbr = normals[nbrs].sum(axis=1)
        disagree = np.einsum("ij,ij->i", normals, mean_nbr) < 0
        normals[disagree] = -normals[disagree]
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return NormalField(normals)


@dataclass(frozen=True)
class RegistrationReport:
    """Optimal transform plus the three metric values it achieves.

    ``metrics`` holds D, sqrt(D2) and sqrt(D2_plane) in mm, recomputed
    from the final transform. ``objective_history`` is the objective at
    the end of each accepted sweep (non-increasing by construction).
    """

    transform: SimilarityTransform
    metrics: dict
    optimized_metric: str
    iterations: int
    converged: bool
    objective_history: tuple = ()
    method: str = "powell"

    def as_dict(self):
        return {
            "transform": self.transform.as_dict(),
            "metrics_mm": dict(self.metrics),
            "optimized_metric": self.optimized_metric,
            "iterations": self.iterations,
            "converged": self.converged,
            "method": self.method,
        }


class _Objective:
    """Objective over the 7-parameter vector with a frozen KD-tree on p."""

    def __init__(self, s, p, metric, normals):
        self.s = s.points
        self.p = p.points
        self.metric = metric
        self.normals = normals.normals if normals is not None else None
        if metric == "point_to_plane_sq" and self.normals is None:
            raise ContractError("point_to_plane_sq needs normals on the reference cloud")
        self.tree = cKDTree(self.p)
        self.evaluations = 0

    def __call__(self, params):
        x, angles, k = params[0:3], params[3:6], params[6]
        if k <= 1e-9:
            return 1e12 * (1.0 + abs(k))
        self.evaluations += 1
        t = SimilarityTransform(x, angles, k)
        queries = t.pull_back_points(self.s)
        dist, idx = self.tree.query(queries, k=1, workers=-1)
        if self.metric == "point_to_point":
            return k * float(np.mean(dist))
        if self.metric == "point_to_point_sq":
            return k * k * float(np.mean(dist * dist))
        moved = t.apply_points(self.p[idx])
        proj = np.einsum("ij,ij->i", self.s - moved, self.normals)
        return float(np.mean(proj * proj))


# Scaled steps used to make the direction space roughly isotropic:
# millimetres for X, degrees for theta, scale units for K.
_PARAM_STEPS = np.array([1.0, 1.0, 1.0, 0.5, 0.5, 0.5, 0.01])


def _line_minimize(fun, z, direction, f0):
    """Brent line search; never accepts a worse point than the start."""
    g = lambda a: fun(z + a * direction)
    res = minimize_scalar(
        g, bracket=(0.0, 1.0), method="brent", options={"xtol": 1e-6, "maxiter": 60}
    )
    if res.fun < f0:
        return z + res.x * direction, float(res.fun)
    return z, f0


def register(s, p, metric="point_to_point", allow_scale=True, init=None,
             normals=None, normal_k=10, ftol=1e-5, max_sweeps=200):
    """Find the similarity transform of the moving cloud that minimizes a metric.

    Parameters
    ----------
    s, p : PointCloud
        Reference and moving cloud; both should be PCA-oriented and
        roughly overlapping already.
    metric : {"point_to_point", "point_to_point_sq", "point_to_plane_sq"}
    allow_scale : bool
        When False, K stays frozen at its initial value.
    init : SimilarityTransform, optional
        Starting point, identity by default.
    normals : NormalField, optional
        Reference-cloud normals for the plane metric (estimated with
        ``normal_k`` neighbours when omitted).
    ftol : float
        Convergence: relative objective improvement across a full
        direction sweep below this value.

    Returns
    -------
    RegistrationReport
        With ``converged=False`` after ``max_sweeps`` sweeps (diagnostic,
        not an error).
    """
    if metric not in METRICS:
        raise ContractError(f"unknown metric {metric!r}, expected one of {METRICS}")
    if metric == "point_to_plane_sq" and normals is None:
        normals = estimate_normals(s, k=normal_k)
    objective = _Objective(s, p, metric, normals)
    t0 = init if init is not None else SimilarityTransform.identity()
    params = np.concatenate([t0.translation, t0.angles_deg, [t0.scale]])

    active = np.arange(7) if allow_scale else np.arange(6)
    n_active = len(active)
    steps = _PARAM_STEPS

    def fun(z):
        q = params.copy()
        q[active] = z * steps[active]
        return objective(q)

    z = params[active] / steps[active]
    directions = np.eye(n_active)
    f_current = fun(z)
    history = [f_current]
    converged = False
    sweeps = 0

    while sweeps < max_sweeps:
        sweeps += 1
        if sweeps % (3 * 7) == 0:
            directions = np.eye(n_active)  # periodic reset avoids degeneracy
        f_start = f_current
        z_start = z.copy()
        best_drop = 0.0
        best_dir = 0
        for d in range(n_active):
            f_before = f_current
            z, f_current = _line_minimize(fun, z, directions[d], f_current)
            if f_before - f_current > best_drop:
                best_drop = f_before - f_current
                best_dir = d
        # Powell extension: try the net displacement as a new direction.
        displacement = z - z_start
        norm = np.linalg.norm(displacement)
        if norm > 1e-12:
            f_extrap = fun(z_start + 2.0 * displacement)
            if f_extrap < f_start:
                gain = f_start - 2.0 * f_current + f_extrap
                if 2.0 * gain * (f_start - f_current - best_drop) ** 2 < \
                        best_drop * (f_start - f_extrap) ** 2:
                    directions[best_dir] = displacement / norm
                    z, f_current = _line_minimize(fun, z, directions[best_dir], f_current)
        history.append(f_current)
        if 2.0 * (f_start - f_current) <= ftol * (abs(f_start) + abs(f_current)) + 1e-25:
            converged = True
            break

    params[active] = z * steps[active]
    final = SimilarityTransform(params[0:3], params[3:6], params[6])
    report_normals = normals if normals is not None else estimate_normals(s, k=normal_k)
    metrics = evaluate_metrics(s, p, final, report_normals)
    return RegistrationReport(
        transform=final,
        metrics=metrics,
        optimized_metric=metric,
        iterations=sweeps,
        converged=converged,
        objective_history=tuple(history),
        method="powell",
    )


def evaluate_metrics(s, p, transform, normals):
    """D, sqrt(D2), sqrt(D2_plane) in mm for a given transform."""
    moved = apply_transform(transform, p)
    return {
        "D": point_to_point(s, moved),
        "sqrt_D2": float(np.sqrt(point_to_point_sq(s, moved))),
        "sqrt_D2_plane": float(np.sqrt(point_to_plane_sq(s, moved, normals))),
    }


def _rodrigues(omega):
    angle = np.linalg.norm(omega)
    if angle < 1e-30:
        return np.eye(3)
    axis = omega / angle
    k = np.array([
        [0, -axis[2], axis[1]],
        [axis[2], 0, -axis[0]],
        [-axis[1], axis[0], 0],
    ])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)


def register_icp(s, p, scale=1.0, sample_size=10_000, seed=0, normals=None,
                 normal_k=10, ftol=1e-5, max_iterations=100, init=None):
    """Point-to-plane ICP with a closed-form rigid solve per iteration.

    The scale is external: ``p`` is pre-multiplied by ``scale`` and the
    rigid result is folded back into a 7-parameter transform (``init``'s
    scale, if any, is ignored). A random subset of the reference points
    (seeded, drawn once) drives the solve, trading the exhaustive metric
    for speed.
    """
    if normals is None:
        normals = estimate_normals(s, k=normal_k)
    rng = np.random.default_rng(seed)
    n = len(s)
    take = min(sample_size, n)
    sample = np.sort(rng.choice(n, size=take, replace=False))
    s_pts = s.points[sample]
    s_nrm = normals.normals[sample]
    p_scaled = p.points * float(scale)
    tree = cKDTree(p_scaled)

    if init is not None:
        rot = init.rotation_matrix()
        trans = float(scale) * init.translation.copy()
    else:
        rot = np.eye(3)
        trans = np.zeros(3)
    prev_obj = None
    converged = False
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        # query through the inverse of the current rigid guess
        queries = (s_pts - trans) @ rot
        _, idx = tree.query(queries, k=1, workers=-1)
        q = p_scaled[idx] @ rot.T + trans
        resid = np.einsum("ij,ij->i", s_pts - q, s_nrm)
        obj = float(np.mean(resid * resid))
        if prev_obj is not None and \
                2.0 * abs(prev_obj - obj) <= ftol * (abs(prev_obj) + abs(obj)) + 1e-25:
            converged = True
            break
        prev_obj = obj
        a = np.cross(q, s_nrm)
        mat = np.hstack([a, s_nrm])
        sol, *_ = np.linalg.lstsq(mat, resid, rcond=None)
        rot_inc = _rodrigues(sol[0:3])
        rot = rot_inc @ rot
        trans = rot_inc @ trans + sol[3:6]

    final = SimilarityTransform.from_rotation_matrix(
        rot, trans / float(scale), float(scale)
    )
    metrics = evaluate_metrics(s, p, final, normals)
    return RegistrationReport(
        transform=final,
        metrics=metrics,
        optimized_metric="point_to_plane_sq",
        iterations=iterations,
        converged=converged,
        objective_history=(),
        method="icp",
    )

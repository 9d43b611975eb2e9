"""Pose and silhouette evaluation metrics.

Joint errors follow the usual alignment ladder: root translation only
(MPJPE), plus a closed-form least-squares global scale (NMPJPE), plus a full
similarity via orthogonal Procrustes with reflections excluded
(reconstruction error). Units follow the input joints.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateConfiguration, DimMismatch

ROOT_JOINT = 0


@dataclass
class PoseMetrics:
    mpjpe: float
    nmpjpe: float
    rec_error: float

    def as_dict(self) -> dict:
        return {"mpjpe": self.mpjpe, "nmpjpe": self.nmpjpe,
                "rec_error": self.rec_error}


def _check_joints(x, x_gt):
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(x_gt, dtype=np.float64)
    if x.shape != g.shape or x.ndim != 2 or x.shape[1] != 3:
        raise DimMismatch(f"joint arrays {x.shape} vs {g.shape}")
    return x, g


def mpjpe(x, x_gt, root: int = ROOT_JOINT) -> float:
    """Mean per-joint distance after aligning the root joint."""
    x, g = _check_joints(x, x_gt)
    aligned = x - x[root] + g[root]
    return float(np.linalg.norm(aligned - g, axis=1).mean())


def optimal_scale(x, x_gt, root: int = ROOT_JOINT) -> float:
    """Closed-form least-squares global scale after root centering."""
    x, g = _check_joints(x, x_gt)
    xc = x - x[root]
    gc = g - g[root]
    denom = float((xc * xc).sum())
    if denom == 0.0:
        return 1.0
    return float((xc * gc).sum() / denom)


def nmpjpe(x, x_gt, root: int = ROOT_JOINT) -> float:
    """MPJPE after applying the optimal global scale to the estimate."""
    x, g = _check_joints(x, x_gt)
    xc = x - x[root]
    gc = g - g[root]
    s = optimal_scale(x, x_gt, root)
    return float(np.linalg.norm(s * xc - gc, axis=1).mean())


def procrustes_rec_error(x, x_gt) -> float:
    """MPJPE after the optimal similarity (rotation + scale + translation).

    Standard cross-covariance factorization with the determinant correction
    so reflections are excluded.

    Raises:
        DegenerateConfiguration: fewer than 3 joints or collinear joints.
    """
    x, g = _check_joints(x, x_gt)
    k = x.shape[0]
    if k < 3:
        raise DegenerateConfiguration("need at least 3 joints")
    xc = x - x.mean(axis=0)
    gc = g - g.mean(axis=0)
    h = xc.T @ gc
    u, s, vt = np.linalg.svd(h)
    if s[0] == 0.0 or s[1] <= 1e-12 * s[0]:
        raise DegenerateConfiguration("joints are collinear within tolerance")
    d = np.sign(np.linalg.det(vt.T @ u.T))
    corr = np.ones(3)
    corr[-1] = d
    rot = vt.T @ np.diag(corr) @ u.T    # maps estimate onto ground truth
    denom = float((xc * xc).sum())
    scale = float((s * corr).sum() / denom)
    aligned = scale * xc @ rot.T
    return float(np.linalg.norm(aligned - gc, axis=1).mean())


def compute_pose_metrics(x, x_gt) -> PoseMetrics:
    return PoseMetrics(mpjpe=mpjpe(x, x_gt), nmpjpe=nmpjpe(x, x_gt),
                       rec_error=procrustes_rec_error(x, x_gt))


def silhouette_metrics(pred, gt) -> tuple[float, float]:
    """(accuracy, f1) of a predicted foreground mask against ground truth.

    f1 is defined as 1 when both masks are empty.
    """
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise DimMismatch(f"mask shapes {pred.shape} vs {gt.shape}")
    accuracy = float((pred == gt).mean())
    tp = float((pred & gt).sum())
    fp = float((pred & ~gt).sum())
    fn = float((~pred & gt).sum())
    if tp + fp + fn == 0.0:
        f1 = 1.0
    else:
        f1 = 2.0 * tp / (2.0 * tp + fp + fn)
    return accuracy, f1

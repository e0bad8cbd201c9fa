"""Factor graph over camera poses, points and planes, solved with Levenberg-Marquardt.

Residuals
---------
* camera-point: ``meas - project(K, T_cw p_w)`` over ``(u_l, v, u_r)`` in pixels;
* camera-plane: ``q(meas) - q(T_cw^-T pi_w)`` with ``q(pi) = (phi, psi, d)``
  (azimuth, elevation, offset) and the azimuth difference wrapped.

Poses are updated by left multiplication ``exp(xi) T``; planes are updated in
``(phi, psi, d)`` coordinates and re-canonicalized. Every residual is whitened
by its covariance and robustified with a Huber kernel on the whitened norm.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import scipy.linalg

from .errors import DegenerateTrackingError, SolverError
from .geometry import (
    PLANE_D_TOL,
    POLE_TOL,
    Plane,
    Pose,
    canonicalize,
    plane_to_minimal,
    se3_exp,
)
from .stereo import StereoIntrinsics, StereoPixel

log = logging.getLogger(__name__)

MIN_DEPTH = 1e-6


@dataclass
class SolverConfig:
    max_iterations: int = 20
    initial_lambda: float = 1e-4
    lambda_up: float = 10.0
    lambda_down: float = 0.1
    max_lambda_retries: int = 10
    rel_cost_tol: float = 1e-8
    step_tol: float = 1e-10
    huber_delta_point: Optional[float] = 2.0
    huber_delta_plane: Optional[float] = 1.0
    psi_guard: float = np.pi / 2 - 1e-3
    dense_max_params: int = 512
    verbose: bool = False


@dataclass(frozen=True)
class Covariances:
    point_pixel_sigma: float = 1.0
    plane_angle_sigma: float = np.deg2rad(2.0)
    plane_offset_sigma: float = 0.05

    def point(self) -> np.ndarray:
        return np.eye(3) * self.point_pixel_sigma**2

    def plane(self) -> np.ndarray:
        a, o = self.plane_angle_sigma**2, self.plane_offset_sigma**2
        return np.diag([a, a, o])


@dataclass
class PointFactor:
    pose: int
    point: int
    measurement: StereoPixel
    covariance: np.ndarray


@dataclass
class PlaneFactor:
    pose: int
    plane: int
    measurement: Plane  # camera frame, canonical
    covariance: np.ndarray


def _check_covariance(cov):
    cov = np.array(cov, dtype=float).reshape(3, 3)
    if not np.allclose(cov, cov.T) or np.any(np.linalg.eigvalsh(cov) <= 0):
        raise ValueError("covariance must be symmetric positive definite")
    return cov


class FactorGraph:
    """Variables and measurements of one least-squares problem."""

    def __init__(self, K: StereoIntrinsics, covariances: Covariances = Covariances()):
        self.K = K
        self.covariances = covariances
        self.poses: List[Pose] = []
        self.points: List[np.ndarray] = []
        self.planes: List[Plane] = []
        self.point_factors: List[PointFactor] = []
        self.plane_factors: List[PlaneFactor] = []
        self.fixed_poses = set()
        self.fixed_points = set()
        self.fixed_planes = set()

    def add_pose(self, pose: Pose, fixed=False) -> int:
        self.poses.append(pose)
        if fixed:
            self.fixed_poses.add(len(self.poses) - 1)
        return len(self.poses) - 1

    def add_point(self, p, fixed=False) -> int:
        self.points.append(np.array(p, dtype=float).reshape(3))
        if fixed:
            self.fixed_points.add(len(self.points) - 1)
        return len(self.points) - 1

    def add_plane(self, plane: Plane, fixed=False) -> int:
        self.planes.append(canonicalize(plane))
        if fixed:
            self.fixed_planes.add(len(self.planes) - 1)
        return len(self.planes) - 1

    def add_point_factor(self, pose: int, point: int, measurement: StereoPixel, covariance=None) -> int:
        if not (0 <= pose < len(self.poses) and 0 <= point < len(self.points)):
            raise IndexError("point factor references a missing variable")
        cov = self.covariances.point() if covariance is None else _check_covariance(covariance)
        self.point_factors.append(PointFactor(pose, point, measurement, cov))
        return len(self.point_factors) - 1

    def add_plane_factor(self, pose: int, plane: int, measurement: Plane, covariance=None) -> int:
        if not (0 <= pose < len(self.poses) and 0 <= plane < len(self.planes)):
            raise IndexError("plane factor references a missing variable")
        cov = self.covariances.plane() if covariance is None else _check_covariance(covariance)
        self.plane_factors.append(PlaneFactor(pose, plane, canonicalize(measurement), cov))
        return len(self.plane_factors) - 1

    def copy(self) -> "FactorGraph":
        return copy.deepcopy(self)


@dataclass
class SolveReport:
    iterations: int
    initial_chi2: float
    final_chi2: float
    converged: bool
    final_lambda: float
    dense: bool
    # unrobustified whitened chi2 per factor at the solution; inf if inactive
    point_chi2: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))
    plane_chi2: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))

    def summary(self) -> dict:
        return {
            "iterations": self.iterations,
            "initial_chi2": self.initial_chi2,
            "final_chi2": self.final_chi2,
            "converged": self.converged,
        }


# --- batched residual kernels ----------------------------------------------


def _hat_batch(v):
    z = np.zeros(len(v))
    return np.stack(
        [
            np.stack([z, -v[:, 2], v[:, 1]], axis=1),
            np.stack([v[:, 2], z, -v[:, 0]], axis=1),
            np.stack([-v[:, 1], v[:, 0], z], axis=1),
        ],
        axis=1,
    )


def _point_terms(K, R, t, P, meas, jacobians=True):
    pc = np.einsum("nij,nj->ni", R, P) + t
    z = pc[:, 2]
    active = z > MIN_DEPTH
    inv_z = np.where(active, 1.0 / np.where(active, z, 1.0), 0.0)
    x_z, y_z = pc[:, 0] * inv_z, pc[:, 1] * inv_z
    u_l = K.fx * x_z + K.cx
    proj = np.stack([u_l, K.fy * y_z + K.cy, u_l - K.bf * inv_z], axis=1)
    r = np.where(active[:, None], meas - proj, 0.0)
    if not jacobians:
        return r, None, None, active
    n = len(P)
    D = np.zeros((n, 3, 3))
    D[:, 0, 0] = K.fx * inv_z
    D[:, 0, 2] = -K.fx * x_z * inv_z
    D[:, 1, 1] = K.fy * inv_z
    D[:, 1, 2] = -K.fy * y_z * inv_z
    D[:, 2, 0] = D[:, 0, 0]
    D[:, 2, 2] = D[:, 0, 2] + K.bf * inv_z * inv_z
    dpc = np.concatenate([-_hat_batch(pc), np.broadcast_to(np.eye(3), (n, 3, 3))], axis=2)
    J_pose = -np.einsum("nij,njk->nik", D, dpc)
    J_point = -np.einsum("nij,njk->nik", D, R)
    return r, J_pose, J_point, active


def _canonical_signs(n, d):
    s = np.where(d > PLANE_D_TOL, 1.0, -1.0)
    tie = np.abs(d) <= PLANE_D_TOL
    if np.any(tie):
        for i in np.flatnonzero(tie):
            nz = n[i][n[i] != 0.0]
            s[i] = -1.0 if nz.size and nz[0] < 0 else 1.0
    return s


def _minimal_batch(n):
    rho2 = n[:, 0] ** 2 + n[:, 1] ** 2
    phi = np.where(rho2 < POLE_TOL, 0.0, np.arctan2(n[:, 1], n[:, 0]))
    phi = np.where(phi == -np.pi, np.pi, phi)
    psi = np.arcsin(np.clip(n[:, 2], -1.0, 1.0))
    return phi, psi


def _wrap(a):
    w = np.mod(a + np.pi, 2.0 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w)


def _plane_terms(R, t, n_w, d_w, meas_tau, psi_guard, jacobians=True):
    n_raw = np.einsum("nij,nj->ni", R, n_w)
    d_raw = d_w - np.einsum("ni,ni->n", t, n_raw)
    s = _canonical_signs(n_raw, d_raw)
    n_c = n_raw * s[:, None]
    d_c = d_raw * s
    phi_c, psi_c = _minimal_batch(n_c)
    phi_w, psi_w = _minimal_batch(n_w)
    active = (np.abs(psi_c) < psi_guard) & (np.abs(psi_w) < psi_guard)
    r = meas_tau - np.stack([phi_c, psi_c, d_c], axis=1)
    r[:, 0] = _wrap(r[:, 0])
    r = np.where(active[:, None], r, 0.0)
    if not jacobians:
        return r, None, None, active
    n = len(n_w)
    rho2 = np.where(active, n_c[:, 0] ** 2 + n_c[:, 1] ** 2, 1.0)
    cos_psi = np.where(active, np.sqrt(np.maximum(1.0 - n_c[:, 2] ** 2, 0.0)), 1.0)
    Q = np.zeros((n, 3, 4))
    Q[:, 0, 0] = -n_c[:, 1] / rho2
    Q[:, 0, 1] = n_c[:, 0] / rho2
    Q[:, 1, 2] = 1.0 / cos_psi
    Q[:, 2, 3] = 1.0
    Q *= s[:, None, None]

    dpi_xi = np.zeros((n, 4, 6))
    dpi_xi[:, :3, :3] = -_hat_batch(n_raw)
    dpi_xi[:, 3, 3:] = -n_raw

    cf, sf, cp, sp = np.cos(phi_w), np.sin(phi_w), np.cos(psi_w), np.sin(psi_w)
    dn_dphi = np.stack([-cp * sf, cp * cf, np.zeros(n)], axis=1)
    dn_dpsi = np.stack([-sp * cf, -sp * sf, cp], axis=1)
    Rdphi = np.einsum("nij,nj->ni", R, dn_dphi)
    Rdpsi = np.einsum("nij,nj->ni", R, dn_dpsi)
    dpi_tau = np.zeros((n, 4, 3))
    dpi_tau[:, :3, 0] = Rdphi
    dpi_tau[:, :3, 1] = Rdpsi
    dpi_tau[:, 3, 0] = -np.einsum("ni,ni->n", t, Rdphi)
    dpi_tau[:, 3, 1] = -np.einsum("ni,ni->n", t, Rdpsi)
    dpi_tau[:, 3, 2] = 1.0

    J_pose = -np.einsum("nij,njk->nik", Q, dpi_xi)
    J_plane = -np.einsum("nij,njk->nik", Q, dpi_tau)
    return r, J_pose, J_plane, active


# --- single-factor API -----------------------------------------------------


def point_residual(T_cw: Pose, p_w, meas: StereoPixel, K: StereoIntrinsics) -> np.ndarray:
    r, _, _, active = _point_terms(
        K, T_cw.R[None], T_cw.t[None], np.asarray(p_w, dtype=float)[None], meas.as_array()[None], False
    )
    if not active[0]:
        return np.full(3, np.nan)
    return r[0]


def plane_residual(T_cw: Pose, pi_w: Plane, meas: Plane) -> np.ndarray:
    tau = plane_to_minimal(canonicalize(meas)).as_array()
    r, _, _, _ = _plane_terms(
        T_cw.R[None], T_cw.t[None], pi_w.normal[None], np.array([pi_w.d]), tau[None], np.inf, False
    )
    return r[0]


def point_jacobians(T_cw: Pose, p_w, meas: StereoPixel, K: StereoIntrinsics):
    """``(d r / d xi, d r / d p_w)`` for the left-multiplied pose increment."""
    _, Jp, Jl, active = _point_terms(
        K, T_cw.R[None], T_cw.t[None], np.asarray(p_w, dtype=float)[None], meas.as_array()[None]
    )
    if not active[0]:
        return None
    return Jp[0], Jl[0]


def plane_jacobians(T_cw: Pose, pi_w: Plane, meas: Plane, psi_guard=SolverConfig.psi_guard):
    """``(d r / d xi, d r / d tau)`` with ``tau`` the landmark's (phi, psi, d); None in the guard zone."""
    pi_w = canonicalize(pi_w)
    tau = plane_to_minimal(canonicalize(meas)).as_array()
    _, Jp, Jl, active = _plane_terms(
        T_cw.R[None], T_cw.t[None], pi_w.normal[None], np.array([pi_w.d]), tau[None], psi_guard
    )
    if not active[0]:
        return None
    return Jp[0], Jl[0]


def residual_jacobians(graph: FactorGraph, factor, cfg: SolverConfig = SolverConfig()):
    if isinstance(factor, PointFactor):
        return point_jacobians(graph.poses[factor.pose], graph.points[factor.point], factor.measurement, graph.K)
    return plane_jacobians(graph.poses[factor.pose], graph.planes[factor.plane], factor.measurement, cfg.psi_guard)


# --- solver ----------------------------------------------------------------


def _sqrt_info(cov):
    """W with W^T W = cov^-1, batched."""
    L = np.linalg.cholesky(np.linalg.inv(cov))
    return np.swapaxes(L, 1, 2)


class _State:
    __slots__ = ("R", "t", "P", "n", "d")

    def __init__(self, R, t, P, n, d):
        self.R, self.t, self.P, self.n, self.d = R, t, P, n, d


class _Problem:
    """Array view of a FactorGraph plus the free-variable layout."""

    def __init__(self, graph: FactorGraph, cfg: SolverConfig):
        self.cfg = cfg
        self.K = graph.K
        n_pose, n_pt, n_pl = len(graph.poses), len(graph.points), len(graph.planes)
        self.state = _State(
            np.array([p.R for p in graph.poses]).reshape(n_pose, 3, 3),
            np.array([p.t for p in graph.poses]).reshape(n_pose, 3),
            np.array(graph.points, dtype=float).reshape(n_pt, 3),
            np.array([p.normal for p in graph.planes]).reshape(n_pl, 3),
            np.array([p.d for p in graph.planes], dtype=float).reshape(n_pl),
        )
        pf, lf = graph.point_factors, graph.plane_factors
        self.pt_pose = np.array([f.pose for f in pf], dtype=int)
        self.pt_lm = np.array([f.point for f in pf], dtype=int)
        self.pt_meas = np.array([f.measurement.as_array() for f in pf]).reshape(len(pf), 3)
        self.pt_W = _sqrt_info(np.array([f.covariance for f in pf]).reshape(len(pf), 3, 3)) if pf else np.zeros((0, 3, 3))
        self.pl_pose = np.array([f.pose for f in lf], dtype=int)
        self.pl_lm = np.array([f.plane for f in lf], dtype=int)
        self.pl_meas = np.array([plane_to_minimal(f.measurement).as_array() for f in lf]).reshape(len(lf), 3)
        self.pl_W = _sqrt_info(np.array([f.covariance for f in lf]).reshape(len(lf), 3, 3)) if lf else np.zeros((0, 3, 3))

        free_poses = [i for i in range(n_pose) if i not in graph.fixed_poses]
        free_pts = [i for i in range(n_pt) if i not in graph.fixed_points]
        free_pls = [i for i in range(n_pl) if i not in graph.fixed_planes]
        self.free_poses, self.free_pts, self.free_pls = free_poses, free_pts, free_pls
        self.n_pose_blocks = len(free_poses)
        self.n_lm_blocks = len(free_pts) + len(free_pls)
        self.n_params = 6 * self.n_pose_blocks + 3 * self.n_lm_blocks

        pose_block = np.full(n_pose, -1)
        pose_block[free_poses] = np.arange(len(free_poses))
        pt_block = np.full(n_pt, -1)
        pt_block[free_pts] = np.arange(len(free_pts))
        pl_block = np.full(n_pl, -1)
        pl_block[free_pls] = len(free_pts) + np.arange(len(free_pls))
        # stacked factor layout: point factors first, then plane factors
        self.f_pose_block = np.concatenate([pose_block[self.pt_pose], pose_block[self.pl_pose]]).astype(int)
        self.f_lm_block = np.concatenate([pt_block[self.pt_lm], pl_block[self.pl_lm]]).astype(int)
        self.n_pt_f = len(pf)
        self.W = np.concatenate([self.pt_W, self.pl_W])
        delta_pt = np.inf if cfg.huber_delta_point is None else cfg.huber_delta_point
        delta_pl = np.inf if cfg.huber_delta_plane is None else cfg.huber_delta_plane
        self.huber = np.concatenate([np.full(len(pf), delta_pt), np.full(len(lf), delta_pl)])

    # evaluation ---------------------------------------------------------

    def linearize(self, st: _State, jacobians=True):
        r1, Jp1, Jl1, a1 = _point_terms(
            self.K, st.R[self.pt_pose], st.t[self.pt_pose], st.P[self.pt_lm], self.pt_meas, jacobians
        )
        r2, Jp2, Jl2, a2 = _plane_terms(
            st.R[self.pl_pose], st.t[self.pl_pose], st.n[self.pl_lm], st.d[self.pl_lm],
            self.pl_meas, self.cfg.psi_guard, jacobians,
        )
        r = np.concatenate([r1, r2]) if len(r2) else r1
        active = np.concatenate([a1, a2])
        rw = np.einsum("nij,nj->ni", self.W, r)
        chi2 = np.einsum("ni,ni->n", rw, rw)
        e = np.sqrt(chi2)
        over = e > self.huber
        w = np.where(over, self.huber / np.where(over, e, 1.0), 1.0)
        k = np.where(over, self.huber, 0.0)  # keeps inf (disabled kernel) out of the arithmetic
        rho = np.where(over, 2.0 * k * e - k**2, chi2)
        w = np.where(active, w, 0.0)
        cost = float(np.sum(np.where(active, rho, 0.0)))
        out = {"rw": rw, "chi2": np.where(active, chi2, np.inf), "w": w, "cost": cost, "active": active}
        if jacobians:
            Jp = np.concatenate([Jp1, Jp2]) if len(r2) else Jp1
            Jl = np.concatenate([Jl1, Jl2]) if len(r2) else Jl1
            out["Jp"] = np.einsum("nij,njk->nik", self.W, Jp)
            out["Jl"] = np.einsum("nij,njk->nik", self.W, Jl)
        return out

    # normal equations ---------------------------------------------------

    def normal_blocks(self, lin):
        """Weighted Hessian and gradient blocks per factor."""
        w = lin["w"][:, None, None]
        Jp, Jl, rw = lin["Jp"], lin["Jl"], lin["rw"]
        Hpp = w * np.einsum("nki,nkj->nij", Jp, Jp)
        Hll = w * np.einsum("nki,nkj->nij", Jl, Jl)
        Hpl = w * np.einsum("nki,nkj->nij", Jp, Jl)
        gp = lin["w"][:, None] * np.einsum("nki,nk->ni", Jp, rw)
        gl = lin["w"][:, None] * np.einsum("nki,nk->ni", Jl, rw)
        return Hpp, Hll, Hpl, gp, gl

    def _pose_cols(self, blocks, dummy):
        cols = blocks[:, None] * 6 + np.arange(6)
        return np.where(blocks[:, None] >= 0, cols, dummy)

    def dense_system(self, lin):
        n = self.n_params
        nP = 6 * self.n_pose_blocks
        pc = self._pose_cols(self.f_pose_block, n)
        lc = np.where(self.f_lm_block[:, None] >= 0, nP + 3 * self.f_lm_block[:, None] + np.arange(3), n)
        idx = np.concatenate([pc, lc], axis=1)
        J = np.concatenate([lin["Jp"], lin["Jl"]], axis=2)
        Hf = lin["w"][:, None, None] * np.einsum("nki,nkj->nij", J, J)
        g = np.zeros(n + 1)
        np.add.at(g, idx, lin["w"][:, None] * np.einsum("nki,nk->ni", J, lin["rw"]))
        H = np.zeros((n + 1, n + 1))
        np.add.at(H, (idx[:, :, None], idx[:, None, :]), Hf)
        return H[:n, :n], g[:n]

    def solve_dense(self, H, g, lam):
        diag = np.diag(H).copy()
        empty = diag <= 0
        A = H + np.diag(lam * diag + empty)
        c = scipy.linalg.cho_factor(A, lower=True, check_finite=False)
        return scipy.linalg.cho_solve(c, -g, check_finite=False)

    def schur_system(self, lin):
        Hpp_f, Hll_f, Hpl_f, gp_f, gl_f = self.normal_blocks(lin)
        nP = 6 * self.n_pose_blocks
        L = self.n_lm_blocks
        pc = self._pose_cols(self.f_pose_block, nP)
        Hpp = np.zeros((nP + 1, nP + 1))
        np.add.at(Hpp, (pc[:, :, None], pc[:, None, :]), Hpp_f)
        gp = np.zeros(nP + 1)
        np.add.at(gp, pc, gp_f)
        lb = np.where(self.f_lm_block >= 0, self.f_lm_block, L)
        Hll = np.zeros((L + 1, 3, 3))
        np.add.at(Hll, lb, Hll_f)
        gl = np.zeros((L + 1, 3))
        np.add.at(gl, lb, gl_f)
        return {
            "Hpp": Hpp[:nP, :nP], "gp": gp[:nP], "Hll": Hll[:L], "gl": gl[:L],
            "Hpl_f": Hpl_f, "pc": pc, "lb": lb,
        }

    def schur_pairs(self):
        if not hasattr(self, "_pairs"):
            ok = np.flatnonzero((self.f_pose_block >= 0) & (self.f_lm_block >= 0))
            order = ok[np.argsort(self.f_lm_block[ok], kind="stable")]
            lm = self.f_lm_block[order]
            f_idx, g_idx = [], []
            start = 0
            for end in np.append(np.flatnonzero(np.diff(lm)) + 1, len(order)):
                grp = order[start:end]
                a, b = np.meshgrid(grp, grp, indexing="ij")
                f_idx.append(a.ravel())
                g_idx.append(b.ravel())
                start = end
            self._pairs = (
                np.concatenate(f_idx) if f_idx else np.zeros(0, int),
                np.concatenate(g_idx) if g_idx else np.zeros(0, int),
                ok,
            )
        return self._pairs

    def solve_schur(self, sys, lam):
        nP = 6 * self.n_pose_blocks
        L = self.n_lm_blocks
        Hll = sys["Hll"].copy()
        dl = np.einsum("nii->ni", Hll)
        empty = np.all(dl <= 0, axis=1)
        Hll[empty] = np.eye(3)
        dl = np.einsum("nii->ni", Hll)
        Hll[:, np.arange(3), np.arange(3)] += lam * dl
        Linv = np.linalg.inv(np.linalg.cholesky(Hll))  # cholesky raises LinAlgError when not PD
        Hinv = np.einsum("nki,nkj->nij", Linv, Linv)
        Hpl_f, pc, lb = sys["Hpl_f"], sys["pc"], sys["lb"]
        f_idx, g_idx, ok = self.schur_pairs()
        Hinv_ext = np.concatenate([Hinv, np.zeros((1, 3, 3))])
        M = np.einsum("nij,njk->nik", Hpl_f, Hinv_ext[lb])
        gl_ext = np.concatenate([sys["gl"], np.zeros((1, 3))])
        if nP:
            S = sys["Hpp"].copy()
            dp = np.diag(S).copy()
            S[np.diag_indices(nP)] += lam * dp + (dp <= 0)
            S = np.pad(S, ((0, 1), (0, 1)))
            blocks = np.einsum("pij,pkj->pik", M[f_idx], Hpl_f[g_idx])
            np.add.at(S, (pc[f_idx][:, :, None], pc[g_idx][:, None, :]), -blocks)
            rhs = np.zeros(nP + 1)
            rhs[:nP] = -sys["gp"]
            Mg = np.einsum("nij,nj->ni", M[ok], gl_ext[lb[ok]])
            np.add.at(rhs, pc[ok], Mg)
            c = scipy.linalg.cho_factor(S[:nP, :nP], lower=True, check_finite=False)
            dpose = scipy.linalg.cho_solve(c, rhs[:nP], check_finite=False)
        else:
            dpose = np.zeros(0)
        dpose_ext = np.append(dpose, 0.0)
        back = np.zeros((L + 1, 3))
        np.add.at(back, lb[ok], np.einsum("nji,nj->ni", Hpl_f[ok], dpose_ext[pc[ok]]))
        dlm = -np.einsum("nij,nj->ni", Hinv, sys["gl"] + back[:L])
        return np.concatenate([dpose, dlm.ravel()])

    # update -------------------------------------------------------------

    def apply(self, st: _State, delta) -> _State:
        R, t, P, n, d = st.R.copy(), st.t.copy(), st.P.copy(), st.n.copy(), st.d.copy()
        nP = 6 * self.n_pose_blocks
        for k, i in enumerate(self.free_poses):
            T = (se3_exp(delta[6 * k: 6 * k + 6]) @ Pose(R[i], t[i])).orthonormalized()
            R[i], t[i] = T.R, T.t
        dl = delta[nP:].reshape(-1, 3)
        npt = len(self.free_pts)
        if npt:
            P[self.free_pts] += dl[:npt]
        if self.free_pls:
            idx = np.array(self.free_pls)
            phi, psi = _minimal_batch(n[idx])
            phi = phi + dl[npt:, 0]
            psi = psi + dl[npt:, 1]
            dd = d[idx] + dl[npt:, 2]
            cp = np.cos(psi)
            nn = np.stack([cp * np.cos(phi), cp * np.sin(phi), np.sin(psi)], axis=1)
            s = _canonical_signs(nn, dd)
            n[idx] = nn * s[:, None]
            d[idx] = dd * s
        return _State(R, t, P, n, d)

    def write_back(self, graph: FactorGraph, st: _State) -> FactorGraph:
        out = graph.copy()
        for i in self.free_poses:
            out.poses[i] = Pose(st.R[i], st.t[i])
        for i in self.free_pts:
            out.points[i] = st.P[i].copy()
        for i in self.free_pls:
            out.planes[i] = Plane(st.n[i], st.d[i])
        return out


def _check_gauge(graph: FactorGraph):
    has_free_pose = len(graph.fixed_poses) < len(graph.poses)
    if not has_free_pose:
        return
    anchored = graph.fixed_poses or graph.fixed_points or graph.fixed_planes
    if not anchored:
        raise ValueError("gauge freedom: fix at least one pose (or the landmarks)")


def solve(graph: FactorGraph, cfg: SolverConfig = SolverConfig()) -> Tuple[FactorGraph, SolveReport]:
    """Minimize the robustified, whitened sum of squared residuals.

    Returns an optimized copy of ``graph`` and a :class:`SolveReport`. Only
    steps that lower the robust cost are accepted; a rejected step raises the
    damping and leaves the variables untouched.
    """
    _check_gauge(graph)
    prob = _Problem(graph, cfg)
    dense = prob.n_params <= cfg.dense_max_params
    st = prob.state
    lin = prob.linearize(st, jacobians=True)
    cost = initial = lin["cost"]
    lam = cfg.initial_lambda
    converged = prob.n_params == 0 or cost == 0.0
    it = 0
    while not converged and it < cfg.max_iterations:
        it += 1
        system = prob.dense_system(lin) if dense else prob.schur_system(lin)
        accepted = solved = False
        step_norm = np.nan
        for _ in range(cfg.max_lambda_retries + 1):
            try:
                delta = prob.solve_dense(*system, lam) if dense else prob.solve_schur(system, lam)
            except np.linalg.LinAlgError:
                lam *= cfg.lambda_up
                continue
            if not np.all(np.isfinite(delta)):
                lam *= cfg.lambda_up
                continue
            solved = True
            step_norm = float(np.linalg.norm(delta))
            if step_norm < cfg.step_tol:
                converged = True
                break
            trial = prob.apply(st, delta)
            trial_lin = prob.linearize(trial, jacobians=False)
            if trial_lin["cost"] < cost:
                rel = (cost - trial_lin["cost"]) / cost
                st, cost = trial, trial_lin["cost"]
                lin = prob.linearize(st, jacobians=True)
                lam = max(lam * cfg.lambda_down, 1e-12)
                accepted = True
                converged = rel < cfg.rel_cost_tol
                break
            lam *= cfg.lambda_up
        if cfg.verbose or log.isEnabledFor(logging.DEBUG):
            log.debug("iter %d chi2 %.6e lambda %.1e step %.3e", it, cost, lam, step_norm)
        if not solved:
            raise SolverError(
                f"normal equations singular after {cfg.max_lambda_retries} damping retries "
                f"(iteration {it}, lambda {lam:.3g}, {prob.n_params} parameters, "
                f"{len(graph.point_factors)} point / {len(graph.plane_factors)} plane factors)"
            )
        if not accepted and not converged:
            # no descent possible at any tried damping: numerically at a minimum
            converged = True
    final = prob.linearize(st, jacobians=False)
    report = SolveReport(
        iterations=it,
        initial_chi2=initial,
        final_chi2=final["cost"],
        converged=bool(converged),
        final_lambda=lam,
        dense=dense,
        point_chi2=final["chi2"][: prob.n_pt_f],
        plane_chi2=final["chi2"][prob.n_pt_f:],
    )
    return prob.write_back(graph, st), report


MIN_TRACKING_FACTORS = 3
RANK_TOL = 1e-12


def solve_pose_only(graph: FactorGraph, cfg: SolverConfig = SolverConfig()) -> Tuple[Pose, SolveReport]:
    """Optimize the single pose of ``graph`` against fixed landmarks."""
    if len(graph.poses) != 1:
        raise ValueError("pose-only graph must contain exactly one pose")
    g = graph.copy()
    g.fixed_poses = set()
    g.fixed_points = set(range(len(g.points)))
    g.fixed_planes = set(range(len(g.planes)))
    prob = _Problem(g, cfg)
    lin = prob.linearize(prob.state, jacobians=True)
    n_active = int(np.count_nonzero(lin["active"]))
    if n_active < MIN_TRACKING_FACTORS:
        raise DegenerateTrackingError(f"only {n_active} usable factors; need {MIN_TRACKING_FACTORS}")
    Jp = lin["Jp"][lin["active"]]
    H = np.einsum("nki,nkj->ij", Jp, Jp)
    ev = np.linalg.eigvalsh(H)
    if ev[0] <= RANK_TOL * max(ev[-1], 1e-300):
        raise DegenerateTrackingError(f"pose information matrix rank deficient (eigenvalues {ev[0]:.3g}..{ev[-1]:.3g})")
    out, report = solve(g, cfg)
    return out.poses[0], report

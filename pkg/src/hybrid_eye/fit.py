"""Training losses and desk-scale inverse rendering.

``VoxelShRegressor`` recovers per-voxel SH transfer for a fixed density and
albedo from images under many lighting conditions. Rendered radiance is
linear in the transfer coefficients (clamps inactive), so the fit runs in two
linear stages: per pixel, solve for the 81-vector that maps lighting SH to
radiance; then project those per-pixel vectors onto voxel coefficients
through the sparse sample-to-voxel interpolation weights.

``EyePoseRefiner`` minimises the sRGB image loss (plus the offset prior when
shape is refined) over the per-frame eyeball pose with a finite-difference
trust-region solver, run coarse to fine over blurred residual images.
"""

import time
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
from scipy.ndimage import gaussian_filter
from scipy.optimize import least_squares
from scipy.sparse.linalg import splu
from sklearn.base import BaseEstimator

from ._validation import ValidationError
from .envmap import LightingContext
from .eye_model import EyePose, EyeShapeParams, RigidTransform, generate_mesh
from .bvh import BVH
from .field import C00_FLOOR, N_DIFFUSE, N_SPECULAR
from .imageio import srgb_encode
from .rays import EyeSurface
from .render import SamplingConfig, merge_traces, render_image, shade_trace, trace_image
from .rotations import matrix_to_rotvec, rotvec_to_matrix
from .sh import SPECULAR_ORDER, sh_basis

SCLERA_THRESHOLD = 0.9


# --- losses ------------------------------------------------------------------

@dataclass(frozen=True)
class LossWeights:
    lambda_im: float = 1.0
    lambda_noneg: float = 1e-2
    lambda_spec: float = 5e-4
    lambda_off: float = 1e-6

    def __post_init__(self):
        for k, v in vars(self).items():
            if v < 0:
                raise ValidationError(f"{k} must be nonnegative")


def sclera_mask(target, region=None, threshold=SCLERA_THRESHOLD):
    """Keep-mask: drops pixels of the sclera region whose target luminance exceeds ``threshold``.

    ``region`` is an (H, W) bool array marking sclera pixels; without it no pixel is dropped.
    """
    target = np.asarray(target)
    keep = np.ones(target.shape[:-1], dtype=bool)
    if region is None:
        return keep
    lum = target @ np.array([0.2126, 0.7152, 0.0722])
    return keep & ~(np.asarray(region, dtype=bool) & (lum > threshold))


def loss_image(rendered, target, mask=None):
    """Mean over kept pixels of the squared sRGB-space colour difference (summed over channels)."""
    rendered = np.asarray(rendered, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if rendered.shape != target.shape:
        raise ValidationError(f"image shapes differ: {rendered.shape} vs {target.shape}")
    d = np.sum((srgb_encode(rendered) - srgb_encode(target)) ** 2, axis=-1)
    if mask is None:
        return float(d.mean())
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValidationError("every pixel is masked out")
    return float(d[mask].mean())


def random_directions(n, rng):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def loss_nonneg(specular, n_dirs=10, seed=0, squared=True):
    """Penalty on negative specular transfer along ``n_dirs`` random directions per sample."""
    c = np.atleast_2d(np.asarray(specular, dtype=np.float64))
    if n_dirs < 1:
        raise ValidationError("n_dirs must be >= 1")
    order = int(round(np.sqrt(c.shape[1]))) - 1
    rng = np.random.default_rng(seed)
    dirs = random_directions(n_dirs * len(c), rng).reshape(len(c), n_dirs, 3)
    vals = np.einsum("nkj,nj->nk", sh_basis(dirs, order), c)
    neg = -np.minimum(vals, 0.0)
    return float(np.mean(neg**2 if squared else neg))


def loss_spec(specular):
    c = np.atleast_2d(np.asarray(specular, dtype=np.float64))
    return float(np.mean(np.sum(c**2, axis=1)) / c.shape[1])


def loss_offsets(params):
    return float(np.sum(np.asarray(params.vertex_offsets) ** 2))


def total_loss(parts, weights=LossWeights()):
    """Weighted sum; ``parts`` maps any of im/noneg/spec/off to a value (missing parts are 0)."""
    unknown = set(parts) - {"im", "noneg", "spec", "off"}
    if unknown:
        raise ValidationError(f"unknown loss parts {sorted(unknown)}")
    return (
        weights.lambda_im * parts.get("im", 0.0)
        + weights.lambda_noneg * parts.get("noneg", 0.0)
        + weights.lambda_spec * parts.get("spec", 0.0)
        + weights.lambda_off * parts.get("off", 0.0)
    )


# --- observations ------------------------------------------------------------

@dataclass
class Observation:
    camera: object
    lighting: LightingContext
    image: np.ndarray
    mask: np.ndarray = None

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float64)
        if self.image.shape != (self.camera.height, self.camera.width, 3):
            raise ValidationError(
                f"observation image {self.image.shape} does not match camera {self.camera.width}x{self.camera.height}"
            )
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=bool).reshape(self.camera.height, self.camera.width)


def _group_by_camera(observations):
    groups = []
    for ob in observations:
        for g in groups:
            if g[0] is ob.camera:
                g[1].append(ob)
                break
        else:
            groups.append((ob.camera, [ob]))
    return groups


def _lighting_matrix(ctxs, order=SPECULAR_ORDER):
    """(K, 81, 3) lighting SH per condition, zero-padded/truncated to ``order``."""
    n = (order + 1) ** 2
    out = np.zeros((len(ctxs), n, 3))
    for k, c in enumerate(ctxs):
        v = c.env_sh.values
        m = min(n, v.shape[0])
        out[k, :m] = v[:m]
    return out


# --- voxel SH fit --------------------------------------------------------------

class VoxelShRegressor(BaseEstimator):
    """Fit voxel SH transfer for a fixed-geometry scene from images under known lighting.

    Parameters
    ----------
    scene : RenderScene whose ``field`` (VoxelShField or FieldUnion) supplies
        the known density and albedo; its SH payload is ignored.
    sampling : SamplingConfig used for both tracing and re-rendering.
    ridge : "auto" applies ``ridge_weight`` only when the lighting set cannot
        determine all 81 transfer coefficients; a float forces that weight;
        0 disables it, and a rank-deficient lighting set then raises.
    stage2_eps : relative Tikhonov weight keeping the voxel projection well posed
        for voxels that no pixel constrains.
    n_albedo_rounds : alternating albedo updates after the transfer fit,
        each accepted only if it lowers the residual.
    """

    def __init__(self, scene=None, sampling=SamplingConfig(jitter=False), ridge="auto", ridge_weight=5e-4,
                 stage2_eps=1e-10, n_albedo_rounds=0, threads=1):
        self.scene = scene
        self.sampling = sampling
        self.ridge = ridge
        self.ridge_weight = ridge_weight
        self.stage2_eps = stage2_eps
        self.n_albedo_rounds = n_albedo_rounds
        self.threads = threads

    # stage 1 -------------------------------------------------------------
    def _ridge_for(self, E):
        rank = np.linalg.matrix_rank(E.transpose(0, 2, 1).reshape(-1, E.shape[1]))
        full = rank >= E.shape[1]
        if self.ridge == "auto":
            return 0.0 if full else float(self.ridge_weight), rank
        lam = float(self.ridge)
        if lam == 0.0 and not full:
            raise ValidationError(
                f"lighting conditions span only {rank} of {E.shape[1]} SH dimensions; "
                "add more lighting conditions or enable the ridge"
            )
        return lam, rank

    @staticmethod
    def _solve_transfer(E, Y, lam):
        """Per pixel and channel, z minimising sum_k (z . E[k,:,ch] - Y[k,pix,ch])^2 + lam |z|^2."""
        n_pix = Y.shape[1]
        Z = np.zeros((n_pix, 3, E.shape[1]))
        for ch in range(3):
            A = E[:, :, ch]
            G = A.T @ A + lam * np.eye(A.shape[1])
            Z[:, ch] = np.linalg.solve(G, A.T @ Y[:, :, ch]).T
        return Z

    # trace -> sparse maps --------------------------------------------------
    def _maps(self, trace, field):
        idx, tri, inside = field.stencil(trace.s_canon)
        if not np.all(inside):
            raise ValidationError("traced sample outside the voxel grid carries weight")
        nv = field.n_voxels
        albedo = np.einsum("nk,nkc->nc", tri, field.albedo[idx])
        rows = np.repeat(trace.s_pix, 8)
        wq = (trace.s_w[:, None] * tri).ravel()
        shape = (trace.n_pixels, nv)
        Q = sp.csr_matrix((wq, (rows, idx.ravel())), shape=shape)
        P = [
            sp.csr_matrix(((trace.s_w[:, None] * tri * albedo[:, ch:ch + 1]).ravel(), (rows, idx.ravel())), shape=shape)
            for ch in range(3)
        ]
        return P, Q

    def _terminals(self, trace, ctxs):
        out = np.zeros((len(ctxs), trace.n_pixels, 3))
        if len(trace.t_pix):
            for k, c in enumerate(ctxs):
                e = c.env_lookup(trace.t_dir) * trace.t_w[:, None]
                for ch in range(3):
                    out[k, :, ch] = np.bincount(trace.t_pix, weights=e[:, ch], minlength=trace.n_pixels)
        return out

    # stage 2 ----------------------------------------------------------------
    def _project(self, Ps, Qs, Zs, keeps):
        """Voxel coefficients best reproducing the per-pixel transfer vectors."""
        P = [sp.vstack([p[ch][k] for p, k in zip(Ps, keeps)]).tocsc() for ch in range(3)]
        Q = sp.vstack([q[k] for q, k in zip(Qs, keeps)]).tocsc()
        Z = np.concatenate([z[k] for z, k in zip(Zs, keeps)])
        nv = Q.shape[1]

        A1 = sp.vstack([sp.hstack([P[ch], Q]) for ch in range(3)]).tocsc()
        G1 = (A1.T @ A1).tocsc()
        d1 = G1.diagonal()
        eps1 = self.stage2_eps * max(float(d1.mean()), 1e-300)
        lu1 = splu((G1 + sp.diags(np.full(2 * nv, eps1))).tocsc())
        rhs1 = A1.T @ np.concatenate([Z[:, ch, :N_DIFFUSE] for ch in range(3)])
        x1 = lu1.solve(np.asarray(rhs1))

        A2 = sp.vstack([Q, Q, Q]).tocsc()
        G2 = (A2.T @ A2).tocsc()
        eps2 = self.stage2_eps * max(float(G2.diagonal().mean()), 1e-300)
        lu2 = splu((G2 + sp.diags(np.full(nv, eps2))).tocsc())
        rhs2 = A2.T @ np.concatenate([Z[:, ch, N_DIFFUSE:] for ch in range(3)])
        x2 = lu2.solve(np.asarray(rhs2))

        diffuse = x1[:nv]
        specular = np.concatenate([x1[nv:], x2], axis=1)
        return diffuse, specular

    def fit(self, X, y=None):
        """Fit from a list of :class:`Observation` (any mix of cameras); ``y`` is unused."""
        t_start = time.perf_counter()
        observations = list(X)
        if not observations:
            raise ValidationError("no observations")
        scene = self.scene
        field = scene.field
        self.cameras_, self.traces_, self.lightings_ = [], [], []
        Ps, Qs, Zs, keeps, resid = [], [], [], [], 0.0
        self.ridge_used_, self.rank_ = [], []
        for cam, obs in _group_by_camera(observations):
            trace = merge_traces(trace_image(cam, scene, self.sampling, self.threads))
            ctxs = [o.lighting for o in obs]
            E = _lighting_matrix(ctxs)
            lam, rank = self._ridge_for(E)
            Y = np.stack([o.image.reshape(-1, 3) for o in obs]) - self._terminals(trace, ctxs)
            Z = self._solve_transfer(E, Y, lam)
            fitted = np.einsum("pcj,kjc->kpc", Z, E)
            keep = np.ones(trace.n_pixels, dtype=bool)
            for o in obs:
                if o.mask is not None:
                    keep &= o.mask.ravel()
            resid += float(np.sum((fitted - Y)[:, keep] ** 2))
            P, Q = self._maps(trace, field)
            Ps.append(P); Qs.append(Q); Zs.append(Z); keeps.append(keep)
            self.cameras_.append(cam); self.traces_.append(trace)
            self.ridge_used_.append(lam); self.rank_.append(rank)
        diffuse, specular = self._project(Ps, Qs, Zs, keeps)
        diffuse[:, 0] = np.maximum(diffuse[:, 0], C00_FLOOR)
        specular[:, 0] = np.maximum(specular[:, 0], C00_FLOOR)
        self.field_ = field.with_sh(diffuse, specular)
        self.transfer_ = Zs
        self.transfer_residual_ = resid
        self.history_ = [self._projection_residual(self.field_, Ps, Qs, Zs, keeps)]
        for _ in range(int(self.n_albedo_rounds)):
            self._albedo_round(Zs, keeps, Qs)
        self.timings_ = {"fit": time.perf_counter() - t_start}
        return self

    def _projection_residual(self, field, Ps, Qs, Zs, keeps):
        total = 0.0
        for P, Q, Z, keep in zip(Ps, Qs, Zs, keeps):
            S = Q @ field.specular
            for ch in range(3):
                pred = S.copy()
                pred[:, :N_DIFFUSE] += P[ch] @ field.diffuse
                total += float(np.sum((pred - Z[:, ch])[keep] ** 2))
        return total

    def _albedo_round(self, Zs, keeps, Qs):
        """One albedo update for fixed transfer, then a transfer refit; kept only if the residual drops."""
        field = self.field_
        idx_all, tri_all, w_all, pix_all, rows_off = [], [], [], [], 0
        for tr, keep in zip(self.traces_, keeps):
            idx, tri, _ = field.stencil(tr.s_canon)
            sel = keep[tr.s_pix]
            idx_all.append(idx[sel]); tri_all.append(tri[sel]); w_all.append(tr.s_w[sel])
            pix_all.append(tr.s_pix[sel] + rows_off)
            rows_off += tr.n_pixels
        idx = np.concatenate(idx_all); tri = np.concatenate(tri_all)
        w = np.concatenate(w_all); pix = np.concatenate(pix_all)
        Z = np.concatenate(Zs)
        Q = sp.vstack(Qs).tocsr()
        S = Q @ field.specular
        d = np.einsum("nk,nkj->nj", tri, field.diffuse[idx])  # interpolated diffuse transfer per sample
        nv = field.n_voxels
        new_albedo = field.albedo.copy()
        for ch in range(3):
            target = (Z[:, ch, :N_DIFFUSE] - S[:, :N_DIFFUSE])
            # rows (pix, j), cols voxel; entries w * tri * d_j
            rows = (pix[:, None, None] * N_DIFFUSE + np.arange(N_DIFFUSE)[None, None, :])
            rows = np.broadcast_to(rows, (len(w), 8, N_DIFFUSE))
            cols = np.broadcast_to(idx[:, :, None], rows.shape)
            vals = (w[:, None, None] * tri[:, :, None] * d[:, None, :])
            M = sp.csr_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(len(Z) * N_DIFFUSE, nv))
            G = (M.T @ M).tocsc()
            eps = self.stage2_eps * max(float(G.diagonal().mean()), 1e-300)
            rhs = M.T @ target.ravel()
            new_albedo[:, ch] = np.clip(splu((G + sp.diags(np.full(nv, eps))).tocsc()).solve(rhs), 0.0, 1.0)
        candidate_scene = replace(self.scene, field=field.with_albedo(new_albedo))
        Ps, Qs2 = [], []
        for tr in self.traces_:
            P, Qn = self._maps(tr, candidate_scene.field)
            Ps.append(P); Qs2.append(Qn)
        diffuse, specular = self._project(Ps, Qs2, Zs, keeps)
        diffuse[:, 0] = np.maximum(diffuse[:, 0], C00_FLOOR)
        specular[:, 0] = np.maximum(specular[:, 0], C00_FLOOR)
        cand = candidate_scene.field.with_sh(diffuse, specular)
        r = self._projection_residual(cand, Ps, Qs2, Zs, keeps)
        if r <= self.history_[-1]:
            self.field_ = cand
            self.history_.append(r)
        else:
            self.history_.append(self.history_[-1])

    def predict(self, X):
        """Re-rendered HDR images for observations' (camera, lighting) pairs using the fitted field."""
        scene = replace(self.scene, field=self.field_)
        out = []
        for ob in X:
            cam = ob.camera
            ctx = ob.lighting
            out.append(render_image(cam, scene, ctx, self.sampling, self.threads))
        return np.stack(out)

    def predict_traced(self, lightings, camera_index=0):
        """Fast re-render for many lightings by shading the stored trace."""
        tr = self.traces_[camera_index]
        cam = self.cameras_[camera_index]
        img = shade_trace(tr, self.field_, list(lightings), self.scene.shadow_branch_enabled)
        return img.reshape(len(lightings), cam.height, cam.width, 3)


def fit_voxel_sh(observations, scene, sampling=SamplingConfig(jitter=False), **kw):
    return VoxelShRegressor(scene, sampling, **kw).fit(observations).field_


# --- pose refinement -------------------------------------------------------------

POSE_SCALE = np.array([0.01, 0.01, 0.01, 0.1, 0.1, 0.1])   # rad, rad, rad, mm, mm, mm
SHAPE_SCALE = np.array([0.05, 0.05, 0.05, 0.01, 0.01])      # b, c, d (mm), theta_mod, theta_offset
SHAPE_FIELDS = ("b", "c", "d", "theta_mod", "theta_offset")


class EyePoseRefiner(BaseEstimator):
    """Photometric refinement of the per-frame eyeball pose (optionally the five shape scalars).

    The solver works in scaled units (``pose_scale`` per parameter), the
    desk-scale counterpart of per-parameter gradient premultiplication.
    Moving image edges make the loss grow almost linearly with pose error, so
    the solve runs once per entry of ``blur_schedule`` (Gaussian sigma in
    pixels applied to the residual image) and the last stage should be 0,
    which is the unblurred loss. ``converged_`` is True when the final loss
    is at most ``loss_tol``.
    """

    def __init__(self, scene=None, params=None, sampling=SamplingConfig(n_coarse=32, n_fine=32, jitter=False),
                 weights=LossWeights(), refine_shape=False, max_nfev=20, loss_tol=1e-6, diff_step=0.3,
                 pose_scale=tuple(POSE_SCALE), shape_scale=tuple(SHAPE_SCALE), blur_schedule=(2.0, 1.0, 0.0),
                 threads=1):
        self.scene = scene
        self.params = params
        self.sampling = sampling
        self.weights = weights
        self.refine_shape = refine_shape
        self.max_nfev = max_nfev
        self.loss_tol = loss_tol
        self.diff_step = diff_step
        self.pose_scale = pose_scale
        self.shape_scale = shape_scale
        self.blur_schedule = blur_schedule
        self.threads = threads

    # parameter packing -------------------------------------------------------
    def _unpack(self, u, base_pose, base_params):
        u = np.asarray(u, dtype=np.float64)
        x = u[:6] * np.asarray(self.pose_scale)
        Rf = rotvec_to_matrix(x[:3]) @ base_pose.frame.R
        frame = RigidTransform(tuple(matrix_to_rotvec(Rf)), tuple(base_pose.frame.t + x[3:]))
        pose = EyePose(base_pose.global_, frame)
        params = base_params
        if self.refine_shape:
            dx = u[6:] * np.asarray(self.shape_scale)
            params = base_params.with_(**{k: getattr(base_params, k) + v for k, v in zip(SHAPE_FIELDS, dx)})
        return pose, params

    def _surface(self, params, pose):
        key = None if self.refine_shape else "fixed"
        if key is not None and self._canon is not None:
            mesh, bvh = self._canon
        else:
            mesh = generate_mesh(params)
            bvh = BVH(mesh.vertices, mesh.faces)
            if key is not None:
                self._canon = (mesh, bvh)
        return EyeSurface.build(params, pose, mesh, bvh)

    def render(self, pose, params, observation):
        scene = replace(self.scene, pose=pose, surface=self._surface(params, pose))
        return render_image(observation.camera, scene, observation.lighting, self.sampling, self.threads)

    def _residuals(self, u):
        pose, params = self._unpack(u, self._pose0, self._params0)
        parts = []
        for ob in self._obs:
            img = self.render(pose, params, ob)
            d = srgb_encode(img) - srgb_encode(ob.image)
            if self._blur > 0:
                d = gaussian_filter(d, sigma=(self._blur, self._blur, 0), mode="nearest")
            keep = np.ones(d.shape[:2], bool) if ob.mask is None else ob.mask
            parts.append((d[keep] * np.sqrt(self.weights.lambda_im / keep.sum() / len(self._obs))).ravel())
        if self.refine_shape:
            parts.append(np.sqrt(self.weights.lambda_off) * np.asarray(params.vertex_offsets).ravel())
        r = np.concatenate(parts)
        self._nfev += 1
        self._last = (np.array(u, dtype=np.float64), r)
        return r

    def _jacobian(self, u):
        # forward differences with a fixed step in scaled units; rendered losses are too
        # noisy for machine-precision steps
        u = np.asarray(u, dtype=np.float64)
        if self._last is not None and np.array_equal(self._last[0], u):
            r0 = self._last[1]
        else:
            r0 = self._residuals(u)
        J = np.empty((r0.size, u.size))
        for i in range(u.size):
            e = np.zeros(u.size)
            e[i] = self.diff_step
            J[:, i] = (self._residuals(u + e) - r0) / self.diff_step
        return J

    def _observations(self, observations):
        if observations is not None:
            return observations
        if not hasattr(self, "_obs"):
            raise ValidationError("no observations: pass them or call fit first")
        return self._obs

    def loss(self, pose, params=None, observations=None):
        """Total loss (image + offset prior) at ``pose``; defaults to the fitted observations."""
        params = self._base_params() if params is None else params
        self._prepare(pose, params, self._observations(observations))
        return float(np.sum(self._residuals(np.zeros(self._nparams)) ** 2))

    def _base_params(self):
        return self.params if self.params is not None else EyeShapeParams()

    def _prepare(self, pose, params, observations):
        self._obs = list(observations)
        if not self._obs:
            raise ValidationError("pose refinement needs at least one observation")
        self._pose0 = pose
        self._params0 = params
        self._nparams = 6 + (len(SHAPE_FIELDS) if self.refine_shape else 0)
        self._nfev = 0
        self._last = None
        self._blur = 0.0
        if not hasattr(self, "_canon") or self.refine_shape:
            self._canon = None

    def fit(self, X, y=None, initial_pose=None):
        """``X``: observations of one frame; ``initial_pose``: starting EyePose (default: scene pose)."""
        t0 = time.perf_counter()
        pose0 = self.scene.pose if initial_pose is None else initial_pose
        params0 = self._base_params()
        self._canon = None
        self._prepare(pose0, params0, X)
        u = np.zeros(self._nparams)
        r0 = self._residuals(u)
        self.initial_loss_ = float(r0 @ r0)
        self.loss_ = self.initial_loss_
        self.n_iter_ = 0
        status = 1
        schedule = [float(b) for b in self.blur_schedule]
        if not schedule or schedule[-1] != 0.0:
            schedule.append(0.0)
        if self.initial_loss_ > self.loss_tol:
            for blur in schedule:
                self._blur = blur
                self._last = None
                tol = 1e-3 if blur > 0 else 1e-9
                res = least_squares(self._residuals, u, jac=self._jacobian, method="trf",
                                    max_nfev=self.max_nfev, x_scale=1.0, xtol=tol, ftol=tol, gtol=1e-12)
                u = res.x
                self.n_iter_ += int(res.nfev)
                status = res.status
            self.loss_ = float(2.0 * res.cost)
        self.pose_, self.params_ = self._unpack(u, pose0, params0)
        self.status_ = status
        self.converged_ = bool(self.loss_ <= self.loss_tol)
        self.n_renders_ = self._nfev
        self.timings_ = {"refine": time.perf_counter() - t0}
        return self

    def loss_gradient(self, pose, step=1e-3, observations=None):
        """Central-difference gradient of the total loss w.r.t. the scaled pose parameters."""
        self._prepare(pose, self._base_params(), self._observations(observations))
        g = np.zeros(self._nparams)
        for i in range(self._nparams):
            e = np.zeros(self._nparams)
            e[i] = step
            rp = self._residuals(e)
            rm = self._residuals(-e)
            g[i] = (rp @ rp - rm @ rm) / (2 * step)
        return g


def refine_eye_pose(initial, params, observations, scene, **kw):
    """Refined pose and a report dict (losses, convergence, renders, seconds)."""
    est = EyePoseRefiner(scene, params, **kw).fit(observations, initial_pose=initial)
    report = {
        "initial_loss": est.initial_loss_, "final_loss": est.loss_, "converged": est.converged_,
        "renders": est.n_renders_, "seconds": est.timings_["refine"],
    }
    return est.pose_, report


def pose_error(a, b):
    """(rotation error in degrees, translation error in mm) between two poses."""
    R = a.rotation.T @ b.rotation
    ang = np.degrees(np.arccos(np.clip((np.trace(R) - 1) / 2, -1, 1)))
    return float(ang), float(np.linalg.norm(a.translation - b.translation))

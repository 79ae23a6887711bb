"""Ray sampling, SH point shading, volume accumulation, and image rendering.

Notation follows the usual NeRF accumulation, with ``alpha`` meaning the
per-segment transmittance exp(-sigma * delta):

    T_t = prod_{i<t} alpha_i,   C = sum_t T_t (1 - alpha_t) c_t

plus a terminal sample of infinite opacity. At a cornea hit the reflected
ray's radiance C' is composited behind the last pre-intersect sample k:

    alpha_comb = alpha_k (1 - f)
    contribution at k = T_k [(1 - alpha_k) c_k + f alpha_k C']

and every later (refracted) sample sees the transmittance through
alpha_comb, so refracted radiance arrives scaled by T_k alpha_k (1 - f).
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.sparse as sp

from .eye_model import EyePose
from .field import eye_interior_transform
from .rays import IOR_CORNEA, split_batch

DEFAULT_CLIP = 100.0  # mm either side of the eyeball centre
CHUNK = 1024  # pixels per work item; fixed so output is independent of thread count


@dataclass(frozen=True)
class SamplingConfig:
    n_coarse: int = 64
    n_fine: int = 64
    jitter: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_coarse < 1 or self.n_fine < 0:
            raise ValueError("need n_coarse >= 1 and n_fine >= 0")


@dataclass
class RenderScene:
    """Everything a render needs besides camera and lighting. Read-only during a render."""

    field: object
    warp: object
    pose: EyePose = dc_field(default_factory=EyePose)
    surface: object = None
    interior_offset: tuple = (0.0, 0.0, -100.0)
    ior: float = IOR_CORNEA
    sclera_ior_zero: bool = False
    shadow_branch_enabled: bool = True
    clip_half_width: float = DEFAULT_CLIP

    @property
    def clip_center(self):
        return self.pose.center


# --- sampling --------------------------------------------------------------

# added to coarse weights before fine sampling; without it the fine samples jump
# between uniform and concentrated when a thin feature first touches a coarse sample
WEIGHT_FLOOR = 1e-5


def stratified_samples(t0, t1, n, u=None):
    """n samples per row in [t0, t1]: stratum midpoints, or jittered by ``u`` in [0, 1)."""
    t0 = np.asarray(t0, dtype=np.float64)[..., None]
    t1 = np.asarray(t1, dtype=np.float64)[..., None]
    offs = 0.5 if u is None else u
    return t0 + (np.arange(n) + offs) / n * (t1 - t0)


def importance_samples(edges, weights, n, u=None):
    """Inverse-CDF samples of the piecewise-constant density ``weights`` over bins ``edges``.

    ``edges`` is (N, B+1), ``weights`` (N, B); rows with zero total weight fall
    back to uniform. ``u`` (N, n) are sorted uniforms; None gives stratum midpoints.
    """
    weights = np.maximum(np.asarray(weights, dtype=np.float64), 0.0)
    edges = np.asarray(edges, dtype=np.float64)
    nrow, nb = weights.shape
    total = weights.sum(axis=1, keepdims=True)
    pdf = np.where(total > 0, weights / np.where(total > 0, total, 1.0), 1.0 / nb)
    cdf = np.concatenate([np.zeros((nrow, 1)), np.cumsum(pdf, axis=1)], axis=1)
    cdf[:, -1] = 1.0
    if u is None:
        u = np.broadcast_to((np.arange(n) + 0.5) / n, (nrow, n))
    idx = np.sum(u[:, :, None] >= cdf[:, None, 1:], axis=2)
    idx = np.clip(idx, 0, nb - 1)
    c0 = np.take_along_axis(cdf, idx, 1)
    p = np.take_along_axis(pdf, idx, 1)
    frac = np.where(p > 0, (u - c0) / np.where(p > 0, p, 1.0), 0.5)
    e0 = np.take_along_axis(edges, idx, 1)
    e1 = np.take_along_axis(edges, idx + 1, 1)
    return e0 + np.clip(frac, 0.0, 1.0) * (e1 - e0)


def sample_ray(ray, n_coarse, n_fine=0, coarse_weights=None, rng=None):
    """Sorted sample positions along ``ray``: stratified coarse set plus importance-sampled fine set."""
    t0, t1 = float(ray.t_near), float(ray.t_far)
    if not np.isfinite(t1) or not t1 > t0:
        raise ValueError(f"degenerate sampling range [{t0}, {t1}]")
    u = None if rng is None else rng.random((1, n_coarse))
    tc = stratified_samples(np.array([t0]), np.array([t1]), n_coarse, u)[0]
    if n_fine == 0 or coarse_weights is None:
        return tc
    edges = np.linspace(t0, t1, n_coarse + 1)[None]
    uf = None if rng is None else np.sort(rng.random((1, n_fine)), axis=1)
    tf = importance_samples(edges, np.asarray(coarse_weights)[None], n_fine, uf)[0]
    return np.sort(np.concatenate([tc, tf]))


def segment_deltas(t, t_end):
    """delta_i = t_{i+1} - t_i, the last one running to the segment end."""
    return np.diff(np.concatenate([t, np.asarray(t_end, dtype=np.float64)[..., None]], axis=-1), axis=-1)


def transmittance_weights(sigma, delta):
    """Per-sample weights T_t (1 - alpha_t) and the transmittance left for the terminal sample."""
    alpha = np.exp(-np.asarray(sigma) * np.asarray(delta))
    T = np.cumprod(np.concatenate([np.ones(alpha.shape[:-1] + (1,)), alpha], axis=-1), axis=-1)
    return T[..., :-1] * (1.0 - alpha), T[..., -1]


def accumulate(sigma, delta, colors, terminal_color):
    """C = sum_t T_t (1 - alpha_t) c_t + T_end * terminal_color, alpha_t = exp(-sigma_t delta_t)."""
    w, t_end = transmittance_weights(sigma, delta)
    return np.einsum("...s,...sc->...c", w, np.asarray(colors)) + t_end[..., None] * np.asarray(terminal_color)


def composite_split(sig_pre, dlt_pre, c_pre, sig_refr, dlt_refr, c_refr, c_reflected, f):
    """Merge pre-intersect and refracted samples with the reflected radiance at the hit.

    Follows the combined-sample system in the module docstring; the combined
    sample's colour would be numerator / (1 - alpha_comb), which is singular
    exactly when the numerator vanishes, so the numerator is emitted directly.
    The merged ray ends in a black terminal.
    """
    a = np.exp(-np.asarray(sig_pre) * np.asarray(dlt_pre))
    a_refr = np.exp(-np.asarray(sig_refr) * np.asarray(dlt_refr))
    k = len(a) - 1
    a_comb = a[k] * (1.0 - f)
    numerator = (1.0 - a[k]) * np.asarray(c_pre[k]) + f * a[k] * np.asarray(c_reflected)
    a2 = np.concatenate([a[:k], [a_comb], a_refr])
    colors = np.concatenate([np.asarray(c_pre)[:k], np.zeros((1, 3)), np.asarray(c_refr).reshape(-1, 3)])
    T = np.cumprod(np.concatenate([[1.0], a2]))[:-1]
    out = np.einsum("s,sc->c", T * (1.0 - a2), colors)
    return out + T[k] * numerator


# --- shading ---------------------------------------------------------------

def shade_batch(fb, env_sh):
    """c = max(0, diffuse . E) * albedo + max(0, specular . E) for every sample."""
    E = env_sh.values
    nd = fb.diffuse.shape[1]
    ns = fb.specular.shape[1]
    diffuse = fb.diffuse @ E[:nd] if E.shape[0] >= nd else fb.diffuse[:, :E.shape[0]] @ E
    specular = fb.specular @ E[:ns] if E.shape[0] >= ns else fb.specular[:, :E.shape[0]] @ E
    return np.maximum(diffuse, 0.0) * fb.albedo + np.maximum(specular, 0.0)


def shade_sample(fs, ctx):
    from .field import FieldBatch

    fb = FieldBatch(np.array([fs.sigma]), fs.albedo[None], fs.diffuse_sh.values[None], fs.specular_sh.values[None])
    return shade_batch(fb, ctx.env_sh)[0]


# --- tracing ---------------------------------------------------------------

@dataclass
class Trace:
    """Lighting-independent description of a set of pixels.

    Each pixel's radiance is sum(w * shade(sample)) over its samples plus
    sum(w * env(dir)) over its terminal environment lookups.
    """

    n_pixels: int
    s_pix: np.ndarray
    s_canon: np.ndarray
    s_world: np.ndarray
    s_view: np.ndarray
    s_w: np.ndarray
    t_pix: np.ndarray
    t_dir: np.ndarray
    t_w: np.ndarray


def _clip_range(scene, origins, dirs):
    tc = np.einsum("nj,nj->n", scene.clip_center - origins, dirs)
    return np.maximum(tc - scene.clip_half_width, 0.0), tc + scene.clip_half_width


def march(field, transform, origins, dirs, t0, t1, cfg, rng):
    """Sample N ray segments; returns (t, world points, canonical points, weights, T_end)."""
    n = len(origins)
    uc = rng.random((n, cfg.n_coarse)) if cfg.jitter else None
    t = stratified_samples(t0, t1, cfg.n_coarse, uc)
    pts = origins[:, None] + t[..., None] * dirs[:, None]
    canon = transform(pts.reshape(-1, 3)).reshape(pts.shape)
    sig = field.sigma_batch(canon.reshape(-1, 3), pts.reshape(-1, 3)).reshape(t.shape)
    if cfg.n_fine > 0:
        w, _ = transmittance_weights(sig, segment_deltas(t, t1))
        edges = t0[:, None] + np.arange(cfg.n_coarse + 1) / cfg.n_coarse * (t1 - t0)[:, None]
        uf = np.sort(rng.random((n, cfg.n_fine)), axis=1) if cfg.jitter else None
        tf = importance_samples(edges, w + WEIGHT_FLOOR, cfg.n_fine, uf)
        pf = origins[:, None] + tf[..., None] * dirs[:, None]
        cf = transform(pf.reshape(-1, 3)).reshape(pf.shape)
        sf = field.sigma_batch(cf.reshape(-1, 3), pf.reshape(-1, 3)).reshape(tf.shape)
        t = np.concatenate([t, tf], axis=1)
        order = np.argsort(t, axis=1, kind="stable")
        t = np.take_along_axis(t, order, 1)
        sig = np.take_along_axis(np.concatenate([sig, sf], axis=1), order, 1)
        pts = np.take_along_axis(np.concatenate([pts, pf], axis=1), order[..., None], 1)
        canon = np.take_along_axis(np.concatenate([canon, cf], axis=1), order[..., None], 1)
    w, t_end = transmittance_weights(sig, segment_deltas(t, t1))
    return t, pts, canon, w, t_end


def trace_rays(scene, origins, dirs, cfg, rng):
    """Split, sample and weight every ray; see :class:`Trace`."""
    origins = np.asarray(origins, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    n = len(origins)
    t0, t1 = _clip_range(scene, origins, dirs)
    live = t1 > t0
    parts = []   # (pixel ids, pts, canon, view, weights)
    terms = []   # (pixel ids, dirs, weights)
    warp = scene.warp

    idx = np.nonzero(live)[0]
    o, d, a, b = origins[idx], dirs[idx], t0[idx], t1[idx]
    if scene.surface is not None and len(idx):
        sp = split_batch(scene.surface, o, d, a, b, scene.ior, scene.sclera_ior_zero)
        b_pre = np.where(sp.hit, sp.t_hit, b)
    else:
        sp = None
        b_pre = b
    _, pts, canon, w, t_end = march(scene.field, warp, o, d, a, b_pre, cfg, rng)
    parts.append((np.repeat(idx, pts.shape[1]), pts, canon, np.repeat(d, pts.shape[1], 0), w))

    if sp is not None and np.any(sp.hit):
        rr = np.nonzero(sp.refr_ok)[0]
        if len(rr):
            ro, rd = sp.refr_origin[rr], sp.refr_dir[rr]
            ra, rb = _clip_range(scene, ro, rd)
            ra = np.zeros_like(ra)
            ok = rb > ra
            rr, ro, rd, ra, rb = rr[ok], ro[ok], rd[ok], ra[ok], rb[ok]
            pose, off = scene.pose, scene.interior_offset

            def interior(p):
                return eye_interior_transform(pose, p, off)

            _, rp, rc, rw, _ = march(scene.field, interior, ro, rd, ra, rb, cfg, rng)
            scale = (t_end[rr] * (1.0 - sp.fresnel[rr]))[:, None]
            parts.append((np.repeat(idx[rr], rp.shape[1]), rp, rc, np.repeat(rd, rp.shape[1], 0), rw * scale))
        fl = np.nonzero(sp.refl_ok & (sp.fresnel > 0))[0]
        if len(fl):
            fo, fd = sp.refl_origin[fl], sp.refl_dir[fl]
            fa, fb = _clip_range(scene, fo, fd)
            fa = np.zeros_like(fa)
            fb = np.maximum(fb, 1e-6)
            _, fp, fc, fw, f_end = march(scene.field, warp, fo, fd, fa, fb, cfg, rng)
            scale = (t_end[fl] * sp.fresnel[fl])[:, None]
            parts.append((np.repeat(idx[fl], fp.shape[1]), fp, fc, np.repeat(fd, fp.shape[1], 0), fw * scale))
            terms.append((idx[fl], fd, f_end * scale[:, 0]))

    def cat(i, width=None):
        arrs = [p[i].reshape(-1, width) if width else p[i].reshape(-1) for p in parts]
        return np.concatenate(arrs) if arrs else np.zeros((0, width) if width else 0)

    pix, pts, canon, view, w = cat(0), cat(1, 3), cat(2, 3), cat(3, 3), cat(4)
    keep = w > 0
    if terms:
        tp = np.concatenate([x[0] for x in terms])
        td = np.concatenate([x[1] for x in terms])
        tw = np.concatenate([x[2] for x in terms])
        tk = tw > 0
        tp, td, tw = tp[tk], td[tk], tw[tk]
    else:
        tp, td, tw = np.zeros(0, np.int64), np.zeros((0, 3)), np.zeros(0)
    return Trace(n, pix[keep], canon[keep], pts[keep], view[keep], w[keep], tp, td, tw)


def _pixel_sum(pix, n_pixels):
    """Sparse (n_pixels, n_samples) summation matrix; fixed order keeps sums deterministic."""
    m = len(pix)
    return sp.csr_matrix((np.ones(m), (pix, np.arange(m))), shape=(n_pixels, m))


def shade_trace(trace, field, lightings, shadow_branch_enabled=True, group=16):
    """Radiance (len(lightings), n_pixels, 3) of a trace under each lighting context.

    Contexts are shaded ``group`` at a time with one matrix product per group.
    """
    fb = field.query_batch(trace.s_canon, trace.s_world, trace.s_view, shadow_branch_enabled)
    n_ctx = len(lightings)
    out = np.zeros((n_ctx, trace.n_pixels, 3))
    S = _pixel_sum(trace.s_pix, trace.n_pixels)
    nd, ns = fb.diffuse.shape[1], fb.specular.shape[1]
    for g0 in range(0, n_ctx, group):
        ctxs = lightings[g0:g0 + group]
        E = np.zeros((max(nd, ns), 3 * len(ctxs)))
        for j, ctx in enumerate(ctxs):
            v = ctx.env_sh.values
            m = min(E.shape[0], v.shape[0])
            E[:m, 3 * j:3 * j + 3] = v[:m]
        diffuse = np.maximum(fb.diffuse @ E[:nd], 0.0) * np.tile(fb.albedo, len(ctxs))
        c = (diffuse + np.maximum(fb.specular @ E[:ns], 0.0)) * trace.s_w[:, None]
        out[g0:g0 + len(ctxs)] = (S @ c).reshape(trace.n_pixels, len(ctxs), 3).transpose(1, 0, 2)
    if len(trace.t_pix):
        T = _pixel_sum(trace.t_pix, trace.n_pixels)
        for i, ctx in enumerate(lightings):
            out[i] += T @ (ctx.env_lookup(trace.t_dir) * trace.t_w[:, None])
    return out


class RenderError(RuntimeError):
    pass


def _chunk_rng(seed, chunk):
    return np.random.default_rng([int(seed), int(chunk)])


def render_image(camera, scene, lighting, cfg=SamplingConfig(), threads=1, chunk=CHUNK):
    """Linear HDR image(s). ``lighting`` may be one context or a list (traced once, shaded per context)."""
    many = isinstance(lighting, (list, tuple))
    ctxs = list(lighting) if many else [lighting]
    origins, dirs = camera.all_rays()
    n = len(origins)
    starts = list(range(0, n, chunk))

    def work(ci):
        a = starts[ci]
        b = min(a + chunk, n)
        try:
            tr = trace_rays(scene, origins[a:b], dirs[a:b], cfg, _chunk_rng(cfg.seed, ci))
            return shade_trace(tr, scene.field, ctxs, scene.shadow_branch_enabled)
        except Exception as exc:  # report where it happened
            u0, v0 = a % camera.width, a // camera.width
            u1, v1 = (b - 1) % camera.width, (b - 1) // camera.width
            raise RenderError(f"render failed for pixels ({u0},{v0})..({u1},{v1}): {exc}") from exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(work, range(len(starts))))
    else:
        results = [work(i) for i in range(len(starts))]
    img = np.concatenate(results, axis=1).reshape(len(ctxs), camera.height, camera.width, 3)
    return img if many else img[0]


def trace_image(camera, scene, cfg=SamplingConfig(), threads=1, chunk=CHUNK):
    """Per-chunk traces of a whole image (pixel ids made global)."""
    origins, dirs = camera.all_rays()
    n = len(origins)
    starts = list(range(0, n, chunk))

    def work(ci):
        a = starts[ci]
        tr = trace_rays(scene, origins[a:a + chunk], dirs[a:a + chunk], cfg, _chunk_rng(cfg.seed, ci))
        tr.s_pix = tr.s_pix + a
        tr.t_pix = tr.t_pix + a
        tr.n_pixels = n
        return tr

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(work, range(len(starts))))
    return [work(i) for i in range(len(starts))]


def merge_traces(traces):
    n = traces[0].n_pixels
    return Trace(
        n,
        *(np.concatenate([getattr(t, k) for t in traces]) for k in
          ("s_pix", "s_canon", "s_world", "s_view", "s_w", "t_pix", "t_dir", "t_w")),
    )


# --- single ray, equation form ----------------------------------------------

def _march_single(scene, transform, origin, direction, t0, t1, cfg, rng):
    t, pts, canon, _, _ = march(scene.field, transform, origin[None], direction[None],
                                np.array([t0]), np.array([t1]), cfg, rng)
    view = np.broadcast_to(direction, pts[0].shape)
    return t[0], pts[0], canon[0], view


def render_ray(split, scene, ctx, cfg=SamplingConfig(jitter=False), rng=None):
    """Radiance of one split camera ray via the combined-sample equations.

    No hit: plain accumulation of the warped pre-intersect ray. Hit: the
    reflected ray is accumulated first (terminal = scaled environment), then
    merged at the last pre-intersect sample with the refracted ray.
    """
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    warp = scene.warp

    def seg(transform, ray, t0, t1):
        t, pts, canon, view = _march_single(scene, transform, ray.origin, ray.dir, t0, t1, cfg, rng)
        fb = scene.field.query_batch(canon, pts, view, scene.shadow_branch_enabled)
        return fb.sigma, segment_deltas(t, t1), shade_batch(fb, ctx.env_sh)

    pre = split.pre
    t0, t1 = _clip_range(scene, pre.origin[None], pre.dir[None])
    a = float(t0[0])
    b = float(min(t1[0], pre.t_far))
    s_pre, d_pre, c_pre = seg(warp, pre, a, b)
    if split.hit is None:
        return accumulate(s_pre, d_pre, c_pre, np.zeros(3))

    if split.reflected is not None and split.fresnel_f > 0:
        r = split.reflected
        _, rb = _clip_range(scene, r.origin[None], r.dir[None])
        s_r, d_r, c_r = seg(warp, r, 0.0, max(float(rb[0]), 1e-6))
        c_refl = accumulate(s_r, d_r, c_r, ctx.env_lookup(r.dir[None])[0])
    else:
        c_refl = np.zeros(3)

    if split.refracted is not None:
        r = split.refracted
        _, rb = _clip_range(scene, r.origin[None], r.dir[None])
        pose, off = scene.pose, scene.interior_offset
        s_e, d_e, c_e = seg(lambda p: eye_interior_transform(pose, p, off), r, 0.0, float(rb[0]))
    else:
        s_e, d_e, c_e = np.zeros(0), np.zeros(0), np.zeros((0, 3))
    return composite_split(s_pre, d_pre, c_pre, s_e, d_e, c_e, c_refl, split.fresnel_f)

"""Procedural flying-sprite scenes with exact dense optical-flow ground truth.

A scene is a z-ordered stack of textured layers (a full-frame background
plus sprites), each bound to a 6-DoF trajectory spline projected onto the
image plane as a time-varying similarity transform (translation in px,
rotation about the view axis, scale from depth). Rendering is painter's
algorithm with bilinear texture sampling; because layer motion is an exact
similarity, the flow between any two instants is closed-form per layer,
including for pixels that end up covered or off-frame (they are flagged in
the occlusion mask, not blanked).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from . import rng
from .trajectory import (
    Pose,
    PoseSpline,
    fit_pose_spline,
    quat_yaw,
    quat_rotate,
    sample_poses,
)

__all__ = [
    "SimilarityTrack",
    "Sprite",
    "SpriteScene",
    "FlowField",
    "build_scene",
    "render_frame",
    "compute_flow_gt",
    "rigid_motion_field",
    "make_texture_pool",
    "save_scene",
    "load_scene",
]


@dataclass
class FlowField:
    """Dense pixel displacement over [t0, t1] with validity/occlusion masks."""

    width: int
    height: int
    u: np.ndarray  # (H, W) float, px
    v: np.ndarray
    valid: np.ndarray  # bool, flow defined
    occluded: np.ndarray  # bool, source content covered or off-frame at t1

    @classmethod
    def zeros(cls, width: int, height: int) -> "FlowField":
        return cls(
            width,
            height,
            np.zeros((height, width)),
            np.zeros((height, width)),
            np.ones((height, width), bool),
            np.zeros((height, width), bool),
        )

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.u, self.v)


@dataclass
class SimilarityTrack:
    """Image-plane similarity motion derived from a 6-DoF spline.

    x, y of the spline translation map to pixels; rotation is the yaw
    component; scale decays by e per ``z_efold`` scene units of depth.
    """

    spline: PoseSpline
    center_px: tuple[float, float] = (0.0, 0.0)
    px_per_unit: float = 1.0
    base_scale: float = 1.0
    z_efold: float = 8.0

    def params(self, t: int) -> tuple[float, float, float, float]:
        """(tx, ty, theta, scale) at time t (cut trajectories freeze)."""
        pose = self.spline.query_clamped(t)
        tx = self.center_px[0] + self.px_per_unit * pose.translation[0]
        ty = self.center_px[1] + self.px_per_unit * pose.translation[1]
        theta = quat_yaw(pose.rotation)
        scale = self.base_scale * float(np.exp(-pose.translation[2] / self.z_efold))
        return tx, ty, theta, scale


@dataclass
class Sprite:
    """A textured layer: local rectangle [-bw/2, bw/2] x [-bh/2, bh/2] px."""

    texture: np.ndarray  # (Ht, Wt) float64 in [0, 1]
    base_size: tuple[float, float]  # (bw, bh) px at scale 1
    z_order: int  # larger = nearer
    track: SimilarityTrack
    full_frame: bool = False  # background: covers everything, clamp-sampled
    texture_ref: str | None = None  # relative path for serialization

    def __post_init__(self):
        if self.texture.size == 0:
            raise ValueError("sprite texture is empty")

    def forward(self, local_xy: np.ndarray, t: int) -> np.ndarray:
        tx, ty, th, s = self.track.params(t)
        c, sn = np.cos(th), np.sin(th)
        x = s * (c * local_xy[..., 0] - sn * local_xy[..., 1]) + tx
        y = s * (sn * local_xy[..., 0] + c * local_xy[..., 1]) + ty
        return np.stack([x, y], axis=-1)

    def inverse(self, img_x: np.ndarray, img_y: np.ndarray, t: int):
        tx, ty, th, s = self.track.params(t)
        c, sn = np.cos(th), np.sin(th)
        dx, dy = img_x - tx, img_y - ty
        lx = (c * dx + sn * dy) / s
        ly = (-sn * dx + c * dy) / s
        return lx, ly

    def corners(self, t: int) -> np.ndarray:
        bw, bh = self.base_size
        local = np.array(
            [[-bw / 2, -bh / 2], [bw / 2, -bh / 2], [bw / 2, bh / 2], [-bw / 2, bh / 2]]
        )
        return self.forward(local, t)

    def support(self, img_x: np.ndarray, img_y: np.ndarray, t: int) -> np.ndarray:
        if self.full_frame:
            return np.ones(np.broadcast(img_x, img_y).shape, bool)
        lx, ly = self.inverse(img_x, img_y, t)
        bw, bh = self.base_size
        return (np.abs(lx) <= bw / 2) & (np.abs(ly) <= bh / 2)

    def sample(self, img_x: np.ndarray, img_y: np.ndarray, t: int) -> np.ndarray:
        lx, ly = self.inverse(img_x, img_y, t)
        bw, bh = self.base_size
        th, tw = self.texture.shape
        tx = (lx + bw / 2) / bw * (tw - 1)
        ty = (ly + bh / 2) / bh * (th - 1)
        return _bilinear(self.texture, tx, ty)

    def motion(self, t0: int, t1: int) -> tuple[np.ndarray, np.ndarray]:
        """Affine (A, b) with point_t1 = A @ point_t0 + b (exact layer flow)."""
        tx0, ty0, th0, s0 = self.track.params(t0)
        tx1, ty1, th1, s1 = self.track.params(t1)
        dth = th1 - th0
        r = s1 / s0
        c, sn = np.cos(dth), np.sin(dth)
        A = r * np.array([[c, -sn], [sn, c]])
        b = np.array([tx1, ty1]) - A @ np.array([tx0, ty0])
        return A, b


def _bilinear(img: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Edge-clamped bilinear sampling at float coordinates."""
    h, w = img.shape
    x = np.clip(x, 0.0, w - 1.0)
    y = np.clip(y, 0.0, h - 1.0)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx, fy = x - x0, y - y0
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bot * fy


@dataclass
class SpriteScene:
    """Background plus sprites with unique z order, over [0, duration_us]."""

    width: int
    height: int
    duration_us: int
    background: Sprite
    sprites: list[Sprite]
    seed: int = 0

    def __post_init__(self):
        if self.duration_us <= 0:
            raise ValueError("duration must be > 0")
        zs = [self.background.z_order] + [s.z_order for s in self.sprites]
        if len(set(zs)) != len(zs):
            raise ValueError("layer z_order values must be unique")

    def layers(self) -> list[Sprite]:
        """All layers sorted back to front."""
        return sorted([self.background] + self.sprites, key=lambda s: s.z_order)

    def grid(self):
        ys, xs = np.mgrid[0 : self.height, 0 : self.width]
        return xs.astype(np.float64), ys.astype(np.float64)

    def max_corner_displacement(self, ta: int, tb: int) -> float:
        """Largest layer-corner movement between two instants, in px."""
        worst = 0.0
        for layer in self.layers():
            d = np.linalg.norm(layer.corners(tb) - layer.corners(ta), axis=1)
            worst = max(worst, float(d.max()))
        return worst


def render_frame(scene: SpriteScene, t: int) -> np.ndarray:
    """Painter's-algorithm linear-intensity frame in [0, 1] at time t."""
    t = int(t)
    if t < 0 or t > scene.duration_us:
        raise ValueError(f"time {t} outside scene duration [0, {scene.duration_us}]")
    xs, ys = scene.grid()
    out = np.zeros((scene.height, scene.width))
    for layer in scene.layers():
        if layer.full_frame:
            out = layer.sample(xs, ys, t)
            continue
        cs = layer.corners(t)
        x_lo = max(int(np.floor(cs[:, 0].min())), 0)
        x_hi = min(int(np.ceil(cs[:, 0].max())) + 1, scene.width)
        y_lo = max(int(np.floor(cs[:, 1].min())), 0)
        y_hi = min(int(np.ceil(cs[:, 1].max())) + 1, scene.height)
        if x_lo >= x_hi or y_lo >= y_hi:
            continue
        sub_x, sub_y = xs[y_lo:y_hi, x_lo:x_hi], ys[y_lo:y_hi, x_lo:x_hi]
        mask = layer.support(sub_x, sub_y, t)
        if not mask.any():
            continue
        vals = layer.sample(sub_x[mask], sub_y[mask], t)
        region = out[y_lo:y_hi, x_lo:x_hi]
        region[mask] = vals
    return np.clip(out, 0.0, 1.0)


def compute_flow_gt(scene: SpriteScene, t0: int, t1: int) -> FlowField:
    """Exact flow of each pixel's topmost source layer from t0 to t1.

    Occluded pixels (source point covered by a nearer layer at t1, or
    carried off-frame) keep their true motion and are flagged in the mask.
    """
    t0, t1 = int(t0), int(t1)
    if not (0 <= t0 < t1 <= scene.duration_us):
        raise ValueError("need 0 <= t0 < t1 <= duration")
    xs, ys = scene.grid()
    layers = scene.layers()

    src = np.zeros((scene.height, scene.width), np.int64)
    for li, layer in enumerate(layers):
        m = layer.support(xs, ys, t0)
        src[m] = li

    u = np.zeros_like(xs)
    v = np.zeros_like(ys)
    occluded = np.zeros(xs.shape, bool)
    for li, layer in enumerate(layers):
        m = src == li
        if not m.any():
            continue
        A, b = layer.motion(t0, t1)
        px, py = xs[m], ys[m]
        qx = A[0, 0] * px + A[0, 1] * py + b[0]
        qy = A[1, 0] * px + A[1, 1] * py + b[1]
        u[m] = qx - px
        v[m] = qy - py
        occ = (qx < 0) | (qx > scene.width - 1) | (qy < 0) | (qy > scene.height - 1)
        for nearer in layers[li + 1 :]:
            occ |= nearer.support(qx, qy, t1)
        occluded[m] = occ

    return FlowField(
        width=scene.width,
        height=scene.height,
        u=u,
        v=v,
        valid=np.ones(xs.shape, bool),
        occluded=occluded,
    )


def rigid_motion_field(
    pose0: Pose, pose1: Pose, depth: np.ndarray, intrinsics: tuple[float, float, float, float]
) -> FlowField:
    """Flow induced by a camera moving from pose0 to pose1 over a depth map.

    Poses are camera-to-world. Each pixel is back-projected with its depth,
    expressed in the second camera, and re-projected; pixels with missing
    depth or landing behind the camera are invalid.
    """
    fx, fy, cx, cy = (float(k) for k in intrinsics)
    if fx <= 0 or fy <= 0:
        raise ValueError("focal lengths must be > 0")
    depth = np.asarray(depth, np.float64)
    h, w = depth.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)

    good = np.isfinite(depth) & (depth > 0)
    z = np.where(good, depth, 1.0)

    # work on normalized rays scaled by 1/depth: rotation-only motion is then
    # literally depth-free, and a still camera yields bit-exact zero flow
    rx, ry = (xs - cx) / fx, (ys - cy) / fy
    rays = np.stack([rx, ry, np.ones_like(rx)], axis=-1)
    rel = pose1.inverse().compose(pose0)  # camera0 points into camera1 coordinates
    rot = quat_rotate(rel.rotation, rays.reshape(-1, 3)).reshape(h, w, 3)
    pts1 = rot + rel.translation / z[..., None]

    z1 = pts1[..., 2]
    front = z1 > 1e-12
    z1s = np.where(front, z1, 1.0)

    valid = good & front
    u = np.where(valid, fx * (pts1[..., 0] / z1s - rx), 0.0)
    v = np.where(valid, fy * (pts1[..., 1] / z1s - ry), 0.0)
    return FlowField(
        width=w, height=h, u=u, v=v, valid=valid, occluded=np.zeros((h, w), bool)
    )


# ---------------------------------------------------------------------------
# procedural construction and (de)serialization


def make_texture_pool(directory, count: int, size: int = 128, seed: int = 0) -> list[Path]:
    """Write ``count`` smooth grayscale PNG textures; returns their paths.

    Textures are band-limited (blurred noise) so bilinear resampling under
    motion stays photometrically consistent.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        g = np.random.default_rng(rng.spawn_seed(seed, rng.TAG_SCENE, i))
        img = gaussian_filter(g.uniform(0.0, 1.0, (size, size)), sigma=size / 24.0, mode="wrap")
        lo, hi = img.min(), img.max()
        img = 0.08 + 0.84 * (img - lo) / max(hi - lo, 1e-9)
        path = directory / f"tex_{i:03d}.png"
        Image.fromarray(np.round(img * 255.0).astype(np.uint8), mode="L").save(path)
        paths.append(path)
    return paths


def _load_texture(path) -> np.ndarray:
    img = Image.open(path).convert("L")
    return np.asarray(img, np.float64) / 255.0


def build_scene(
    width: int,
    height: int,
    n_sprites: int,
    texture_pool,
    motion_bounds=None,
    duration_us: int = 100_000,
    seed: int = 0,
    knots: int = 4,
) -> SpriteScene:
    """Random scene: textured background plus n_sprites moving layers.

    Textures are drawn from the pool without replacement while it lasts;
    each layer's trajectory is a pose spline through ``knots`` random poses
    inside ``motion_bounds`` (default: a box spanning most of the frame with
    mild depth variation). Deterministic in seed.
    """
    if n_sprites < 0:
        raise ValueError("n_sprites must be >= 0")
    pool = sorted(Path(texture_pool).glob("*.png")) + sorted(Path(texture_pool).glob("*.jpg"))
    if not pool:
        raise ValueError(f"texture pool {texture_pool} is empty")
    g = np.random.default_rng(rng.spawn_seed(seed, rng.TAG_SCENE))
    order = [pool[i] for i in g.permutation(len(pool))]
    pick = lambda i: order[i % len(order)]

    margin = 0.18
    if motion_bounds is None:
        motion_bounds = (
            (margin * width, margin * height, -1.0),
            ((1 - margin) * width, (1 - margin) * height, 1.0),
        )
    knot_times = np.rint(np.linspace(0, duration_us, knots)).astype(np.int64)

    # background: oversized, gently drifting layer that always covers the frame
    bg_half = 0.03
    bg_bounds = (
        ((0.5 - bg_half) * width, (0.5 - bg_half) * height, -0.3),
        ((0.5 + bg_half) * width, (0.5 + bg_half) * height, 0.3),
    )
    bg_spline = fit_pose_spline(
        sample_poses(knots, bg_bounds, rng.spawn_seed(seed, rng.TAG_SCENE, 1000)), knot_times
    )
    background = Sprite(
        texture=_load_texture(pick(0)),
        base_size=(1.6 * width, 1.6 * height),
        z_order=0,
        track=SimilarityTrack(spline=bg_spline, z_efold=12.0),
        full_frame=True,
        texture_ref=str(pick(0)),
    )

    sprites = []
    for i in range(n_sprites):
        side = float(g.uniform(0.16, 0.38) * min(width, height))
        spline = fit_pose_spline(
            sample_poses(knots, motion_bounds, rng.spawn_seed(seed, rng.TAG_SCENE, i)),
            knot_times,
        )
        sprites.append(
            Sprite(
                texture=_load_texture(pick(i + 1)),
                base_size=(side, side),
                z_order=i + 1,
                track=SimilarityTrack(spline=spline, z_efold=6.0),
                texture_ref=str(pick(i + 1)),
            )
        )
    return SpriteScene(
        width=width,
        height=height,
        duration_us=int(duration_us),
        background=background,
        sprites=sprites,
        seed=seed,
    )


def _sprite_to_dict(sp: Sprite, texture_rel: str) -> dict:
    return {
        "texture": texture_rel,
        "base_size": [float(sp.base_size[0]), float(sp.base_size[1])],
        "z_order": sp.z_order,
        "full_frame": sp.full_frame,
        "track": {
            "center_px": list(sp.track.center_px),
            "px_per_unit": sp.track.px_per_unit,
            "base_scale": sp.track.base_scale,
            "z_efold": sp.track.z_efold,
            "knot_times_us": [int(t) for t in sp.track.spline.knot_times],
            "translations": sp.track.spline.translations.tolist(),
            "quaternions": sp.track.spline.quaternions.tolist(),
            "end_time_us": int(sp.track.spline.end_time),
        },
    }


def _sprite_from_dict(d: dict, root: Path) -> Sprite:
    tr = d["track"]
    spline = fit_pose_spline(
        [Pose(t, q) for t, q in zip(tr["translations"], tr["quaternions"])],
        tr["knot_times_us"],
    )
    spline.end_time = int(tr["end_time_us"])
    return Sprite(
        texture=_load_texture(root / d["texture"]),
        base_size=tuple(d["base_size"]),
        z_order=int(d["z_order"]),
        track=SimilarityTrack(
            spline=spline,
            center_px=tuple(tr["center_px"]),
            px_per_unit=float(tr["px_per_unit"]),
            base_scale=float(tr["base_scale"]),
            z_efold=float(tr["z_efold"]),
        ),
        full_frame=bool(d["full_frame"]),
        texture_ref=d["texture"],
    )


def save_scene(scene: SpriteScene, root) -> Path:
    """Write scene.json under root, copying textures to root/textures/."""
    import shutil

    root = Path(root)
    tex_dir = root / "textures"
    tex_dir.mkdir(parents=True, exist_ok=True)
    rels = {}
    for layer in [scene.background] + scene.sprites:
        src = Path(layer.texture_ref)
        rel = f"textures/{src.name}"
        if rel not in rels.values() and src.resolve() != (root / rel).resolve():
            shutil.copyfile(src, root / rel)
        rels[id(layer)] = rel
    doc = {
        "width": scene.width,
        "height": scene.height,
        "duration_us": scene.duration_us,
        "seed": scene.seed,
        "background": _sprite_to_dict(scene.background, rels[id(scene.background)]),
        "sprites": [_sprite_to_dict(s, rels[id(s)]) for s in scene.sprites],
    }
    path = root / "scene.json"
    path.write_text(json.dumps(doc, indent=1, sort_keys=True))
    return path


def load_scene(root) -> SpriteScene:
    root = Path(root)
    doc = json.loads((root / "scene.json").read_text())
    return SpriteScene(
        width=int(doc["width"]),
        height=int(doc["height"]),
        duration_us=int(doc["duration_us"]),
        background=_sprite_from_dict(doc["background"], root),
        sprites=[_sprite_from_dict(d, root) for d in doc["sprites"]],
        seed=int(doc["seed"]),
    )

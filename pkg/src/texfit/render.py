"""Rasterization, texel visibility, bilinear sampling, texture extraction.

Visibility (z-buffer) is deliberately non-differentiable and is treated as a
constant mask by every gradient; bilinear sampling of image colors is the
differentiable half. No anti-aliasing anywhere: determinism over looks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .body_model import BodyModel, Mesh, rot6d_to_matrix, texel_positions
from .camera import CameraParams, project, view_depth
from .errors import AtlasMismatch

# scale-invariant slack for the self-occlusion depth test
DEPTH_EPS_FACTOR = 1e-4


@dataclass
class Image:
    """H x W x 3 float image with channel values in [0, 1]."""

    rgb: np.ndarray

    def __post_init__(self):
        self.rgb = np.asarray(self.rgb, dtype=np.float64)
        if self.rgb.ndim != 3 or self.rgb.shape[2] != 3 or \
                self.rgb.shape[0] < 2 or self.rgb.shape[1] < 2:
            raise ValueError("image must be H x W x 3 with H, W >= 2")
        if self.rgb.min() < 0.0 or self.rgb.max() > 1.0:
            raise ValueError("image values must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.rgb.shape[0]

    @property
    def width(self) -> int:
        return self.rgb.shape[1]


@dataclass
class TextureMap:
    """Per-texel colors plus the visibility mask that produced them.

    ``values`` rows at invisible texels are zero-filled and are never read by
    any loss. ``values`` may be an autodiff Var on the differentiable path.
    """

    values: object        # (T, 3)
    visible: np.ndarray   # (T,) bool


@dataclass
class RasterBuffers:
    """Z-buffer output: per-pixel nearest depth and winning face id (-1 empty)."""

    depth: np.ndarray    # (H, W) float, +inf where empty
    face_id: np.ndarray  # (H, W) int, -1 where empty


def depth_epsilon(mesh: Mesh) -> float:
    """Self-occlusion slack: a fixed fraction of the bounding-box diagonal."""
    v = mesh.vertex_values
    diag = float(np.linalg.norm(v.max(axis=0) - v.min(axis=0)))
    return DEPTH_EPS_FACTOR * diag


def _edge(px, py, ax, ay, bx, by):
    """2D edge function cross((b - a), (p - a)) on pixel grids."""
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


def rasterize(mesh: Mesh, cam: CameraParams, width: int, height: int) -> RasterBuffers:
    """Z-buffer rasterization with pixel-center coverage.

    Front-facing triangles only (screen-space signed area < 0 under the
    y-down convention, which equals camera-frame normal . view < 0); coverage
    ties on shared edges resolve with a top-left fill rule; depth ties keep
    the lower face index.
    """
    verts = mesh.vertex_values
    p2d = ad.detach(project(verts, cam))
    z = ad.detach(view_depth(verts, cam))
    tri = p2d[mesh.faces]   # (F, 3, 2)
    triz = z[mesh.faces]    # (F, 3)

    area = ((tri[:, 1, 0] - tri[:, 0, 0]) * (tri[:, 2, 1] - tri[:, 0, 1]) -
            (tri[:, 1, 1] - tri[:, 0, 1]) * (tri[:, 2, 0] - tri[:, 0, 0]))
    front = area < 0.0

    depth = np.full((height, width), np.inf)
    face_id = np.full((height, width), -1, dtype=np.int64)

    # clipped integer pixel bounding boxes of front faces
    bx0 = np.maximum(np.ceil(tri[:, :, 0].min(axis=1)), 0).astype(np.int64)
    bx1 = np.minimum(np.floor(tri[:, :, 0].max(axis=1)), width - 1).astype(np.int64)
    by0 = np.maximum(np.ceil(tri[:, :, 1].min(axis=1)), 0).astype(np.int64)
    by1 = np.minimum(np.floor(tri[:, :, 1].max(axis=1)), height - 1).astype(np.int64)
    valid = front & (bx0 <= bx1) & (by0 <= by1)
    fids = np.nonzero(valid)[0]
    if fids.size == 0:
        return RasterBuffers(depth=depth, face_id=face_id)

    # one flat candidate list of (face, pixel) pairs over all bboxes
    bw = bx1[fids] - bx0[fids] + 1
    counts = bw * (by1[fids] - by0[fids] + 1)
    offsets = np.concatenate([[0], np.cumsum(counts)])
    fcand = np.repeat(fids, counts)
    local = np.arange(offsets[-1]) - np.repeat(offsets[:-1], counts)
    wrep = np.repeat(bw, counts)
    px = np.repeat(bx0[fids], counts) + local % wrep
    py = np.repeat(by0[fids], counts) + local // wrep
    pxf = px.astype(np.float64)
    pyf = py.astype(np.float64)

    inside = np.ones(px.shape, dtype=bool)
    ws = []
    for a, b in ((0, 1), (1, 2), (2, 0)):
        ax, ay = tri[fcand, a, 0], tri[fcand, a, 1]
        ex = tri[fcand, b, 0] - ax
        ey = tri[fcand, b, 1] - ay
        w = ex * (pyf - ay) - ey * (pxf - ax)
        top_left = (ey > 0.0) | ((ey == 0.0) & (ex < 0.0))
        inside &= (w < 0.0) | ((w == 0.0) & top_left)
        ws.append(w)
    if not inside.any():
        return RasterBuffers(depth=depth, face_id=face_id)

    # interpolated depth: lambda_i proportional to the opposite edge value
    asum = area[fcand]
    d = (ws[1] * triz[fcand, 0] + ws[2] * triz[fcand, 1] +
         ws[0] * triz[fcand, 2]) / asum

    pix = (py * width + px)[inside]
    d = d[inside]
    fcand = fcand[inside]
    # nearest depth wins per pixel; equal depths keep the lowest face id
    order = np.lexsort((fcand, d, pix))
    pix, d, fcand = pix[order], d[order], fcand[order]
    first = np.ones(pix.shape, dtype=bool)
    first[1:] = pix[1:] != pix[:-1]
    depth.flat[pix[first]] = d[first]
    face_id.flat[pix[first]] = fcand[first]
    return RasterBuffers(depth=depth, face_id=face_id)


def face_front_mask(mesh: Mesh, cam: CameraParams) -> np.ndarray:
    """(F,) bool: camera-frame normal . view direction < 0."""
    rot = rot6d_to_matrix(ad.detach(cam.rot6d))
    vc = mesh.vertex_values @ rot.T
    tri = vc[mesh.faces]
    n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    return n[:, 2] < 0.0


def texel_visibility(mesh: Mesh, cam: CameraParams, buffers: RasterBuffers,
                     model: BodyModel) -> np.ndarray:
    """Per-texel visibility under the z-buffer test (non-differentiable).

    A texel is visible iff its face is front-facing, its projection falls
    inside the pixel-center rectangle, and its view depth is within the
    depth-epsilon of the buffered depth at its (rounded) pixel.
    """
    h, w = buffers.depth.shape
    pos = ad.detach(texel_positions(Mesh(mesh.vertex_values, mesh.faces), model))
    p2d = ad.detach(project(pos, cam))
    d = ad.detach(view_depth(pos, cam))
    front = face_front_mask(mesh, cam)[model.atlas_faces]
    x, y = p2d[:, 0], p2d[:, 1]
    in_img = (x >= 0.0) & (x <= w - 1.0) & (y >= 0.0) & (y <= h - 1.0)
    px = np.clip(np.rint(x).astype(np.int64), 0, w - 1)
    py = np.clip(np.rint(y).astype(np.int64), 0, h - 1)
    eps = depth_epsilon(mesh)
    unoccluded = d <= buffers.depth[py, px] + eps
    return front & in_img & unoccluded


def sampling_support_mask(mesh: Mesh, cam: CameraParams,
                          buffers: RasterBuffers, model: BodyModel,
                          slope_factor: float = 0.02) -> np.ndarray:
    """Texels whose whole bilinear stencil reads well-defined surface color.

    All four surrounding pixels must be covered by rendered geometry, and
    none may be covered by a surface more than ``slope_factor`` of the
    bounding-box diagonal nearer than the texel (background or a clearly
    nearer occluder would bleed into the sample). Non-differentiable, used as
    a constant mask like the visibility itself.
    """
    h, w = buffers.depth.shape
    pos = ad.detach(texel_positions(Mesh(mesh.vertex_values, mesh.faces), model))
    p2d = ad.detach(project(pos, cam))
    d = ad.detach(view_depth(pos, cam))
    x0 = np.clip(np.floor(p2d[:, 0]).astype(np.int64), 0, w - 2)
    y0 = np.clip(np.floor(p2d[:, 1]).astype(np.int64), 0, h - 2)
    margin = slope_factor * float(np.linalg.norm(
        mesh.vertex_values.max(axis=0) - mesh.vertex_values.min(axis=0)))
    ok = np.ones(pos.shape[0], dtype=bool)
    for dy in (0, 1):
        for dx in (0, 1):
            cov = buffers.face_id[y0 + dy, x0 + dx] >= 0
            near = buffers.depth[y0 + dy, x0 + dx] >= d - margin
            ok &= cov & near
    return ok


def effective_texel_visibility(mesh: Mesh, cam: CameraParams,
                               buffers: RasterBuffers,
                               model: BodyModel) -> np.ndarray:
    """Visibility used by the texture losses: z-buffer test plus the
    sampling-support guard."""
    return texel_visibility(mesh, cam, buffers, model) & \
        sampling_support_mask(mesh, cam, buffers, model)


def sample_bilinear(image: Image, points2d):
    """Bilinear interpolation of the four surrounding pixel centers.

    Coordinates clamp to the border; differentiable w.r.t. the points away
    from the pixel-center gridlines.
    """
    h, w = image.height, image.width
    x = ad.clip(points2d[:, 0], 0.0, float(w - 1))
    y = ad.clip(points2d[:, 1], 0.0, float(h - 1))
    x0 = np.minimum(ad.floor_index(x), w - 2)
    y0 = np.minimum(ad.floor_index(y), h - 2)
    fx = ad.reshape(x - x0.astype(np.float64), (-1, 1))
    fy = ad.reshape(y - y0.astype(np.float64), (-1, 1))
    img = image.rgb
    c00 = img[y0, x0]
    c01 = img[y0, x0 + 1]
    c10 = img[y0 + 1, x0]
    c11 = img[y0 + 1, x0 + 1]
    return (c00 * (1.0 - fy) * (1.0 - fx) + c01 * (1.0 - fy) * fx +
            c10 * fy * (1.0 - fx) + c11 * fy * fx)


def extract_texture(image: Image, mesh: Mesh, cam: CameraParams,
                    model: BodyModel, visible: np.ndarray | None = None) -> TextureMap:
    """Texture map of the frame: sampled colors at visible texel projections.

    Visibility is computed fresh (rasterize, z-buffer test, sampling-support
    guard) unless a frozen mask is passed in; either way gradients treat it
    as a constant.
    """
    if visible is None:
        buffers = rasterize(Mesh(mesh.vertex_values, mesh.faces), cam,
                            image.width, image.height)
        visible = effective_texel_visibility(mesh, cam, buffers, model)
    if visible.shape[0] != model.num_texels:
        raise AtlasMismatch("visibility mask does not match the atlas")
    pos = texel_positions(mesh, model)
    p2d = project(pos, cam)
    sampled = sample_bilinear(image, p2d)
    mask = visible.astype(np.float64)[:, None]
    return TextureMap(values=sampled * mask, visible=visible)


def render_image(mesh: Mesh, cam: CameraParams, texel_colors: np.ndarray,
                 model: BodyModel, width: int, height: int,
                 background=(0.0, 0.0, 0.0)) -> Image:
    """Flat-shaded render: each covered pixel takes the color of the nearest
    texel (by projected distance) belonging to its winning face."""
    buffers = rasterize(mesh, cam, width, height)
    texel_colors = np.asarray(texel_colors, dtype=np.float64)
    out = np.empty((height, width, 3))
    out[:] = np.asarray(background, dtype=np.float64)

    covered = buffers.face_id >= 0
    if covered.any():
        by_face = model.texels_of_face()          # (F, K)
        pys, pxs = np.nonzero(covered)
        fids = buffers.face_id[pys, pxs]
        cand = by_face[fids]                      # (N, K) texel ids
        pos = ad.detach(texel_positions(Mesh(mesh.vertex_values, mesh.faces),
                                        model))
        p2d = ad.detach(project(pos, cam))
        centers = np.stack([pxs, pys], axis=1).astype(np.float64)
        d2 = ((p2d[cand] - centers[:, None, :]) ** 2).sum(axis=2)
        nearest = cand[np.arange(cand.shape[0]), d2.argmin(axis=1)]
        out[pys, pxs] = texel_colors[nearest]
    return Image(rgb=np.clip(out, 0.0, 1.0))


def render_silhouette(mesh: Mesh, cam: CameraParams, width: int, height: int) -> np.ndarray:
    """(H, W) bool foreground mask: exactly the raster occupancy."""
    return rasterize(mesh, cam, width, height).face_id >= 0


# --------------------------------------------------------------------------
# PPM image I/O (binary P6). Color values are treated as linear.
# --------------------------------------------------------------------------

def write_ppm(image: Image, path) -> None:
    data = np.clip(np.rint(image.rgb * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P6\n{image.width} {image.height}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def read_ppm(path) -> Image:
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"P6":
            raise ValueError(f"not a binary PPM file: {path}")
        dims = []
        while len(dims) < 3:
            line = f.readline()
            if line.startswith(b"#"):
                continue
            dims.extend(int(v) for v in line.split())
        w, h, maxval = dims
        raw = np.frombuffer(f.read(w * h * 3), dtype=np.uint8)
    return Image(rgb=raw.reshape(h, w, 3).astype(np.float64) / float(maxval))


def save_image(image: Image, path) -> None:
    """Write PPM by default; .png goes through Pillow when available."""
    path = str(path)
    if path.endswith(".png"):
        from PIL import Image as PILImage
        data = np.clip(np.rint(image.rgb * 255.0), 0, 255).astype(np.uint8)
        PILImage.fromarray(data, mode="RGB").save(path)
    else:
        write_ppm(image, path)

"""Synthetic morphology-controlled samples plus on-disk dataset handling.

The generator spans the morphology axes the adaptive loss reacts to:
blobs are compact near-disks, tubes are elongated curves thick enough that
radius-1 erosion leaves a wide skeleton (thin 1-2 px tubes would zero out
the tubularity feature), irregular shapes carry a heavily wobbled boundary,
and multi scatters several small blobs. Images are a smoothed copy of the
mask over a softly textured background with mild pixel noise, so the
foreground is learnable without being trivial.

Disk layout: <root>/images/<stem>.png and <root>/masks/<stem>.png, plus a
manifest.csv with per-sample morphology columns.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError
from .loss import morph_features


# Per-kind settings for a morphology-discrimination corpus: small round
# blobs, moderately wobbled irregulars, long thick tubes. With these, mean
# compactness orders blob > irregular > tube and the boundary modulation of
# tubes exceeds blobs, each with comfortable margins.
CORPUS_HW = (128, 128)
CORPUS_RECIPES = {
    "blob": dict(size_fraction=0.004, wiggle=0.3),
    "irregular": dict(size_fraction=0.03, wiggle=0.16),
    "tube": dict(size_fraction=0.10, tube_width=13),
}


@dataclass
class ShapeSpec:
    kind: str
    size_fraction: float = 0.15
    wiggle: float = 0.3
    seed: int = 0
    tube_width: int = 13

    def __post_init__(self):
        if self.kind not in ("blob", "tube", "irregular", "multi"):
            raise DataError(f"unknown shape kind {self.kind!r}")
        if not 0.0 < self.size_fraction < 1.0:
            raise DataError("size_fraction must be in (0,1)")


@dataclass
class Sample:
    image: np.ndarray  # (3, H, W) float32 in [0,1]
    mask: np.ndarray   # (H, W) float32 binary
    id: str


# ---------------------------------------------------------------------------
# small image-processing helpers (dependency-free)


def _box_blur(a: np.ndarray, radius: int, passes: int = 3) -> np.ndarray:
    """Repeated box filter via cumulative sums, edge-replicated."""
    out = a.astype(np.float64)
    k = 2 * radius + 1
    for _ in range(passes):
        for axis in (0, 1):
            p = np.pad(out, [(radius + 1, radius) if ax == axis else (0, 0) for ax in (0, 1)], mode="edge")
            c = np.cumsum(p, axis=axis)
            if axis == 0:
                out = (c[k:, :] - c[:-k, :]) / k
            else:
                out = (c[:, k:] - c[:, :-k]) / k
    return out


def _dilate_binary(mask: np.ndarray, times: int = 1) -> np.ndarray:
    out = mask.astype(bool)
    for _ in range(times):
        p = np.pad(out, 1, mode="edge")
        acc = np.zeros_like(out)
        for di in (0, 1, 2):
            for dj in (0, 1, 2):
                acc |= p[di : di + out.shape[0], dj : dj + out.shape[1]]
        out = acc
    return out


# ---------------------------------------------------------------------------
# shape rasterizers


def _polar_mask(rng, hw, size_fraction, modes, amp):
    H, W = hw
    target = size_fraction * H * W
    r0 = np.sqrt(target / np.pi)
    if r0 < 2.5:
        raise DataError(f"size_fraction {size_fraction} too small to rasterize at {hw}")
    coeffs = amp * rng.uniform(0.3, 1.0, size=len(modes)) / np.sqrt(len(modes))
    phases = rng.uniform(0, 2 * np.pi, size=len(modes))
    margin = r0 * (1 + amp) + 2
    if 2 * margin >= min(H, W):
        raise DataError(f"size_fraction {size_fraction} infeasible for shape at {hw}")
    cy = rng.uniform(margin, H - margin)
    cx = rng.uniform(margin, W - margin)
    yy, xx = np.mgrid[0:H, 0:W]
    theta = np.arctan2(yy - cy, xx - cx)
    rho = np.hypot(yy - cy, xx - cx)
    radius = r0 * (1.0 + sum(a * np.cos(m * theta + ph) for a, m, ph in zip(coeffs, modes, phases)))
    mask = (rho <= radius).astype(np.float64)
    measured = mask.sum()
    if measured > 0:
        # one corrective re-scale toward the requested area
        radius = radius * np.sqrt(target / measured)
        mask = (rho <= radius).astype(np.float64)
    if mask.sum() == 0:
        raise DataError(f"shape rasterized empty at {hw} with size_fraction {size_fraction}")
    return mask


def _blob_mask(rng, hw, spec):
    return _polar_mask(rng, hw, spec.size_fraction, modes=(2, 3), amp=0.08 * max(spec.wiggle, 0.1))


def _irregular_mask(rng, hw, spec):
    amp = 0.12 + 0.5 * spec.wiggle
    return _polar_mask(rng, hw, spec.size_fraction, modes=(3, 4, 5, 7, 9, 11), amp=amp)


def _tube_mask(rng, hw, spec):
    H, W = hw
    width = max(3, int(spec.tube_width) | 1)
    target = spec.size_fraction * H * W
    margin = width // 2 + 2
    if spec.size_fraction > 0.35:
        raise DataError(f"size_fraction {spec.size_fraction} infeasible for a tube")
    if 2 * margin + 4 >= min(H, W):
        raise DataError(f"tube of width {width} does not fit in {hw}")
    skel = np.zeros((H, W), dtype=bool)
    y = rng.uniform(margin + 2, H - margin - 2)
    x = rng.uniform(margin + 2, W - margin - 2)
    heading = rng.uniform(0, 2 * np.pi)
    turn = 0.0
    base_len = max(8, int(target / width))
    max_steps = 8 * base_len
    check_every = max(8, base_len // 4)
    mask = None
    for step in range(max_steps):
        turn = 0.9 * turn + 0.08 * (0.5 + spec.wiggle) * rng.standard_normal()
        heading += turn
        ny = y + np.sin(heading)
        nx = x + np.cos(heading)
        if not (margin <= ny <= H - 1 - margin):
            heading = -heading
            turn = 0.0
            ny = y + np.sin(heading)
        if not (margin <= nx <= W - 1 - margin):
            heading = np.pi - heading
            turn = 0.0
            nx = x + np.cos(heading)
        y, x = np.clip(ny, margin, H - 1 - margin), np.clip(nx, margin, W - 1 - margin)
        skel[int(round(y)), int(round(x))] = True
        if step >= base_len and step % check_every == 0:
            mask = _dilate_binary(skel, width // 2)
            if mask.sum() >= target:
                break
    mask = _dilate_binary(skel, width // 2) if mask is None else mask
    s_measured = mask.sum() / (H * W)
    if s_measured < spec.size_fraction - 0.05:
        raise DataError(
            f"tube could not reach size_fraction {spec.size_fraction} at {hw} (got {s_measured:.3f})"
        )
    return mask.astype(np.float64)


def _multi_mask(rng, hw, spec):
    if spec.size_fraction > 0.4:
        raise DataError(f"size_fraction {spec.size_fraction} infeasible for multi")
    n = int(rng.integers(2, 5))
    acc = np.zeros(hw, dtype=np.float64)
    for _ in range(n):
        part = _polar_mask(rng, hw, spec.size_fraction / n, modes=(2, 3), amp=0.1)
        acc = np.maximum(acc, part)
    return acc


_RASTERIZERS = {
    "blob": _blob_mask,
    "tube": _tube_mask,
    "irregular": _irregular_mask,
    "multi": _multi_mask,
}


def _render_image(rng, mask: np.ndarray) -> np.ndarray:
    H, W = mask.shape
    soft = _box_blur(mask, radius=2, passes=2)
    channels = []
    base_noise = rng.standard_normal((H, W))
    for c in range(3):
        texture = _box_blur(base_noise + 0.5 * rng.standard_normal((H, W)), radius=4, passes=3)
        ch = 0.45 + 0.10 * texture
        ch = ch + soft * (0.28 + 0.04 * c)
        ch = ch + 0.02 * rng.standard_normal((H, W))
        channels.append(ch)
    img = np.clip(np.stack(channels, axis=0), 0.0, 1.0)
    return img.astype(np.float32)


def gen_shape(spec: ShapeSpec, hw) -> Sample:
    """Deterministically generate one image/mask pair from a spec."""
    H, W = hw
    if H < 32 or W < 32:
        raise DataError(f"generation size {hw} too small (need >= 32)")
    rng = np.random.default_rng(spec.seed)
    mask = _RASTERIZERS[spec.kind](rng, (H, W), spec)
    image = _render_image(rng, mask)
    return Sample(image=image, mask=mask.astype(np.float32), id=f"{spec.kind}_{spec.seed:06d}")


def generate_dataset(out_dir, kind: str, count: int, size_fraction: float, hw,
                     wiggle: float = 0.3, tube_width: int = 13, seed: int = 0):
    """Write count samples of one kind to the standard directory layout."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    manifest_path = out / "manifest.csv"
    new_file = not manifest_path.exists()
    rows = []
    for i in range(count):
        spec = ShapeSpec(kind=kind, size_fraction=size_fraction, wiggle=wiggle,
                         seed=seed + i, tube_width=tube_width)
        sample = gen_shape(spec, hw)
        save_sample(out, sample)
        f = morph_features(sample.mask)
        rows.append([sample.id, kind, spec.seed, f"{f.scale:.6f}", f"{f.tubularity:.6f}",
                     f"{f.compactness:.6f}", f"{f.irregularity:.6f}"])
    with open(manifest_path, "a", newline="") as fh:
        w = csv.writer(fh)
        if new_file:
            w.writerow(["stem", "kind", "seed", "s", "tau", "c", "iota"])
        w.writerows(rows)
    return [r[0] for r in rows]


def save_sample(root, sample: Sample):
    root = Path(root)
    img = (np.transpose(sample.image, (1, 2, 0)) * 255.0).round().astype(np.uint8)
    Image.fromarray(img, mode="RGB").save(root / "images" / f"{sample.id}.png")
    m = (sample.mask * 255.0).astype(np.uint8)
    Image.fromarray(m, mode="L").save(root / "masks" / f"{sample.id}.png")


_IMAGE_EXTS = (".png", ".pgm", ".ppm")


def _find_files(folder: Path):
    files = {}
    for p in sorted(folder.iterdir()):
        if p.suffix.lower() in _IMAGE_EXTS:
            files[p.stem] = p
    return files


def load_dataset(root, hw) -> list:
    """Load image/mask pairs, resizing images bilinearly and masks nearest."""
    root = Path(root)
    img_dir, mask_dir = root / "images", root / "masks"
    if not img_dir.is_dir() or not mask_dir.is_dir():
        raise DataError(f"{root} must contain images/ and masks/")
    images = _find_files(img_dir)
    masks = _find_files(mask_dir)
    only_img = sorted(set(images) - set(masks))
    only_mask = sorted(set(masks) - set(images))
    if only_img or only_mask:
        raise DataError(
            f"unpaired stems in {root}: images-only={only_img[:10]} masks-only={only_mask[:10]}"
        )
    H, W = hw
    samples = []
    for stem in sorted(images):
        try:
            with Image.open(images[stem]) as im:
                rgb = im.convert("RGB").resize((W, H), Image.BILINEAR)
            with Image.open(masks[stem]) as mm:
                gray = mm.convert("L").resize((W, H), Image.NEAREST)
        except Exception as exc:
            raise DataError(f"unreadable file for stem {stem!r}: {exc}") from exc
        img = np.transpose(np.asarray(rgb, dtype=np.float32) / 255.0, (2, 0, 1))
        mask = (np.asarray(gray, dtype=np.float32) / 255.0 >= 0.5).astype(np.float32)
        samples.append(Sample(image=img, mask=mask, id=stem))
    return samples


def augment(sample: Sample, rng) -> Sample:
    """Random H/V flips (p=0.5 each) and a uniform multiple-of-90 rotation."""
    img, mask = sample.image, sample.mask
    if rng.random() < 0.5:
        img, mask = img[:, :, ::-1], mask[:, ::-1]
    if rng.random() < 0.5:
        img, mask = img[:, ::-1, :], mask[::-1, :]
    k = int(rng.integers(0, 4))
    if k:
        img = np.rot90(img, k, axes=(1, 2))
        mask = np.rot90(mask, k, axes=(0, 1))
    return Sample(image=np.ascontiguousarray(img), mask=np.ascontiguousarray(mask), id=sample.id)

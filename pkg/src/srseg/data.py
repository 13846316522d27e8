"""Dataset handling: tiling, train/test split protocols, degradation cache,
and the synthetic texture dataset used for desk-scale runs.

Disk layout::

    <root>/<dataset>/<split>/images/*.png|*.tif
    <root>/<dataset>/<split>/labels/*.png        # single-channel class ids
    <root>/<dataset>/<split>/cache/x<r>/<tile_id>.png   # degraded tiles

Manifests are plain text, one line per sample:
``source_id<TAB>hr_path<TAB>label_path`` with paths relative to the manifest
file location.
"""

import dataclasses
import re
import unicodedata
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from .resample import bicubic_downsample, quantize_u8
from .validation import IGNORE_ID, check_labels, check_raster, check_same_hw

IMAGE_SUFFIXES = (".png", ".tif", ".tiff")


@dataclasses.dataclass(frozen=True)
class DegradationSpec:
    """Bicubic degradation parameters: integer factor, kernel a, anti-alias flag."""

    factor: int
    kernel_a: float = -0.5
    antialias: bool = True

    def __post_init__(self):
        if self.factor not in (2, 4, 8):
            raise ValueError(f"degradation factor must be 2, 4 or 8, got {self.factor}")


@dataclasses.dataclass(frozen=True)
class SampleRecord:
    source_id: str
    hr_path: Path
    label_path: Path


@dataclasses.dataclass
class DatasetManifest:
    name: str
    split: str
    records: list
    num_classes: int
    excluded_classes: frozenset
    class_names: tuple
    palette: dict
    degradation: DegradationSpec | None = None

    def __post_init__(self):
        self.records = sorted(self.records, key=lambda r: r.source_id)


@dataclasses.dataclass
class RasterSample:
    """One training/evaluation unit: HR tile, its degraded LR twin, labels."""

    source_id: str
    hr: np.ndarray
    lr: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        hh, hw = self.hr.shape[:2]
        lh, lw = self.lr.shape[:2]
        if lh == 0 or hh % lh or hw % lw or hh // lh != hw // lw:
            raise ValueError(
                f"{self.source_id}: lr size {lh}x{lw} does not divide hr {hh}x{hw}"
            )
        check_same_hw(self.hr, self.labels, "hr", "labels")

    @property
    def factor(self):
        return self.hr.shape[0] // self.lr.shape[0]


def tile_image(image, labels, tile):
    """Cut an image/label pair into non-overlapping tile x tile crops.

    Tiles are returned in row-major order; border remainders smaller than the
    tile are discarded.
    """
    if tile < 1:
        raise ValueError(f"tile size must be >= 1, got {tile}")
    img = check_raster(image)
    lab = check_labels(labels)
    check_same_hw(img, lab)
    h, w = img.shape[:2]
    out = []
    for r0 in range(0, h - tile + 1, tile):
        for c0 in range(0, w - tile + 1, tile):
            out.append((img[r0:r0 + tile, c0:c0 + tile].copy(),
                        lab[r0:r0 + tile, c0:c0 + tile].copy()))
    return out


def tile_offsets(h, w, tile):
    return [(r0, c0)
            for r0 in range(0, h - tile + 1, tile)
            for c0 in range(0, w - tile + 1, tile)]


# ---------------------------------------------------------------------------
# raster file IO

def load_image(path):
    img = Image.open(path)
    if img.mode not in ("RGB", "L", "I;16", "I"):
        img = img.convert("RGB")
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    return arr


def save_image(path, arr):
    data = quantize_u8(arr)
    if data.ndim == 3 and data.shape[2] == 1:
        data = data[:, :, 0]
    Image.fromarray(data).save(path)


def load_labels(path):
    return np.asarray(Image.open(path), dtype=np.int64)


def save_labels(path, labels):
    Image.fromarray(labels.astype(np.uint8), mode="L").save(path)


def save_paletted(path, labels, palette):
    """Export a thematic map as a paletted PNG using the class palette."""
    img = Image.fromarray(labels.astype(np.uint8), mode="P")
    flat = [0] * (256 * 3)
    for cid, rgb in palette.items():
        flat[3 * cid:3 * cid + 3] = list(rgb)
    img.putpalette(flat)
    img.save(path)


def default_palette(num_classes):
    """Distinct display colors via golden-angle hue stepping."""
    palette = {}
    for k in range(num_classes):
        hue = (k * 0.618033988749895) % 1.0
        i = int(hue * 6)
        f = hue * 6 - i
        p, q, t = 64, int(255 * (1 - f)) or 64, int(255 * f) or 64
        rgb = [(255, t, p), (q, 255, p), (p, 255, t),
               (p, q, 255), (t, p, 255), (255, p, q)][i % 6]
        palette[k] = rgb
    palette[IGNORE_ID] = (0, 0, 0)
    return palette


# ---------------------------------------------------------------------------
# split protocols

VAIHINGEN_TEST_AREAS = frozenset({11, 15, 28, 30, 34})
COFFEE_TRAIN_CITIES = ("guaxupe", "montesanto")
COFFEE_TEST_CITIES = ("guaranesia",)

VAIHINGEN_CLASSES = ("impervious_surfaces", "building", "low_vegetation",
                     "tree", "car", "clutter_background")
VAIHINGEN_PALETTE = {0: (255, 255, 255), 1: (0, 0, 255), 2: (0, 255, 255),
                     3: (0, 255, 0), 4: (255, 255, 0), 5: (255, 0, 0),
                     IGNORE_ID: (0, 0, 0)}
THETFORD_CLASSES = ("trees", "vegetation", "road", "bare_soil",
                    "red_roof", "gray_roof", "concrete_roof")
COFFEE_CLASSES = ("non_coffee", "coffee")


def _ascii(stem):
    return unicodedata.normalize("NFKD", stem).encode("ascii", "ignore").decode().lower()


def _vaihingen_split(stem):
    m = re.search(r"area(\d+)", stem.lower())
    if not m:
        raise ValueError(f"vaihingen file '{stem}' has no areaNN id in its name")
    return "test" if int(m.group(1)) in VAIHINGEN_TEST_AREAS else "train"


def _coffee_split(stem):
    s = _ascii(stem).replace("_", "").replace("-", "")
    if any(c in s for c in COFFEE_TEST_CITIES):
        return "test"
    if any(c in s for c in COFFEE_TRAIN_CITIES):
        return "train"
    raise ValueError(f"coffee file '{stem}' does not name a known city")


_DATASETS = {
    "coffee": dict(num_classes=2, excluded=frozenset(), classes=COFFEE_CLASSES,
                   palette={0: (40, 40, 40), 1: (0, 200, 0), IGNORE_ID: (0, 0, 0)},
                   split_fn=_coffee_split),
    "vaihingen": dict(num_classes=6, excluded=frozenset({5}),
                      classes=VAIHINGEN_CLASSES, palette=VAIHINGEN_PALETTE,
                      split_fn=_vaihingen_split),
    "thetford": dict(num_classes=7, excluded=frozenset({3}),
                     classes=THETFORD_CLASSES,
                     palette=default_palette(7), split_fn=None),
    "synthetic": None,  # populated per-manifest from its class count
}


def dataset_ids():
    return tuple(_DATASETS)


def _scan_split_dir(split_dir):
    """Yield (stem, image path, label path) for one split directory."""
    images_dir = split_dir / "images"
    if not images_dir.is_dir():
        return
    for img in sorted(images_dir.iterdir()):
        if img.suffix.lower() not in IMAGE_SUFFIXES:
            continue
        label = split_dir / "labels" / (img.stem + ".png")
        if not label.is_file():
            raise FileNotFoundError(
                f"missing label file for image '{img}': expected '{label}'"
            )
        yield img.stem, img, label


def load_dataset(root, name, spec=None, split="train"):
    """Build the manifest for one split of a dataset under the documented layout.

    Datasets with a published protocol (coffee city assignment, the vaihingen
    test areas) are split by source id regardless of which split directory a
    file sits in; thetford and synthetic keep the on-disk contest split.
    """
    if name not in _DATASETS:
        raise ValueError(f"unknown dataset id '{name}' (known: {sorted(_DATASETS)})")
    if split not in ("train", "test"):
        raise ValueError(f"split must be 'train' or 'test', got '{split}'")
    base = Path(root) / name
    if not base.is_dir():
        raise FileNotFoundError(f"dataset directory '{base}' does not exist")

    if name == "synthetic":
        return _load_synthetic_manifest(base, spec, split)

    info = _DATASETS[name]
    records = []
    found_any = False
    for split_dir_name in ("train", "test"):
        split_dir = base / split_dir_name
        for stem, img, label in _scan_split_dir(split_dir):
            found_any = True
            assigned = (info["split_fn"](stem) if info["split_fn"]
                        else split_dir_name)
            if assigned == split:
                records.append(SampleRecord(stem, img, label))
    if not found_any:
        raise FileNotFoundError(f"no images found under '{base}'")
    return DatasetManifest(
        name=name, split=split, records=records,
        num_classes=info["num_classes"], excluded_classes=info["excluded"],
        class_names=info["classes"], palette=dict(info["palette"]),
        degradation=spec,
    )


def _load_synthetic_manifest(base, spec, split):
    split_dir = base / split
    meta_path = split_dir / "classes.txt"
    if not meta_path.is_file():
        raise FileNotFoundError(f"synthetic split '{split_dir}' not generated")
    num_classes = int(meta_path.read_text().strip())
    records = [SampleRecord(stem, img, label)
               for stem, img, label in _scan_split_dir(split_dir)]
    if not records:
        raise FileNotFoundError(f"no images found under '{split_dir}'")
    return DatasetManifest(
        name="synthetic", split=split, records=records,
        num_classes=num_classes, excluded_classes=frozenset(),
        class_names=tuple(f"class_{k}" for k in range(num_classes)),
        palette=default_palette(num_classes), degradation=spec,
    )


def write_manifest(manifest, path):
    """Export the one-line-per-sample manifest, paths relative to the file."""
    path = Path(path)
    base = path.parent
    lines = []
    for rec in manifest.records:
        hr = Path(rec.hr_path).resolve().relative_to(base.resolve())
        lab = Path(rec.label_path).resolve().relative_to(base.resolve())
        lines.append(f"{rec.source_id}\t{hr.as_posix()}\t{lab.as_posix()}")
    path.write_text("\n".join(lines) + "\n")
    return path


# ---------------------------------------------------------------------------
# sample materialization

def iter_samples(manifest, tile, cache=True):
    """Yield RasterSamples: tile each source raster and attach its degraded twin.

    LR tiles are 8-bit quantized (degradation happens once, at the precision of
    the cache files) and cached under ``<split>/cache/x<r>/<tile_id>.png``.
    Enumeration order is fixed: lexicographic by source id, tiles row-major.
    """
    spec = manifest.degradation
    if spec is None:
        raise ValueError("manifest has no degradation spec attached")
    if tile % spec.factor:
        raise ValueError(f"tile {tile} not divisible by factor {spec.factor}")
    for rec in manifest.records:
        image = load_image(rec.hr_path)
        labels = load_labels(rec.label_path)
        check_same_hw(image, labels, rec.source_id, "labels")
        h, w = image.shape[:2]
        for r0, c0 in tile_offsets(h, w, tile):
            tid = f"{rec.source_id}_r{r0 // tile:02d}c{c0 // tile:02d}"
            hr = image[r0:r0 + tile, c0:c0 + tile]
            lab = labels[r0:r0 + tile, c0:c0 + tile]
            lr = _degraded_tile(manifest, rec, tid, hr, spec, cache)
            yield RasterSample(tid, hr.astype(np.float64), lr, lab)


def _degraded_tile(manifest, rec, tile_id, hr, spec, cache):
    cache_path = None
    if cache:
        split_dir = Path(rec.hr_path).parent.parent
        cache_path = split_dir / "cache" / f"x{spec.factor}" / f"{tile_id}.png"
        if cache_path.is_file():
            return load_image(cache_path)
    lr = quantize_u8(bicubic_downsample(hr, spec)).astype(np.float64)
    if cache_path is not None:
        cache_path.parent.mkdir(parents=True, exist_ok=True)
        save_image(cache_path, lr)
    return lr


def load_samples(manifest, tile, cache=True):
    return list(iter_samples(manifest, tile, cache=cache))


# ---------------------------------------------------------------------------
# synthetic scenes

def synth_generate(root, seed, n, num_classes, tile, spec, split="train"):
    """Generate a deterministic synthetic labeled dataset and return its manifest.

    Each scene is a mosaic of equal-area class regions (rotated, warped bands)
    filled with class-specific textures: oriented stripes at a class-specific
    period plus band-limited noise, over a shared mean level, so classes are
    told apart by texture rather than brightness.
    """
    if num_classes < 2:
        raise ValueError(f"need at least 2 classes, got {num_classes}")
    if tile % spec.factor:
        raise ValueError(f"tile {tile} not divisible by factor {spec.factor}")
    split_dir = Path(root) / "synthetic" / split
    images_dir = split_dir / "images"
    labels_dir = split_dir / "labels"
    images_dir.mkdir(parents=True, exist_ok=True)
    labels_dir.mkdir(parents=True, exist_ok=True)
    split_code = {"train": 0, "test": 1}[split]

    records = []
    for i in range(n):
        sid = f"synth-{split}-{seed:04d}-{i:03d}"
        image, labels = _synth_scene(
            np.random.default_rng([seed, split_code, i]), num_classes, tile
        )
        save_image(images_dir / f"{sid}.png", image)
        save_labels(labels_dir / f"{sid}.png", labels)
        records.append(SampleRecord(sid, images_dir / f"{sid}.png",
                                    labels_dir / f"{sid}.png"))
    (split_dir / "classes.txt").write_text(f"{num_classes}\n")
    manifest = DatasetManifest(
        name="synthetic", split=split, records=records,
        num_classes=num_classes, excluded_classes=frozenset(),
        class_names=tuple(f"class_{k}" for k in range(num_classes)),
        palette=default_palette(num_classes), degradation=spec,
    )
    write_manifest(manifest, split_dir / "manifest.tsv")
    return manifest


def _synth_scene(rng, num_classes, tile):
    yy, xx = np.mgrid[0:tile, 0:tile].astype(np.float64)

    # region layout: equal-quantile bands along a random direction, warped so
    # boundaries are not straight lines; two bands per class, so thin regions
    # and their boundaries carry most of the difficulty
    theta = rng.uniform(0.0, np.pi)
    warp = gaussian_filter(rng.normal(0.0, 1.0, (tile, tile)), sigma=tile / 6.0)
    warp *= (tile / 8.0) / max(warp.std(), 1e-9)
    d = np.cos(theta) * xx + np.sin(theta) * yy + warp
    bands = 2 * num_classes
    edges = np.quantile(d, np.linspace(0, 1, bands + 1)[1:-1])
    labels = (np.digitize(d, edges) % num_classes).astype(np.int64)

    # every class shares one mean intensity and one noise bandwidth: only
    # stripe orientation/period separates them, and degradation attenuates
    # exactly that
    base = 120.0
    image = np.zeros((tile, tile, 3), dtype=np.float64)
    for k in range(num_classes):
        mask = labels == k
        phi = np.pi * (k + rng.uniform(-0.15, 0.15)) / num_classes
        period = 9.0 + 1.5 * k
        phase = rng.uniform(0.0, 2 * np.pi)
        stripe = np.sin(2 * np.pi * (np.cos(phi) * xx + np.sin(phi) * yy) / period + phase)
        tex = base + 42.0 * stripe
        region = tex[:, :, None] + rng.normal(0.0, 6.0, (tile, tile, 3))
        image[mask] = region[mask]
    return np.clip(image, 0.0, 255.0), labels

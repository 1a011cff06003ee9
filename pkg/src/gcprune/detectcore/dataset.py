"""Synthetic shape-detection dataset: generation, PPM/label/manifest files, batching."""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .anchors import anchors_per_scale, default_anchors, kmeans_anchors
from .boxes import BoxLabel, iou_xyxy

SHAPES = ("box", "disc", "triangle", "cross", "diamond", "ring", "frame", "wedge")
MAX_CLASSES = len(SHAPES)
MANIFEST = "manifest.txt"


def _shape_mask(kind: int, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    # u, v in [-1, 1] across the box
    if kind == 0:
        return np.ones_like(u, dtype=bool)
    if kind == 1:
        return u * u + v * v <= 1.0
    if kind == 2:
        return np.abs(u) <= (v + 1.0) / 2.0
    if kind == 3:
        return (np.abs(u) <= 0.34) | (np.abs(v) <= 0.34)
    if kind == 4:
        return np.abs(u) + np.abs(v) <= 1.0
    if kind == 5:
        r = u * u + v * v
        return (r <= 1.0) & (r >= 0.3)
    if kind == 6:
        return ~((np.abs(u) < 0.5) & (np.abs(v) < 0.5))
    return np.abs(u) <= (1.0 - v) / 2.0


@dataclass
class Dataset:
    """Images ``[N, H, W, 3]`` uint8 and per-image labels ``[k, 5]`` (class, cx, cy, w, h)."""

    images: np.ndarray
    labels: list[np.ndarray]
    n_classes: int
    seed: int
    anchors: np.ndarray = field(default_factory=default_anchors)
    class_names: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.class_names:
            self.class_names = SHAPES[: self.n_classes]

    def __len__(self) -> int:
        return len(self.images)

    @property
    def image_hw(self) -> tuple[int, int]:
        return tuple(self.images.shape[1:3])

    def boxes(self, i: int) -> list[BoxLabel]:
        return [BoxLabel(int(r[0]), *map(float, r[1:])) for r in self.labels[i]]

    def class_histogram(self) -> np.ndarray:
        cls = np.concatenate([lab[:, 0] for lab in self.labels]) if self.labels else np.zeros(0)
        return np.bincount(cls.astype(int), minlength=self.n_classes)

    def subset(self, idx: Sequence[int]) -> "Dataset":
        idx = list(idx)
        return Dataset(self.images[idx], [self.labels[i] for i in idx], self.n_classes, self.seed,
                       self.anchors, self.class_names)

    def with_anchors(self, anchors: np.ndarray) -> "Dataset":
        return Dataset(self.images, self.labels, self.n_classes, self.seed,
                       np.asarray(anchors, dtype=np.float64).reshape(3, -1, 2), self.class_names)


def _background(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    corners = rng.uniform(20, 235, size=(2, 2, 3))
    ty = np.linspace(0, 1, h)[:, None, None]
    tx = np.linspace(0, 1, w)[None, :, None]
    top = corners[0, 0] * (1 - tx) + corners[0, 1] * tx
    bot = corners[1, 0] * (1 - tx) + corners[1, 1] * tx
    img = top * (1 - ty) + bot * ty
    img = img + rng.normal(0, 12, size=(h, w, 3))
    return img


def gen_dataset(seed: int, n_images: int, image_hw: tuple[int, int] = (64, 64), n_classes: int = 3,
                min_size: float = 0.18, max_size: float = 0.5) -> Dataset:
    """Deterministic images of 1-4 coloured shapes on smooth noisy backgrounds.

    The class of an object is its shape type. Anchors are fitted to the
    generated labels (k-means) when there are enough boxes.
    """
    h, w = image_hw
    if not 1 <= n_classes <= MAX_CLASSES:
        raise ValueError(f"n_classes must be in 1..{MAX_CLASSES}, got {n_classes}")
    if h % 32 or w % 32:
        raise ValueError(f"image size {image_hw} must be divisible by 32")
    rng = np.random.default_rng(seed)
    images = np.empty((n_images, h, w, 3), dtype=np.uint8)
    labels: list[np.ndarray] = []
    ys = (np.arange(h) + 0.5)[:, None]
    xs = (np.arange(w) + 0.5)[None, :]
    for n in range(n_images):
        img = _background(rng, h, w)
        placed: list[tuple[float, float, float, float]] = []
        rows = []
        for _ in range(int(rng.integers(1, 5))):
            for _attempt in range(20):
                bw = rng.uniform(min_size, max_size) * w
                bh = rng.uniform(min_size, max_size) * h
                x0 = rng.uniform(0, w - bw)
                y0 = rng.uniform(0, h - bh)
                box = (x0, y0, x0 + bw, y0 + bh)
                if all(iou_xyxy(box, p) < 0.1 for p in placed):
                    break
            else:
                continue
            cls = int(rng.integers(n_classes))
            u = (xs - (x0 + bw / 2)) / (bw / 2)
            v = (ys - (y0 + bh / 2)) / (bh / 2)
            inside = (np.abs(u) <= 1) & (np.abs(v) <= 1) & _shape_mask(cls, u, v)
            ref = img[inside].mean(axis=0) if inside.any() else img.mean(axis=(0, 1))
            color = rng.uniform(0, 255, 3)
            for _c in range(10):
                if np.abs(color - ref).sum() >= 150:
                    break
                color = rng.uniform(0, 255, 3)
            img[inside] = color
            placed.append(box)
            rows.append([cls, (x0 + bw / 2) / w, (y0 + bh / 2) / h, bw / w, bh / h])
        images[n] = np.clip(np.rint(img), 0, 255).astype(np.uint8)
        labels.append(np.array(rows, dtype=np.float64).reshape(-1, 5))
    anchors = default_anchors()
    all_wh = np.concatenate([lab[:, 3:5] for lab in labels]) if labels else np.zeros((0, 2))
    if len(all_wh) >= 9:
        anchors = anchors_per_scale(kmeans_anchors(all_wh))
    return Dataset(images, labels, n_classes, seed, anchors)


# files
def write_ppm(path, img: np.ndarray) -> None:
    img = np.ascontiguousarray(img, dtype=np.uint8)
    h, w, _ = img.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(img.tobytes())


_PPM_HEADER = re.compile(rb"P6\s+(?:#[^\n]*\s+)*(\d+)\s+(?:#[^\n]*\s+)*(\d+)\s+(?:#[^\n]*\s+)*(\d+)\s")


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    m = _PPM_HEADER.match(data)
    if not m:
        raise ValueError(f"{path}: not a binary P6 PPM")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PPM supported (maxval {maxval})")
    body = data[m.end():m.end() + w * h * 3]
    if len(body) != w * h * 3:
        raise ValueError(f"{path}: truncated pixel data")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3).copy()


def _fmt(x: float) -> str:
    return repr(float(x))


def save_dataset(ds: Dataset, directory) -> Path:
    """Write ``images/*.ppm``, ``labels/*.txt`` and the text manifest."""
    root = Path(directory)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "labels").mkdir(parents=True, exist_ok=True)
    for i in range(len(ds)):
        write_ppm(root / "images" / f"{i:06d}.ppm", ds.images[i])
        lines = [f"{int(r[0])} " + " ".join(_fmt(v) for v in r[1:]) for r in ds.labels[i]]
        (root / "labels" / f"{i:06d}.txt").write_text("".join(s + "\n" for s in lines))
    h, w = ds.image_hw if len(ds) else (0, 0)
    manifest = [
        "# synthetic shape dataset",
        f"seed: {ds.seed}",
        f"n_images: {len(ds)}",
        f"image_hw: {h} {w}",
        f"n_classes: {ds.n_classes}",
        "class_names: " + " ".join(ds.class_names),
        "anchors: " + " ".join(_fmt(v) for v in np.asarray(ds.anchors).reshape(-1)),
    ]
    (root / MANIFEST).write_text("\n".join(manifest) + "\n")
    return root / MANIFEST


def read_manifest(path) -> dict[str, str]:
    out = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition(":")
        out[key.strip()] = value.strip()
    return out


def load_dataset(directory) -> Dataset:
    root = Path(directory)
    if root.is_file():
        root = root.parent
    meta = read_manifest(root / MANIFEST)
    n = int(meta["n_images"])
    h, w = (int(v) for v in meta["image_hw"].split())
    images = np.empty((n, h, w, 3), dtype=np.uint8)
    labels = []
    for i in range(n):
        images[i] = read_ppm(root / "images" / f"{i:06d}.ppm")
        text = (root / "labels" / f"{i:06d}.txt").read_text().split()
        labels.append(np.array(text, dtype=np.float64).reshape(-1, 5))
    anchors = np.array(meta["anchors"].split(), dtype=np.float64).reshape(3, -1, 2)
    return Dataset(images, labels, int(meta["n_classes"]), int(meta["seed"]), anchors,
                   tuple(meta.get("class_names", "").split()))


# batching
def to_input(images: np.ndarray, dtype=np.float32) -> np.ndarray:
    """uint8 NHWC -> NCHW in [0, 1]."""
    return np.ascontiguousarray(images.transpose(0, 3, 1, 2), dtype=dtype) / 255.0


def iterate_batches(ds: Dataset, batch_size: int, rng: np.random.Generator | None = None,
                    flip: bool = False, dtype=np.float32,
                    drop_last: bool = False) -> Iterator[tuple[np.ndarray, list[np.ndarray]]]:
    """Yield ``(x, labels)`` batches; shuffled and randomly mirrored when ``rng`` is given."""
    order = np.arange(len(ds)) if rng is None else rng.permutation(len(ds))
    stop = len(ds) - (len(ds) % batch_size if drop_last else 0)
    for s in range(0, stop, batch_size):
        idx = order[s:s + batch_size]
        imgs = ds.images[idx]
        labs = [ds.labels[i].copy() for i in idx]
        if flip and rng is not None:
            mirror = rng.random(len(idx)) < 0.5
            imgs = imgs.copy()
            for j in np.flatnonzero(mirror):
                imgs[j] = imgs[j, :, ::-1]
                labs[j][:, 1] = 1.0 - labs[j][:, 1]
        yield to_input(imgs, dtype), labs

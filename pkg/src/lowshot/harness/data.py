"""Image directory ingestion: decode, center-crop, resize, map to [-1, 1]."""

import hashlib
import logging
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, UnidentifiedImageError

from ..errors import ConfigError

log = logging.getLogger(__name__)

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")
RECIPE = "center-crop -> resize(lanczos) -> x/127.5 - 1"


@dataclass
class ImageRecord:
    path: str
    digest: str

    @property
    def image_id(self):
        return self.digest[:12]


@dataclass
class DatasetManifest:
    resolution: int
    recipe: str
    test: list
    pool: list
    skipped: list = field(default_factory=list)

    def to_dict(self):
        return {
            "resolution": self.resolution,
            "recipe": self.recipe,
            "test": [{"path": r.path, "digest": r.digest} for r in self.test],
            "pool": [{"path": r.path, "digest": r.digest} for r in self.pool],
            "skipped": self.skipped,
        }


@dataclass
class Dataset:
    manifest: DatasetManifest
    test_images: np.ndarray
    pool_images: np.ndarray

    @property
    def test_ids(self):
        return [r.image_id for r in self.manifest.test]

    def shots(self, count):
        """The first ``count`` pool images (digest order); nested across counts."""
        if count > len(self.pool_images):
            raise ConfigError(f"asked for {count} shots, only {len(self.pool_images)} available")
        return self.pool_images[:count]

    def shot_digest(self, count):
        h = hashlib.sha256()
        for r in self.manifest.pool[:count]:
            h.update(r.digest.encode())
        return h.hexdigest()


def preprocess(img, resolution):
    img = img.convert("RGB")
    w, h = img.size
    side = min(w, h)
    left, top = (w - side) // 2, (h - side) // 2
    img = img.crop((left, top, left + side, top + side))
    if side != resolution:
        img = img.resize((resolution, resolution), Image.LANCZOS)
    arr = np.asarray(img, dtype=np.float64)
    return arr.transpose(2, 0, 1) / 127.5 - 1.0


def _scan(directory, resolution):
    if not os.path.isdir(directory):
        raise ConfigError(f"not a directory: {directory}")
    records, images, skipped = [], [], []
    for name in sorted(os.listdir(directory)):
        if not name.lower().endswith(IMAGE_EXTENSIONS):
            continue
        path = os.path.join(directory, name)
        with open(path, "rb") as fh:
            raw = fh.read()
        try:
            with Image.open(path) as img:
                arr = preprocess(img, resolution)
        except (UnidentifiedImageError, OSError) as exc:
            log.warning("skipping undecodable image %s: %s", path, exc)
            skipped.append({"path": path, "reason": str(exc)})
            continue
        records.append(ImageRecord(os.path.abspath(path), hashlib.sha256(raw).hexdigest()))
        images.append(arr)
    order = sorted(range(len(records)), key=lambda i: (records[i].digest, records[i].path))
    return [records[i] for i in order], [images[i] for i in order], skipped


def load_dataset(directory, resolution=32, n_test=50, test_directory=None):
    """Load images into a digest-ordered dataset split into test images and a shot pool.

    With a single directory the first ``n_test`` images (by digest) form the
    test set and the rest the shot pool. With ``test_directory`` the test
    images come from there instead. A digest present on both sides is an error.
    """
    records, images, skipped = _scan(directory, resolution)
    if test_directory is None:
        if not records:
            raise ConfigError(f"no decodable images in {directory}")
        test_rec, test_img = records[:n_test], images[:n_test]
        pool_rec, pool_img = records[n_test:], images[n_test:]
    else:
        t_rec, t_img, t_skip = _scan(test_directory, resolution)
        skipped += t_skip
        if not records or not t_rec:
            raise ConfigError("no decodable images in shot or test directory")
        test_rec, test_img = t_rec[:n_test], t_img[:n_test]
        pool_rec, pool_img = records, images
    overlap = {r.digest for r in test_rec} & {r.digest for r in pool_rec}
    if overlap:
        raise ConfigError(f"{len(overlap)} image(s) appear in both the shot pool and the test set")
    manifest = DatasetManifest(resolution, RECIPE, test_rec, pool_rec, skipped)
    shape = (0, 3, resolution, resolution)
    as_array = lambda imgs: np.stack(imgs) if imgs else np.empty(shape)
    return Dataset(manifest, as_array(test_img), as_array(pool_img))


def load_image(path, resolution):
    with Image.open(path) as img:
        return preprocess(img, resolution)


def save_image(x, path):
    """Write a (3, H, W) image in [-1, 1] as an 8-bit PNG."""
    arr = np.clip(np.round((np.asarray(x).transpose(1, 2, 0) + 1) * 127.5), 0, 255).astype(np.uint8)
    Image.fromarray(arr, "RGB").save(path)

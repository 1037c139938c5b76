"""Synthetic segmentation data, resolution changes, and the UTSR tensor file.

Samples pair a low-resolution input image with a high-resolution label mask.
Everything is drawn at ground-truth resolution first — shapes get wobbly,
sub-input-pixel boundary detail on purpose, because that fine structure is
exactly what a high-resolution mask knows and a down-scaled input does not.
The image is then area-averaged down to the input resolution and corrupted
with seeded Gaussian noise.

``num_classes`` counts foreground classes: masks carry labels 0..num_classes
with 0 as background (binary: {0, 1}).

Generation is a pure function of DatasetSpec: sample ``i`` is drawn from its
own child generator seeded with (seed, i), so datasets are reproducible
bit-for-bit and sample content does not depend on how many samples are
requested after it.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, ShapeError, UsageError

_FAMILIES = ("ellipses", "blobs")
_MAGIC = b"UTSR"
_VERSION = 1
_DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("u1")}
_CODE_FOR_KIND = {"f4": 1, "f8": 2, "u1": 3}


@dataclass(frozen=True)
class DatasetSpec:
    num_samples: int
    input_res: int
    gt_res: int
    num_classes: int = 1
    shape_family: str = "ellipses"
    noise_level: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.num_samples < 1:
            raise ConfigError("num_samples must be >= 1")
        if self.input_res < 1 or self.gt_res < self.input_res:
            raise ConfigError(f"need 1 <= input_res <= gt_res, got "
                              f"{self.input_res} and {self.gt_res}")
        ratio = self.gt_res // self.input_res
        if ratio * self.input_res != self.gt_res or ratio & (ratio - 1):
            raise ConfigError(f"gt_res / input_res must be a power of two, "
                              f"got {self.gt_res}/{self.input_res}")
        if self.num_classes < 1:
            raise ConfigError("num_classes must be >= 1")
        if self.shape_family not in _FAMILIES:
            raise ConfigError(f"unknown shape_family {self.shape_family!r}; "
                              f"supported: {', '.join(_FAMILIES)}")
        if self.noise_level < 0:
            raise ConfigError("noise_level must be >= 0")

    @property
    def scale_factor(self) -> int:
        return self.gt_res // self.input_res

    @property
    def num_stages(self) -> int:
        """Resolution doublings from input to ground truth."""
        return int(self.scale_factor).bit_length() - 1


@dataclass
class Sample:
    image: np.ndarray                        # (1, input_res, input_res) in [0,1]
    mask: np.ndarray                         # (gt_res, gt_res) int labels


# ---------------------------------------------------------------------------
# resolution changes


def downscale_image(img: np.ndarray, factor: int) -> np.ndarray:
    """Area-average pooling over the last two axes."""
    img = np.asarray(img, dtype=np.float64)
    f = int(factor)
    if f < 1:
        raise ShapeError("downscale factor must be >= 1")
    h, w = img.shape[-2:]
    if h % f or w % f:
        raise ShapeError(f"extents {h}x{w} not divisible by factor {f}")
    if f == 1:
        return img.copy()
    shaped = img.reshape(*img.shape[:-2], h // f, f, w // f, f)
    return shaped.mean(axis=(-3, -1))


def downscale_mask(mask: np.ndarray, factor: int) -> np.ndarray:
    """Nearest-neighbour label down-scaling (top-left sample per cell)."""
    mask = np.asarray(mask)
    f = int(factor)
    if f < 1:
        raise ShapeError("downscale factor must be >= 1")
    h, w = mask.shape[-2:]
    if h % f or w % f:
        raise ShapeError(f"extents {h}x{w} not divisible by factor {f}")
    return mask[..., ::f, ::f].copy()


# ---------------------------------------------------------------------------
# synthetic generation


def _coordinate_grid(res: int):
    centers = (np.arange(res) + 0.5) / res
    return np.meshgrid(centers, centers, indexing="ij")


def _pick_label(rng, num_classes: int) -> int:
    return 1 if num_classes == 1 else int(rng.integers(1, num_classes + 1))


def _render_ellipses(rng, res: int, num_classes: int):
    yy, xx = _coordinate_grid(res)
    mask = np.zeros((res, res), dtype=np.int64)
    image = np.empty((res, res))
    base = rng.uniform(0.15, 0.35)
    fy, fx, phase = rng.uniform(0.5, 1.5), rng.uniform(0.5, 1.5), rng.uniform(0, 2 * np.pi)
    image[:] = base * (1.0 + 0.15 * np.sin(2 * np.pi * (fy * yy + fx * xx) + phase))

    for _ in range(int(rng.integers(1, 4))):
        cy, cx = rng.uniform(0.3, 0.7, size=2)
        a, b = rng.uniform(0.09, 0.2, size=2)
        angle = rng.uniform(0.0, np.pi)
        harmonics = rng.integers(2, 14, size=4)
        amps = rng.uniform(0.01, 0.035, size=4)
        phases = rng.uniform(0.0, 2 * np.pi, size=4)
        label = _pick_label(rng, num_classes)
        shade = rng.uniform(0.55, 0.9)

        dy, dx = yy - cy, xx - cx
        u = np.cos(angle) * dx + np.sin(angle) * dy
        v = -np.sin(angle) * dx + np.cos(angle) * dy
        rho = np.sqrt((u / a) ** 2 + (v / b) ** 2)
        theta = np.arctan2(v, u)
        radius = np.ones_like(rho)
        for k, amp, ph in zip(harmonics, amps, phases):
            radius += amp * np.sin(k * theta + ph)
        inside = rho <= radius
        mask[inside] = label
        image[inside] = shade * (1.0 - 0.15 * rho[inside])
    return image, mask


def _render_blobs(rng, res: int, num_classes: int):
    yy, xx = _coordinate_grid(res)
    n_bumps = int(rng.integers(3, 7))
    centers = rng.uniform(0.25, 0.75, size=(n_bumps, 2))
    sigmas = rng.uniform(0.06, 0.12, size=n_bumps)
    weights = rng.uniform(0.8, 1.2, size=n_bumps)
    labels = np.array([_pick_label(rng, num_classes) for _ in range(n_bumps)])
    target_fraction = rng.uniform(0.05, 0.3)

    field = np.zeros((res, res))
    dist_sq = np.empty((n_bumps, res, res))
    for i in range(n_bumps):
        dist_sq[i] = (yy - centers[i, 0]) ** 2 + (xx - centers[i, 1]) ** 2
        field += weights[i] * np.exp(-dist_sq[i] / (2.0 * sigmas[i] ** 2))
    threshold = np.quantile(field, 1.0 - target_fraction)
    inside = field > threshold
    nearest = labels[np.argmin(dist_sq, axis=0)]
    mask = np.where(inside, nearest, 0).astype(np.int64)

    base = rng.uniform(0.15, 0.3)
    span = field.max() - field.min()
    image = base + (0.9 - base) * (field - field.min()) / (span if span > 0 else 1.0)
    return image, mask


def generate(spec: DatasetSpec) -> list[Sample]:
    """Draw ``spec.num_samples`` deterministic samples."""
    render = _render_ellipses if spec.shape_family == "ellipses" else _render_blobs
    samples = []
    for i in range(spec.num_samples):
        rng = np.random.default_rng([spec.seed, i])
        gt_image, mask = render(rng, spec.gt_res, spec.num_classes)
        image = downscale_image(gt_image[None], spec.scale_factor)
        if spec.noise_level > 0:
            image = image + rng.normal(0.0, spec.noise_level, size=image.shape)
        samples.append(Sample(image=np.clip(image, 0.0, 1.0), mask=mask))
    return samples


def split_samples(samples: list[Sample], val_fraction: float):
    """Deterministic train/validation split (samples are already i.i.d.)."""
    if not 0.0 < val_fraction < 1.0:
        raise ConfigError("val_fraction must lie in (0, 1)")
    n_val = max(1, round(len(samples) * val_fraction))
    if n_val >= len(samples):
        raise ConfigError(f"val_fraction {val_fraction} leaves no training "
                          f"samples out of {len(samples)}")
    return samples[:-n_val], samples[-n_val:]


# ---------------------------------------------------------------------------
# UTSR tensor container


def write_tensor_file(path, tensors: dict[str, np.ndarray]) -> None:
    """Write named arrays: magic 'UTSR', version byte, then per record
    name length (u16 LE), ASCII name, dtype code (u8), rank (u8),
    extents (u64 LE each), row-major little-endian payload."""
    chunks = [_MAGIC, bytes([_VERSION])]
    seen = set()
    for name, arr in tensors.items():
        if name in seen:
            raise UsageError(f"duplicate tensor name {name!r}")
        seen.add(name)
        try:
            name_bytes = name.encode("ascii")
        except UnicodeEncodeError as exc:
            raise UsageError(f"tensor name {name!r} is not ASCII") from exc
        if not 0 < len(name_bytes) < 2 ** 16:
            raise UsageError(f"tensor name length {len(name_bytes)} out of range")
        arr = np.asarray(arr)
        kind = arr.dtype.newbyteorder("<").str.lstrip("<|=")
        code = _CODE_FOR_KIND.get(kind)
        if code is None:
            raise UsageError(f"unsupported dtype {arr.dtype} for {name!r}; "
                             "use float32, float64 or uint8")
        # asarray with order="C" keeps rank-0 arrays rank-0, unlike
        # ascontiguousarray which silently promotes them to rank 1
        arr = np.asarray(arr, dtype=_DTYPE_CODES[code], order="C")
        chunks.append(struct.pack("<H", len(name_bytes)))
        chunks.append(name_bytes)
        chunks.append(bytes([code, arr.ndim]))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_tensor_file(path) -> dict[str, np.ndarray]:
    """Read a UTSR file back into {name: array}; bit-exact round trip."""
    data = Path(path).read_bytes()
    if len(data) < len(_MAGIC) + 1 or data[:4] != _MAGIC:
        raise FormatError(f"{path}: not a UTSR file (bad magic)")
    if data[4] != _VERSION:
        raise FormatError(f"{path}: unsupported version {data[4]}")
    pos = 5
    out: dict[str, np.ndarray] = {}

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise FormatError(f"{path}: truncated while reading {what}")
        piece = data[pos:pos + n]
        pos += n
        return piece

    while pos < len(data):
        (name_len,) = struct.unpack("<H", take(2, "record header"))
        try:
            name = take(name_len, "record name").decode("ascii")
        except UnicodeDecodeError as exc:
            raise FormatError(f"{path}: non-ASCII record name") from exc
        code, rank = take(2, f"record {name!r} header")
        dtype = _DTYPE_CODES.get(code)
        if dtype is None:
            raise FormatError(f"{path}: record {name!r} has unknown dtype "
                              f"code {code}")
        extents = struct.unpack(f"<{rank}Q", take(8 * rank, f"record {name!r} extents"))
        count = 1
        for e in extents:
            count *= e
        payload = take(count * dtype.itemsize, f"record {name!r} payload")
        if name in out:
            raise FormatError(f"{path}: duplicate record name {name!r}")
        out[name] = np.frombuffer(payload, dtype=dtype).reshape(extents).copy()
    return out


def save_dataset(path, spec: DatasetSpec, samples: list[Sample]) -> None:
    images = np.stack([s.image for s in samples]).astype(np.float64)
    masks = np.stack([s.mask for s in samples])
    if masks.min() < 0 or masks.max() > 255:
        raise UsageError("mask labels must fit in uint8 for storage")
    write_tensor_file(path, {
        "images": images,
        "masks": masks.astype(np.uint8),
        "num_classes": np.array([spec.num_classes], dtype=np.uint8),
    })


def load_dataset(path) -> tuple[list[Sample], int]:
    records = read_tensor_file(path)
    for key in ("images", "masks", "num_classes"):
        if key not in records:
            raise FormatError(f"{path}: dataset file missing record {key!r}")
    images, masks = records["images"], records["masks"]
    if images.ndim != 4 or masks.ndim != 3 or images.shape[0] != masks.shape[0]:
        raise FormatError(f"{path}: malformed dataset records")
    num_classes = int(records["num_classes"][0])
    samples = [Sample(image=images[i].astype(np.float64),
                      mask=masks[i].astype(np.int64))
               for i in range(images.shape[0])]
    return samples, num_classes

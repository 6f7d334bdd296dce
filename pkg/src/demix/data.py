"""Procedural multi-bias digit dataset.

Each 3-channel square image shows a digit glyph (the target, 0..9) composed
with up to seven bias attributes: digit color, digit scale, digit position,
background texture type, texture color, a co-occurring letter, and the
letter's color.  Every attribute has exactly 10 categories so category ``y``
is the one "aligned" with target ``y``.  In the train split an attribute
aligns with probability ``rho`` and otherwise falls uniformly on one of the
9 other categories; val/test draw every attribute uniformly.

Everything is derived from per-sample seeds built from (seed, split, index),
so generation order never changes the bytes.  Files use a small binary
format (magic ``PNDB``) with a JSON manifest sidecar carrying the generating
spec and a per-attribute census.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import struct

import numpy as np

ATTRIBUTES = (
    "digit_color",
    "digit_scale",
    "digit_position",
    "texture_type",
    "texture_color",
    "letter",
    "letter_color",
)

N_CATEGORIES = 10
_SPLIT_IDS = {"train": 0, "val": 1, "test": 2}

MAGIC = b"PNDB"
VERSION = 1


class DataFormatError(ValueError):
    """A dataset file or its manifest violates the binary format."""


class SpecError(ValueError):
    """A DatasetSpec fails validation."""


@dataclasses.dataclass(frozen=True)
class DatasetSpec:
    n_train: int = 10000
    n_val: int = 2000
    n_test: int = 2000
    image_size: int = 64
    n_classes: int = 10
    bias_attributes: tuple[str, ...] = ATTRIBUTES
    rho: float = 0.95
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "bias_attributes", tuple(self.bias_attributes))
        if self.image_size < 32:
            raise SpecError(f"image_size must be at least 32 to place glyphs, got {self.image_size}")
        if self.n_classes != N_CATEGORIES:
            raise SpecError(f"n_classes is fixed at {N_CATEGORIES}, got {self.n_classes}")
        if not self.bias_attributes:
            raise SpecError("bias_attributes must be nonempty")
        if len(set(self.bias_attributes)) != len(self.bias_attributes):
            raise SpecError(f"bias_attributes has duplicates: {self.bias_attributes}")
        order = [a for a in ATTRIBUTES if a in self.bias_attributes]
        if list(self.bias_attributes) != order:
            raise SpecError(
                f"bias_attributes must follow the canonical order {ATTRIBUTES}, got {self.bias_attributes}"
            )
        if not 0.0 <= self.rho <= 1.0:
            raise SpecError(f"rho must be in [0, 1], got {self.rho}")
        for n, label in ((self.n_train, "n_train"), (self.n_val, "n_val"), (self.n_test, "n_test")):
            if n <= 0:
                raise SpecError(f"{label} must be positive, got {n}")

    @classmethod
    def with_first_biases(cls, n_biases: int, **kw) -> "DatasetSpec":
        """Spec using the first ``n_biases`` attributes of the canonical order."""
        if not 1 <= n_biases <= len(ATTRIBUTES):
            raise SpecError(f"n_biases must be in 1..{len(ATTRIBUTES)}, got {n_biases}")
        return cls(bias_attributes=ATTRIBUTES[:n_biases], **kw)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["bias_attributes"] = list(self.bias_attributes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        d = dict(d)
        d["bias_attributes"] = tuple(d["bias_attributes"])
        return cls(**d)


@dataclasses.dataclass
class Sample:
    image: np.ndarray  # (S, S, 3) uint8
    target: int
    attrs: np.ndarray  # (n_attrs,) uint8


# -- palettes and glyphs -------------------------------------------------------

DIGIT_PALETTE = np.array([
    (230, 25, 25), (60, 180, 75), (255, 225, 25), (0, 130, 200), (245, 130, 48),
    (145, 30, 180), (70, 240, 240), (240, 50, 230), (210, 245, 60), (250, 190, 212),
], dtype=np.uint8)

TEXTURE_PALETTE = np.array([
    (128, 0, 0), (154, 99, 36), (128, 128, 0), (0, 128, 128), (0, 0, 117),
    (34, 102, 34), (90, 90, 140), (180, 95, 0), (139, 0, 139), (70, 110, 150),
], dtype=np.uint8)

LETTER_PALETTE = np.array([
    (255, 120, 120), (120, 255, 120), (255, 255, 120), (120, 180, 255), (255, 180, 100),
    (200, 120, 255), (140, 255, 255), (255, 140, 230), (220, 255, 130), (200, 200, 200),
], dtype=np.uint8)

NEUTRAL_DIGIT_COLOR = np.array((255, 255, 255), dtype=np.uint8)
NEUTRAL_BACKGROUND = np.array((32, 32, 32), dtype=np.uint8)

_FONT_ROWS = {
    "0": ("01110", "10001", "10011", "10101", "11001", "10001", "01110"),
    "1": ("00100", "01100", "00100", "00100", "00100", "00100", "01110"),
    "2": ("01110", "10001", "00001", "00010", "00100", "01000", "11111"),
    "3": ("11111", "00010", "00100", "00010", "00001", "10001", "01110"),
    "4": ("00010", "00110", "01010", "10010", "11111", "00010", "00010"),
    "5": ("11111", "10000", "11110", "00001", "00001", "10001", "01110"),
    "6": ("00110", "01000", "10000", "11110", "10001", "10001", "01110"),
    "7": ("11111", "00001", "00010", "00100", "01000", "01000", "01000"),
    "8": ("01110", "10001", "10001", "01110", "10001", "10001", "01110"),
    "9": ("01110", "10001", "10001", "01111", "00001", "00010", "01100"),
    "A": ("01110", "10001", "10001", "11111", "10001", "10001", "10001"),
    "B": ("11110", "10001", "11110", "10001", "10001", "10001", "11110"),
    "C": ("01110", "10001", "10000", "10000", "10000", "10001", "01110"),
    "D": ("11100", "10010", "10001", "10001", "10001", "10010", "11100"),
    "E": ("11111", "10000", "11110", "10000", "10000", "10000", "11111"),
    "F": ("11111", "10000", "11110", "10000", "10000", "10000", "10000"),
    "G": ("01110", "10001", "10000", "10111", "10001", "10001", "01111"),
    "H": ("10001", "10001", "11111", "10001", "10001", "10001", "10001"),
    "I": ("01110", "00100", "00100", "00100", "00100", "00100", "01110"),
    "J": ("00111", "00010", "00010", "00010", "00010", "10010", "01100"),
}

FONT = {ch: np.array([[int(c) for c in row] for row in rows], dtype=bool)
        for ch, rows in _FONT_ROWS.items()}

LETTERS = "ABCDEFGHIJ"

SCALE_FACTORS = np.linspace(0.5, 1.4, 10)
NEUTRAL_SCALE = 1.0

# 3x3 grid at fractions {0.25, 0.5, 0.75} (categories 0..8, row-major) plus a
# tenth anchor at the upper-left quadrant midpoint; neutral is dead center.
_GRID = [0.25, 0.5, 0.75]
ANCHORS = [(gy, gx) for gy in _GRID for gx in _GRID] + [(0.375, 0.375)]
NEUTRAL_ANCHOR = (0.5, 0.5)
_CORNER_CELLS = (0, 2, 6, 8)


def _nearest_grid_cell(anchor: tuple[float, float]) -> int:
    """Index of the 3x3 cell closest to an anchor; ties go to the lower index."""
    best, best_d = 0, float("inf")
    for idx in range(9):
        ay, ax = ANCHORS[idx]
        d = (ay - anchor[0]) ** 2 + (ax - anchor[1]) ** 2
        if d < best_d - 1e-12:
            best, best_d = idx, d
    return best


def _texture_mask(kind: int, size: int) -> np.ndarray:
    """Boolean foreground mask for one of the 10 procedural patterns."""
    p = max(4, size // 8)
    half = max(2, p // 2)
    y, x = np.mgrid[0:size, 0:size]
    if kind == 0:  # solid
        return np.ones((size, size), dtype=bool)
    if kind == 1:  # horizontal stripes
        return (y // half) % 2 == 0
    if kind == 2:  # vertical stripes
        return (x // half) % 2 == 0
    if kind == 3:  # diagonal stripes /
        return ((x + y) // half) % 2 == 0
    if kind == 4:  # diagonal stripes \
        return ((x - y) // half) % 2 == 0
    if kind == 5:  # checker
        return ((y // p) + (x // p)) % 2 == 0
    if kind == 6:  # dots
        return ((y % p - half) ** 2 + (x % p - half) ** 2) <= (p / 3.0) ** 2
    if kind == 7:  # diagonal cross
        return ((x + y) % p < 2) | ((x - y) % p < 2)
    if kind == 8:  # rings
        r = np.sqrt((y - size / 2.0) ** 2 + (x - size / 2.0) ** 2)
        return (r // half).astype(np.int64) % 2 == 0
    if kind == 9:  # noise-hash
        h = (x * 73856093) ^ (y * 19349663)
        return (h % 97) < 48
    raise ValueError(f"texture kind must be 0..9, got {kind}")


def _glyph_mask(ch: str, height: int) -> np.ndarray:
    """Nearest-neighbor rasterization of the 5x7 glyph at the given pixel height."""
    height = max(height, 7)
    width = max(round(height * 5 / 7), 5)
    base = FONT[ch]
    rows = np.minimum((np.arange(height) * 7) // height, 6)
    cols = np.minimum((np.arange(width) * 5) // width, 4)
    return base[np.ix_(rows, cols)]


def _stamp(img: np.ndarray, mask: np.ndarray, top: int, left: int, color: np.ndarray) -> None:
    """Draw a glyph mask onto the image, clipped to the canvas."""
    s = img.shape[0]
    gh, gw = mask.shape
    y0, x0 = max(top, 0), max(left, 0)
    y1, x1 = min(top + gh, s), min(left + gw, s)
    if y0 >= y1 or x0 >= x1:
        return
    sub = mask[y0 - top:y1 - top, x0 - left:x1 - left]
    img[y0:y1, x0:x1][sub] = color


def render_sample(target: int, attrs: np.ndarray, spec: DatasetSpec, rng: np.random.Generator) -> np.ndarray:
    """Render one sample deterministically from (target, attrs, rng state).

    RNG draws, in order: digit jitter (2), letter jitter (2, consumed even
    when no letter is drawn), background noise.
    """
    s = spec.image_size
    named = dict(zip(spec.bias_attributes, (int(a) for a in attrs)))

    jy, jx = (int(v) for v in rng.integers(-1, 2, size=2))
    ljy, ljx = (int(v) for v in rng.integers(-1, 2, size=2))
    noise = rng.integers(-8, 9, size=(s, s, 3)).astype(np.int16)

    # background
    img = np.empty((s, s, 3), dtype=np.uint8)
    tex_kind = named.get("texture_type")
    tex_color = named.get("texture_color")
    if tex_kind is None and tex_color is None:
        img[:] = NEUTRAL_BACKGROUND
    else:
        color = TEXTURE_PALETTE[tex_color] if tex_color is not None else NEUTRAL_BACKGROUND
        mask = _texture_mask(tex_kind if tex_kind is not None else 0, s)
        img[:] = (color.astype(np.uint16) // 4).astype(np.uint8)
        img[mask] = color
    img = np.clip(img.astype(np.int16) + noise, 0, 255).astype(np.uint8)

    # digit geometry
    scale = SCALE_FACTORS[named["digit_scale"]] if "digit_scale" in named else NEUTRAL_SCALE
    anchor = ANCHORS[named["digit_position"]] if "digit_position" in named else NEUTRAL_ANCHOR
    digit_color = DIGIT_PALETTE[named["digit_color"]] if "digit_color" in named else NEUTRAL_DIGIT_COLOR
    gh = round(0.35 * s * scale)
    gmask = _glyph_mask(str(target), gh)
    cy, cx = round(anchor[0] * s), round(anchor[1] * s)
    top = cy - gmask.shape[0] // 2 + jy
    left = cx - gmask.shape[1] // 2 + jx

    # letter first so the digit stays fully legible where they touch
    if "letter" in named:
        occupied = _nearest_grid_cell(anchor)
        corner = next(c for c in _CORNER_CELLS if c != occupied)
        lcolor = (LETTER_PALETTE[named["letter_color"]]
                  if "letter_color" in named else LETTER_PALETTE[9])
        lmask = _glyph_mask(LETTERS[named["letter"]], round(0.20 * s))
        lcy, lcx = round(ANCHORS[corner][0] * s), round(ANCHORS[corner][1] * s)
        _stamp(img, lmask, lcy - lmask.shape[0] // 2 + ljy, lcx - lmask.shape[1] // 2 + ljx, lcolor)

    _stamp(img, gmask, top, left, digit_color)
    return img


# -- sampling ------------------------------------------------------------------


def sample_attributes(target: int, spec: DatasetSpec, rng: np.random.Generator) -> np.ndarray:
    """Draw bias categories for a train sample: aligned with probability rho,
    otherwise uniform over the 9 other categories."""
    if not 0 <= target < spec.n_classes:
        raise ValueError(f"target must be in 0..{spec.n_classes - 1}, got {target}")
    n = len(spec.bias_attributes)
    out = np.empty(n, dtype=np.uint8)
    for i in range(n):
        if rng.random() < spec.rho:
            out[i] = target
        else:
            out[i] = (target + 1 + rng.integers(spec.n_classes - 1)) % spec.n_classes
    return out


def _uniform_attributes(spec: DatasetSpec, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, spec.n_classes, size=len(spec.bias_attributes)).astype(np.uint8)


def build_sample(spec: DatasetSpec, split: str, index: int) -> Sample:
    """Build one sample from its (seed, split, index) sub-seed.

    Targets cycle through the classes so every split is class-balanced by
    construction.
    """
    ss = np.random.SeedSequence(entropy=spec.seed, spawn_key=(_SPLIT_IDS[split], index))
    rng = np.random.default_rng(ss)
    target = index % spec.n_classes
    if split == "train":
        attrs = sample_attributes(target, spec, rng)
    else:
        attrs = _uniform_attributes(spec, rng)
    image = render_sample(target, attrs, spec, rng)
    return Sample(image=image, target=target, attrs=attrs)


# -- dataset container and census ----------------------------------------------


class GroupTable:
    """Per (target, attribute, category) sample counts."""

    def __init__(self, counts: dict[str, np.ndarray]):
        self.counts = counts

    @classmethod
    def from_samples(cls, attr_names, targets: np.ndarray, attrs: np.ndarray) -> "GroupTable":
        counts = {}
        for j, name in enumerate(attr_names):
            table = np.zeros((N_CATEGORIES, N_CATEGORIES), dtype=np.int64)
            np.add.at(table, (targets.astype(np.int64), attrs[:, j].astype(np.int64)), 1)
            counts[name] = table
        return cls(counts)

    def to_json(self) -> dict:
        return {name: table.tolist() for name, table in self.counts.items()}

    @classmethod
    def from_json(cls, d: dict) -> "GroupTable":
        return cls({name: np.asarray(table, dtype=np.int64) for name, table in d.items()})

    def __eq__(self, other):
        if not isinstance(other, GroupTable):
            return NotImplemented
        return self.counts.keys() == other.counts.keys() and all(
            np.array_equal(self.counts[k], other.counts[k]) for k in self.counts
        )

    def aligned_fraction(self, name: str) -> float:
        table = self.counts[name]
        return float(np.trace(table) / table.sum())


class Dataset:
    """In-memory split: images (N,S,S,3) u8, targets (N,), attrs (N,A)."""

    def __init__(self, images, targets, attrs, attr_names, manifest: dict | None = None):
        self.images = images
        self.targets = targets
        self.attrs = attrs
        self.attr_names = tuple(attr_names)
        self.manifest = manifest

    def __len__(self):
        return self.images.shape[0]

    @property
    def image_size(self) -> int:
        return self.images.shape[1]

    def census(self) -> GroupTable:
        return GroupTable.from_samples(self.attr_names, self.targets, self.attrs)

    def model_inputs(self) -> np.ndarray:
        """Images as (N, 3, S, S) float32 in [0, 1]."""
        x = self.images.astype(np.float32) / 255.0
        return np.ascontiguousarray(x.transpose(0, 3, 1, 2))


def generate_split(spec: DatasetSpec, split: str) -> Dataset:
    n = {"train": spec.n_train, "val": spec.n_val, "test": spec.n_test}[split]
    s = spec.image_size
    a = len(spec.bias_attributes)
    images = np.empty((n, s, s, 3), dtype=np.uint8)
    targets = np.empty(n, dtype=np.uint8)
    attrs = np.empty((n, a), dtype=np.uint8)
    for i in range(n):
        sample = build_sample(spec, split, i)
        images[i] = sample.image
        targets[i] = sample.target
        attrs[i] = sample.attrs
    return Dataset(images, targets, attrs, spec.bias_attributes)


# -- binary serialization --------------------------------------------------------


def write_pndb(path: str, ds: Dataset, spec: DatasetSpec, split: str) -> str:
    """Write one split and its manifest sidecar; returns the manifest path."""
    n, s = len(ds), ds.image_size
    a = len(ds.attr_names)
    header = bytearray()
    header += MAGIC
    header += struct.pack("<IIIIII", VERSION, n, s, s, 3, a)
    for name in ds.attr_names:
        raw = name.encode("utf-8")
        header += struct.pack("<I", len(raw)) + raw
    rec = np.empty((n, 1 + a + s * s * 3), dtype=np.uint8)
    rec[:, 0] = ds.targets
    rec[:, 1:1 + a] = ds.attrs
    rec[:, 1 + a:] = ds.images.reshape(n, -1)
    with open(path, "wb") as f:
        f.write(bytes(header))
        f.write(rec.tobytes())
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    manifest = {
        "format": "PNDB",
        "version": VERSION,
        "split": split,
        "n_samples": n,
        "attr_names": list(ds.attr_names),
        "spec": spec.to_dict(),
        "census": ds.census().to_json(),
        "data_sha256": digest.hexdigest(),
    }
    manifest_path = path + ".manifest.json"
    with open(manifest_path, "w") as f:
        json.dump(manifest, f, indent=1)
        f.write("\n")
    return manifest_path


def synthesize(spec: DatasetSpec, out_dir: str) -> dict[str, str]:
    """Generate and write all three splits; returns split -> data path."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    for split in ("train", "val", "test"):
        ds = generate_split(spec, split)
        path = os.path.join(out_dir, f"{split}.pndb")
        write_pndb(path, ds, spec, split)
        paths[split] = path
    return paths


def load(path: str) -> Dataset:
    """Load one split, validating format, payload length, and manifest agreement."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise DataFormatError(f"{path}: bad magic {blob[:4]!r} at offset 0, expected {MAGIC!r}")
    if len(blob) < 28:
        raise DataFormatError(f"{path}: truncated header, file ends at offset {len(blob)}")
    version, n, h, w, c, a = struct.unpack_from("<IIIIII", blob, 4)
    if version != VERSION:
        raise DataFormatError(f"{path}: unsupported version {version} at offset 4")
    if c != 3:
        raise DataFormatError(f"{path}: expected 3 channels at offset 20, got {c}")
    off = 28
    names = []
    for _ in range(a):
        if off + 4 > len(blob):
            raise DataFormatError(f"{path}: truncated attribute table at offset {off}")
        (ln,) = struct.unpack_from("<I", blob, off)
        off += 4
        if off + ln > len(blob):
            raise DataFormatError(f"{path}: truncated attribute name at offset {off}")
        names.append(blob[off:off + ln].decode("utf-8"))
        off += ln
    rec_size = 1 + a + h * w * c
    expected_end = off + n * rec_size
    if len(blob) < expected_end:
        raise DataFormatError(
            f"{path}: truncated payload, expected {expected_end} bytes but file ends at offset {len(blob)}"
        )
    rec = np.frombuffer(blob, dtype=np.uint8, count=n * rec_size, offset=off).reshape(n, rec_size)
    targets = rec[:, 0].copy()
    attrs = rec[:, 1:1 + a].copy()
    images = rec[:, 1 + a:].reshape(n, h, w, c).copy()

    manifest = None
    manifest_path = path + ".manifest.json"
    if os.path.exists(manifest_path):
        with open(manifest_path) as f:
            manifest = json.load(f)
        if manifest.get("n_samples") != n:
            raise DataFormatError(
                f"{path}: manifest says {manifest.get('n_samples')} samples but header at offset 8 says {n}"
            )
        if manifest.get("attr_names") != names:
            raise DataFormatError(
                f"{path}: manifest attribute names {manifest.get('attr_names')} disagree with header table at offset 28"
            )
    return Dataset(images, targets, attrs, names, manifest=manifest)


def dataset_hash(path: str) -> str:
    """The sha256 recorded in the manifest, or a fresh hash of the file."""
    manifest_path = path + ".manifest.json"
    if os.path.exists(manifest_path):
        with open(manifest_path) as f:
            m = json.load(f)
        if "data_sha256" in m:
            return m["data_sha256"]
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()

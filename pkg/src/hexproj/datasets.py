"""Synthetic distribution-shift datasets and corpus file formats.

Images are float64 arrays with values in [0, 256). Every generator is a pure
function of its arguments and ``seed``; per-split randomness comes from
``numpy.random.SeedSequence(seed).spawn(k)`` in split order
(train, val, test).
"""
import struct
from dataclasses import dataclass, field

import numpy as np

from .exceptions import FormatError, InputError

SIDE = 28
FOREGROUND = 255.0
DEFAULT_SPLITS = (0.5, 0.3, 0.2)
KERNELS = ("radial", "random", "original")
COMPOSE_MODES = ("overwrite", "add")


@dataclass
class LabeledImageSet:
    images: np.ndarray
    labels: np.ndarray
    nuisance_ids: np.ndarray = None

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.nuisance_ids is None:
            self.nuisance_ids = np.zeros(len(self.labels), dtype=np.int64)
        self.nuisance_ids = np.asarray(self.nuisance_ids, dtype=np.int64)
        if not len(self.images) == len(self.labels) == len(self.nuisance_ids):
            raise InputError("images, labels and nuisance ids differ in length")

    def __len__(self):
        return len(self.labels)

    @property
    def n_classes(self):
        return int(self.labels.max()) + 1 if len(self) else 0

    def subset(self, idx):
        return LabeledImageSet(self.images[idx], self.labels[idx], self.nuisance_ids[idx])


@dataclass
class ShiftRecipe:
    """Dataset recipe. Only the fields of the chosen ``kind`` are used."""

    kind: str = "background_correlated"
    n_classes: int = 7
    n_samples: int = 2000
    side: int = SIDE
    rho: float = 0.9
    n_backgrounds: int = 7
    attach_strategy: str = "independently"
    train_kernels: tuple = ("radial", "random")
    test_kernel: str = "original"
    angle_list: tuple = (0, 15, 30, 45, 60, 75)
    test_angles: tuple = (75,)
    splits: tuple = DEFAULT_SPLITS
    noise: float = 8.0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise InputError(f"rho must lie in [0, 1], got {self.rho}")
        if len(self.splits) != 3 or abs(sum(self.splits) - 1.0) > 1e-9:
            raise InputError(f"split fractions must be three values summing to 1, got {self.splits}")
        if self.kind not in ("background_correlated", "fourier_pattern", "rotation"):
            raise InputError(f"unknown recipe kind {self.kind!r}")
        if self.attach_strategy not in ("independently", "dependently"):
            raise InputError(f"unknown attach strategy {self.attach_strategy!r}")


def split_rngs(seed, k=3):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(k)]


def split_counts(n, splits):
    counts = [int(np.floor(n * f)) for f in splits[:-1]]
    return counts + [n - sum(counts)]


def balanced_labels(n, n_classes, rng):
    labels = np.arange(n) % n_classes
    return rng.permutation(labels)


# -- procedural glyphs ------------------------------------------------------

# Each class is a distinct arrangement of four identical square dots on a
# 3 x 3 grid, so every glyph has the same local pixel statistics and differs
# only in layout.
GLYPH_LAYOUTS = (
    (0, 2, 6, 8), (1, 3, 5, 7), (0, 1, 2, 7), (0, 4, 8, 2),
    (3, 4, 5, 1), (6, 7, 8, 1), (0, 3, 6, 5), (2, 5, 8, 3),
    (0, 4, 7, 2), (1, 4, 6, 8),
)


def glyph_mask(label, side=SIDE, shift=(0, 0), dot=4, spacing=8):
    """Boolean foreground mask of the class glyph, translated by ``shift``."""
    if not 0 <= label < len(GLYPH_LAYOUTS):
        raise InputError(f"no glyph for class {label}")
    mask = np.zeros((side, side), dtype=bool)
    span = 2 * spacing + dot
    origin = (side - span) // 2
    for cell in GLYPH_LAYOUTS[label]:
        r, c = divmod(cell, 3)
        r0 = origin + r * spacing + shift[0]
        c0 = origin + c * spacing + shift[1]
        mask[max(r0, 0):max(r0 + dot, 0), max(c0, 0):max(c0 + dot, 0)] = True
    return mask


# -- procedural background textures ---------------------------------------

def background_texture(bg_id, side=SIDE, phase=(0, 0)):
    """Texture ``bg_id`` with a random phase; values stay in [0, 200]."""
    r, c = np.mgrid[0:side, 0:side]
    r = r + phase[0]
    c = c + phase[1]
    base = 20.0 + 22.0 * (bg_id % 8)
    amp = 30.0
    patterns = (
        np.zeros((side, side)),
        (c % 2) * 2.0 - 1.0,
        ((r // 2) % 2) * 2.0 - 1.0,
        ((r + c) % 2) * 2.0 - 1.0,
        (((r + c) // 2) % 2) * 2.0 - 1.0,
        ((c // 3) % 2) * 2.0 - 1.0,
        ((r % 3 == 0) & (c % 3 == 0)) * 2.0 - 1.0,
        (((r - c) // 3) % 2) * 2.0 - 1.0,
    )
    return np.clip(base + amp * patterns[bg_id % len(patterns)], 0, 200)


def render(label, bg_id, rng, side=SIDE, jitter=2, noise=8.0, dot=4, compose="overwrite",
           amplitude=100.0):
    """One glyph on a background; ``compose`` is "overwrite" (glyph pixels set to
    255) or "add" (``amplitude`` added under the glyph, texture still visible)."""
    if compose not in COMPOSE_MODES:
        raise InputError(f"unknown compose mode {compose!r}")
    shift = tuple(rng.integers(-jitter, jitter + 1, size=2)) if jitter else (0, 0)
    phase = tuple(rng.integers(0, 6, size=2))
    img = background_texture(bg_id, side, phase)
    mask = glyph_mask(label, side, shift, dot=dot)
    if compose == "add":
        img = img + amplitude * mask
    else:
        img[mask] = FOREGROUND
    if noise:
        img = img + rng.uniform(-noise, noise, size=img.shape)
    return np.clip(img, 0.0, 255.0)


def sample_backgrounds(labels, rho, n_backgrounds, rng):
    """Designated background (= class id) with probability ``rho``, else uniform.

    So P(designated | class) = rho + (1 - rho) / n_backgrounds.
    """
    if not 0.0 <= rho <= 1.0:
        raise InputError(f"rho must lie in [0, 1], got {rho}")
    labels = np.asarray(labels)
    uniform = rng.integers(0, n_backgrounds, size=labels.shape)
    keep = rng.random(labels.shape) < rho
    return np.where(keep, labels, uniform)


def gen_background_correlated(n_classes=7, n_backgrounds=7, rho=0.9, n_samples=2000, seed=0,
                              side=SIDE, splits=DEFAULT_SPLITS, noise=8.0, jitter=4, dot=3,
                              compose="add", amplitude=100.0):
    """Glyph classes on textured backgrounds correlated with the label.

    The defaults make the glyph faint relative to the background so that a
    plain classifier prefers the background shortcut when ``rho`` is high.

    Train and validation backgrounds follow :func:`sample_backgrounds`; test
    backgrounds are uniform and independent of the label.
    """
    if n_backgrounds < n_classes:
        raise InputError("need at least one designated background per class")
    if not 0.0 <= rho <= 1.0:
        raise InputError(f"rho must lie in [0, 1], got {rho}")
    out = []
    for i, (rng, n) in enumerate(zip(split_rngs(seed), split_counts(n_samples, splits))):
        labels = balanced_labels(n, n_classes, rng)
        if i < 2:
            bgs = sample_backgrounds(labels, rho, n_backgrounds, rng)
        else:
            bgs = rng.integers(0, n_backgrounds, size=n)
        imgs = np.stack([render(y, b, rng, side, jitter, noise, dot, compose, amplitude)
                         for y, b in zip(labels, bgs)]) \
            if n else np.zeros((0, side, side))
        out.append(LabeledImageSet(imgs, labels, bgs))
    return tuple(out)


def gen_glyph_set(n_classes=10, n_samples=1000, seed=0, side=SIDE, noise=8.0):
    """Glyph images on a black background (a stand-in digit corpus)."""
    rng = np.random.default_rng(seed)
    labels = balanced_labels(n_samples, n_classes, rng)
    imgs = np.stack([render(y, 0, rng, side, noise=noise) for y in labels])
    # texture 0 is flat at level 20; drop it to black
    imgs = np.where(imgs >= FOREGROUND - noise, imgs, np.clip(imgs - 20.0, 0, None))
    return LabeledImageSet(imgs, labels)


def gen_texture_corpus(n_classes=10, n_textures=4, n_samples=1000, seed=0, side=SIDE,
                       noise=8.0):
    """Glyphs on textures drawn independently of the label (for probing)."""
    rng = np.random.default_rng(seed)
    labels = balanced_labels(n_samples, n_classes, rng)
    tex = rng.integers(0, n_textures, size=n_samples)
    imgs = np.stack([render(y, t, rng, side, noise=noise) for y, t in zip(labels, tex)])
    return LabeledImageSet(imgs, labels, tex)


# -- Fourier filtering -----------------------------------------------------

def _neg_index(m):
    return (-np.arange(m)) % m


def spectral_mask(side, kernel, seed=0, r_cut=None, keep_prob=0.5):
    """Real-symmetric frequency mask (``mask[k] == mask[-k]``) with DC kept.

    ``radial`` keeps frequencies with magnitude <= ``r_cut`` (default side/4);
    ``random`` keeps each conjugate pair with probability ``keep_prob``;
    ``original`` keeps everything.
    """
    if kernel == "original":
        return np.ones((side, side), dtype=bool)
    if kernel == "radial":
        r_cut = side / 4 if r_cut is None else r_cut
        f = np.fft.fftfreq(side) * side
        mag = np.sqrt(f[:, None] ** 2 + f[None, :] ** 2)
        mask = mag <= r_cut
    elif kernel == "random":
        rng = np.random.default_rng(seed)
        raw = rng.random((side, side)) < keep_prob
        flat = np.arange(side * side).reshape(side, side)
        neg = _neg_index(side)
        partner = flat[neg][:, neg]
        mask = raw.ravel()[np.minimum(flat, partner)]
    else:
        raise InputError(f"unknown kernel {kernel!r}")
    mask[0, 0] = True
    return mask


def apply_spectral_mask(img, mask):
    """Complex inverse transform of the masked spectrum (imaginary part kept)."""
    return np.fft.ifft2(np.fft.fft2(np.asarray(img, dtype=np.float64)) * mask)


def rescale_guard(x):
    """Linear rescale to [0, 255] when ``x`` leaves that range; constants stay put."""
    lo, hi = x.min(), x.max()
    if lo >= 0.0 and hi <= 255.0:
        return x
    if hi - lo < 1e-12:
        return np.full_like(x, np.clip(x.mean(), 0.0, 255.0))
    return (x - lo) * (255.0 / (hi - lo))


def fourier_filter(img, kernel="radial", seed=0, r_cut=None, keep_prob=0.5, mask=None):
    """Filter ``img`` in the frequency domain and return a real image in [0, 255]."""
    img = np.asarray(img, dtype=np.float64)
    if mask is None:
        mask = spectral_mask(img.shape[0], kernel, seed, r_cut, keep_prob)
    return rescale_guard(apply_spectral_mask(img, mask).real)


def gen_fourier_patterned(base, strategy="independently", train_kernels=("radial", "random"),
                          test_kernel="original", seed=0, splits=DEFAULT_SPLITS, n_classes=None):
    """Attach frequency-domain patterns to ``base`` and split it.

    Train/val images get one of ``train_kernels`` (uniformly at random, or
    class < n_classes/2 -> first kernel otherwise second); every test image
    gets ``test_kernel``. ``nuisance_ids`` index into
    ``train_kernels + (test_kernel,)``.
    """
    kernels = tuple(train_kernels) + (test_kernel,)
    if len(set(kernels)) != 3:
        raise InputError(f"kernels must be distinct, got {kernels}")
    if strategy not in ("independently", "dependently"):
        raise InputError(f"unknown attach strategy {strategy!r}")
    n_classes = base.n_classes if n_classes is None else n_classes
    side = base.images.shape[1]
    masks = [spectral_mask(side, k, seed) for k in kernels]
    rngs = split_rngs(seed, 4)
    order = rngs[3].permutation(len(base))
    out = []
    start = 0
    for i, n in enumerate(split_counts(len(base), splits)):
        part = base.subset(order[start:start + n])
        start += n
        if i == 2:
            kid = np.full(n, 2)
        elif strategy == "independently":
            kid = rngs[i].integers(0, 2, size=n)
        else:
            kid = (part.labels >= n_classes / 2).astype(np.int64)
        imgs = np.stack([fourier_filter(im, mask=masks[k]) for im, k in zip(part.images, kid)]) \
            if n else part.images
        out.append(LabeledImageSet(imgs, part.labels, kid))
    return tuple(out)


# -- rotation --------------------------------------------------------------

def rotate_image(img, angle):
    """Rotate counter-clockwise by ``angle`` degrees about the center.

    Bilinear interpolation; samples outside the image read as 0.
    """
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    theta = np.deg2rad(angle)
    cos, sin = np.cos(theta), np.sin(theta)
    r, c = np.mgrid[0:h, 0:w].astype(np.float64)
    x, yup = c - cx, cy - r
    xs = x * cos + yup * sin
    ys = -x * sin + yup * cos
    src_r, src_c = cy - ys, cx + xs
    # snap float noise so grid-aligned rotations stay exact
    src_r = np.where(np.abs(src_r - np.round(src_r)) < 1e-9, np.round(src_r), src_r)
    src_c = np.where(np.abs(src_c - np.round(src_c)) < 1e-9, np.round(src_c), src_c)
    r0 = np.floor(src_r).astype(np.int64)
    c0 = np.floor(src_c).astype(np.int64)
    fr, fc = src_r - r0, src_c - c0
    padded = np.pad(img, 1)

    def at(rr, cc):
        inside = (rr >= -1) & (rr <= h) & (cc >= -1) & (cc <= w)
        return np.where(inside, padded[np.clip(rr + 1, 0, h + 1), np.clip(cc + 1, 0, w + 1)], 0.0)

    return ((1 - fr) * (1 - fc) * at(r0, c0) + (1 - fr) * fc * at(r0, c0 + 1)
            + fr * (1 - fc) * at(r0 + 1, c0) + fr * fc * at(r0 + 1, c0 + 1))


def gen_rotation_domains(base, angles=(0, 15, 30, 45, 60, 75), n_per_class=100, seed=0):
    """Draw ``n_per_class`` images per class and rotate the draw by each angle.

    Returns a dict ``angle -> LabeledImageSet`` whose ``nuisance_ids`` hold the
    angle's index in ``angles``.
    """
    rng = np.random.default_rng(seed)
    picks = []
    for cls in range(base.n_classes):
        idx = np.flatnonzero(base.labels == cls)
        if len(idx) < n_per_class:
            raise InputError(f"class {cls} has {len(idx)} images, need {n_per_class}")
        picks.append(rng.choice(idx, size=n_per_class, replace=False))
    chosen = base.subset(np.concatenate(picks))
    domains = {}
    for i, angle in enumerate(angles):
        imgs = np.stack([rotate_image(im, angle) for im in chosen.images]) \
            if angle else chosen.images.copy()
        domains[angle] = LabeledImageSet(imgs, chosen.labels.copy(),
                                         np.full(len(chosen), i))
    return domains


# -- file formats ----------------------------------------------------------

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801


def _to_bytes(images):
    arr = np.asarray(images)
    if arr.size and (arr.min() < 0 or arr.max() > 255):
        raise InputError("pixel values must lie in [0, 255] for byte formats")
    return np.rint(arr).astype(np.uint8)


def write_idx(path, array):
    """Write an unsigned-byte IDX file (1-D labels or 3-D images)."""
    arr = _to_bytes(array)
    magic = IDX_IMAGES if arr.ndim == 3 else IDX_LABELS
    if arr.ndim not in (1, 3):
        raise InputError(f"IDX writer supports 1-D or 3-D arrays, got {arr.ndim}-D")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(f">{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def read_idx(path, expected_magic=None):
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4:
        raise FormatError(f"{path}: truncated header at offset 0 ({len(data)} bytes)")
    (magic,) = struct.unpack_from(">I", data, 0)
    if magic not in (IDX_IMAGES, IDX_LABELS) or (expected_magic and magic != expected_magic):
        raise FormatError(f"{path}: bad magic 0x{magic:08x} at offset 0")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(data) < header:
        raise FormatError(f"{path}: truncated dimension header at offset 4")
    shape = struct.unpack_from(f">{ndim}I", data, 4)
    expected = int(np.prod(shape))
    actual = len(data) - header
    if actual != expected:
        raise FormatError(
            f"{path}: payload at offset {header} has {actual} bytes, expected {expected}"
        )
    return np.frombuffer(data, dtype=np.uint8, offset=header).reshape(shape).copy()


def load_idx(images_path, labels_path):
    images = read_idx(images_path, IDX_IMAGES)
    labels = read_idx(labels_path, IDX_LABELS)
    if len(images) != len(labels):
        raise FormatError(
            f"{images_path} holds {len(images)} images but {labels_path} holds {len(labels)} labels"
        )
    return LabeledImageSet(images.astype(np.float64), labels.astype(np.int64))


def save_idx(dataset, images_path, labels_path):
    write_idx(images_path, dataset.images)
    write_idx(labels_path, dataset.labels)


def export_pgm(img, path):
    """Binary PGM (P5) with maxval 255."""
    arr = _to_bytes(img)
    if arr.ndim != 2:
        raise InputError(f"PGM export needs a 2-D image, got shape {arr.shape}")
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


def read_pgm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PGM header at offset {pos}")
        tokens.append(data[start:pos])
    if tokens[0] != b"P5" or tokens[3] != b"255":
        raise FormatError(f"{path}: unsupported PGM header at offset 0")
    w, h = int(tokens[1]), int(tokens[2])
    pos += 1
    if len(data) - pos != w * h:
        raise FormatError(f"{path}: payload at offset {pos} has {len(data) - pos} bytes, expected {w * h}")
    return np.frombuffer(data, dtype=np.uint8, offset=pos).reshape(h, w).astype(np.float64)


def write_manifest(dataset, path):
    """One line per image: ``index label nuisance_id``."""
    with open(path, "w") as fh:
        for i, (y, n) in enumerate(zip(dataset.labels, dataset.nuisance_ids)):
            fh.write(f"{i} {y} {n}\n")


def read_manifest(path):
    rows = np.loadtxt(path, dtype=np.int64, ndmin=2)
    return rows[:, 1], rows[:, 2]

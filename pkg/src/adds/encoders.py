"""Frozen toy encoders, prompt templating, and the synthetic aligned world.

The image encoder is the smallest thing with a ViT-like interface: a patch
embedding, a frozen linear token-mixing step, and a CLS row formed by mean
pooling. The text encoder is defined *through* the image encoder: each class
name maps to the unit-normalized CLS response of the image encoder applied to
that class's signature patch, so the visual-textual alignment assumption is
exactly true by construction and can be tested rather than presumed.
"""

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, FormatError, ShapeError
from .rng import SeedStreams

EMBEDDING_MAGIC = b"ADDSEMB1"

DEFAULT_PROMPTS = ("This photo contains {}", "This is a {} photo")


@dataclass(frozen=True)
class PromptTemplate:
    pattern: str

    def __post_init__(self):
        if self.pattern.count("{}") != 1:
            raise ConfigurationError(
                f"prompt template needs exactly one placeholder: {self.pattern!r}"
            )

    def fill(self, class_name: str) -> str:
        return self.pattern.format(class_name)


class FrozenImageEncoder:
    """Patch embedding + frozen token mixing + CLS mean pool. Weights never change."""

    def __init__(self, base_size, patch_size, embed_dim, stream, dtype=np.float64):
        if base_size % patch_size != 0:
            raise ConfigurationError(
                f"base size {base_size} not a multiple of patch size {patch_size}"
            )
        self.base_size = base_size
        self.patch_size = patch_size
        self.embed_dim = embed_dim
        self.dtype = np.dtype(dtype)
        self.grid = base_size // patch_size
        self.n_patches = self.grid**2
        dim_in = patch_size * patch_size
        self.proj = (stream.standard_normal((dim_in, embed_dim)) / np.sqrt(dim_in)).astype(dtype)
        self.mix = (np.eye(self.n_patches)
                    + 0.1 * stream.standard_normal((self.n_patches, self.n_patches))
                    ).astype(dtype)
        self.proj.setflags(write=False)
        self.mix.setflags(write=False)

    def weight_hash(self) -> str:
        h = hashlib.sha256()
        h.update(self.proj.tobytes())
        h.update(self.mix.tobytes())
        return h.hexdigest()

    def encode_tile(self, tile: np.ndarray) -> np.ndarray:
        """Tokens for one base-sized tile: row 0 is CLS, rows 1..p are patches."""
        if tile.shape[:2] != (self.base_size, self.base_size):
            raise ShapeError(
                f"tile shape {tile.shape[:2]} != ({self.base_size}, {self.base_size})"
            )
        p = self.patch_size
        patches = (
            tile.astype(self.dtype)
            .reshape(self.grid, p, self.grid, p)
            .transpose(0, 2, 1, 3)
            .reshape(self.n_patches, p * p)
        )
        tokens = self.mix @ (patches @ self.proj)
        cls = tokens.mean(axis=0, keepdims=True)
        return np.concatenate([cls, tokens], axis=0)


class FrozenTextEncoder:
    """Deterministic text embedding over a fixed class-vector table.

    Strings containing a known class name map near that class's aligned
    vector, with a small template-dependent perturbation; unknown strings fall
    back to a pure hash embedding.
    """

    def __init__(self, embed_dim, class_vectors: dict[str, np.ndarray],
                 seed: int = 0, jitter: float = 0.05):
        self.embed_dim = embed_dim
        self.class_vectors = {k: np.asarray(v, dtype=np.float64)
                              for k, v in class_vectors.items()}
        self.seed = seed
        self.jitter = jitter

    def _hash_vector(self, text: str) -> np.ndarray:
        digest = hashlib.sha256(f"{self.seed}:{text}".encode("utf-8")).digest()
        gen = np.random.Generator(
            np.random.Philox(key=[int.from_bytes(digest[i:i + 8], "little")
                                  for i in range(0, 16, 8)])
        )
        v = gen.standard_normal(self.embed_dim)
        return v / np.linalg.norm(v)

    def encode_text(self, text: str) -> np.ndarray:
        """Unit-norm embedding of one string."""
        matches = [n for n in self.class_vectors if n in text]
        if matches:
            name = max(matches, key=len)
            v = self.class_vectors[name] + self.jitter * self._hash_vector(text)
        else:
            v = self._hash_vector(text)
        return v / np.linalg.norm(v)


def embed_label(class_name: str, templates, encoder: FrozenTextEncoder) -> np.ndarray:
    """Average the embeddings of every prompted form, renormalized to unit norm."""
    if not class_name:
        raise ValueError("class name must be non-empty")
    if not templates:
        raise ConfigurationError("at least one prompt template is required")
    vecs = [encoder.encode_text(t.fill(class_name)) for t in templates]
    mean = np.mean(vecs, axis=0)
    return mean / np.linalg.norm(mean)


# ---------------------------------------------------------------------------
# synthetic world

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"
_SYLLABLES = [c + v for c in _CONSONANTS for v in _VOWELS]


def _make_names(k: int) -> list[str]:
    names = []
    for i in range(k):
        a, b = divmod(i, len(_SYLLABLES))
        names.append(_SYLLABLES[a] + _SYLLABLES[b])
    return names


@dataclass
class SyntheticWorld:
    """Images with planted per-class signature patches, labeled exactly."""

    class_names: list[str]
    signatures: np.ndarray  # k x patch x patch
    image_side: int
    base_size: int
    patch_size: int
    embed_dim: int
    seed: int
    noise_std: float
    image_encoder: FrozenImageEncoder
    text_encoder: FrozenTextEncoder
    max_planted: int = 5
    _cells: list = field(default_factory=list)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def signature_tile(self, class_index: int) -> np.ndarray:
        tile = np.zeros((self.base_size, self.base_size))
        p = self.patch_size
        tile[:p, :p] = self.signatures[class_index]
        return tile

    def sample(self, stream, class_subset=None):
        """One (image, binary label vector) pair with 1..max_planted classes."""
        k = self.num_classes
        pool = np.arange(k) if class_subset is None else np.asarray(class_subset)
        n_pos = int(stream.integers(1, min(self.max_planted, len(pool)) + 1))
        chosen = stream.choice(pool, size=n_pos, replace=False)
        cell_ids = stream.choice(len(self._cells), size=n_pos, replace=False)
        img = self.noise_std * stream.standard_normal((self.image_side, self.image_side))
        p = self.patch_size
        for c, cell in zip(chosen, cell_ids):
            y, x = self._cells[cell]
            img[y:y + p, x:x + p] = self.signatures[c]
        labels = np.zeros(k, dtype=np.int8)
        labels[chosen] = 1
        return img, labels

    def sample_many(self, stream, n, class_subset=None):
        return [self.sample(stream, class_subset) for _ in range(n)]


def make_synthetic_world(
    k: int,
    image_side: int,
    base_size: int,
    embed_dim: int,
    seed: int,
    patch_size: int = 8,
    noise_std: float = 0.05,
    max_planted: int = 5,
) -> SyntheticWorld:
    if k < 2:
        raise ConfigurationError(f"need at least 2 classes, got {k}")
    if image_side % patch_size != 0 or image_side < base_size:
        raise ConfigurationError(
            f"image side {image_side} must be >= base {base_size} and a "
            f"multiple of patch {patch_size}"
        )
    streams = SeedStreams(seed)
    encoder = FrozenImageEncoder(
        base_size, patch_size, embed_dim, streams.stream("image_encoder")
    )
    sig_stream = streams.stream("signatures")
    signatures = sig_stream.standard_normal((k, patch_size, patch_size))
    names = _make_names(k)

    world = SyntheticWorld(
        class_names=names,
        signatures=signatures,
        image_side=image_side,
        base_size=base_size,
        patch_size=patch_size,
        embed_dim=embed_dim,
        seed=seed,
        noise_std=noise_std,
        image_encoder=encoder,
        text_encoder=None,  # filled below
        max_planted=max_planted,
        _cells=[
            (y, x)
            for y in range(0, image_side, patch_size)
            for x in range(0, image_side, patch_size)
        ],
    )
    table = {}
    responses = []
    for i, name in enumerate(names):
        cls = encoder.encode_tile(world.signature_tile(i))[0]
        norm = np.linalg.norm(cls)
        if norm == 0:
            raise ConfigurationError(f"class {name} has a zero signature response")
        table[name] = cls / norm
        responses.append(table[name])
    responses = np.stack(responses)
    cos = responses @ responses.T
    np.fill_diagonal(cos, 0.0)
    if cos.max() > 0.95:
        raise ConfigurationError(
            f"{k} classes are not separable at patch size {patch_size} "
            f"(max signature cosine {cos.max():.3f})"
        )
    world.text_encoder = FrozenTextEncoder(embed_dim, table, seed=seed)
    return world


# ---------------------------------------------------------------------------
# embedding file format


def export_embeddings(path, table: dict[str, np.ndarray]) -> None:
    """Write a label -> vector table; see import_embeddings for the layout."""
    dims = {len(np.asarray(v).reshape(-1)) for v in table.values()}
    if len(dims) > 1:
        raise FormatError(f"vectors have mixed dimensions: {sorted(dims)}")
    e = dims.pop() if dims else 0
    with open(path, "wb") as fh:
        fh.write(EMBEDDING_MAGIC)
        fh.write(struct.pack("<II", len(table), e))
        for label, vec in table.items():
            raw = label.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(np.asarray(vec, dtype="<f4").tobytes())


def import_embeddings(path):
    """Read the table back; returns (dict label -> float32 vector, dim)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != EMBEDDING_MAGIC:
        raise FormatError(f"bad magic {data[:8]!r}, expected {EMBEDDING_MAGIC!r}")
    if len(data) < 16:
        raise FormatError("truncated header")
    count, e = struct.unpack_from("<II", data, 8)
    pos = 16
    table = {}
    for row in range(count):
        if pos + 2 > len(data):
            raise FormatError(f"row {row}: truncated label length")
        (label_len,) = struct.unpack_from("<H", data, pos)
        pos += 2
        if pos + label_len + 4 * e > len(data):
            raise FormatError(f"row {row}: record shorter than dim {e}")
        label = data[pos:pos + label_len].decode("utf-8")
        pos += label_len
        vec = np.frombuffer(data[pos:pos + 4 * e], dtype="<f4").copy()
        pos += 4 * e
        table[label] = vec
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes after row {count - 1}")
    return table, e

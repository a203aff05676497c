"""Pyramid file format, dataset manifests, and the planted-signal generator.

The .gpyr binary layout (all integers little-endian; the fixed byte order is
part of the format, and a big-endian reader would see version 256 and fail
the version check):

    magic "GPYR" | u16 version=1 | u32 m | u32 d | u32 label
    | u16 len + utf-8 group_id | u16 len + utf-8 slide_id
    | M1 block | M2 block | M3 block    (each m*d row-major float32 LE)
    | u32 crc32 of every preceding byte

Features are stored as 32-bit floats; computation upcasts to 64-bit when the
graph is built. The synthetic generator therefore emits float32 blocks so
write -> read round-trips are bit-exact.
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct
import zlib
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    BadVersionError,
    ChecksumError,
    ConfigError,
    TruncatedFileError,
    ValidationError,
)
from .graphs import ALL_LEVELS, EmbeddingPyramid, PyramidGraph, build_graph

PYRAMID_MAGIC = b"GPYR"
PYRAMID_VERSION = 1


def write_pyramid(pyr: EmbeddingPyramid, path: str | Path):
    """Serialize one pyramid. Feature blocks are downcast to float32 if needed."""
    group = pyr.group_id.encode("utf-8")
    slide = pyr.slide_id.encode("utf-8")
    if len(group) > 0xFFFF or len(slide) > 0xFFFF:
        raise ValidationError("group_id / slide_id longer than 65535 bytes")
    blob = bytearray()
    blob += PYRAMID_MAGIC
    blob += struct.pack("<HIII", PYRAMID_VERSION, pyr.m, pyr.d, pyr.label)
    blob += struct.pack("<H", len(group)) + group
    blob += struct.pack("<H", len(slide)) + slide
    for block in (pyr.feats_m1, pyr.feats_m2, pyr.feats_m3):
        blob += np.ascontiguousarray(block, dtype="<f4").tobytes()
    blob += struct.pack("<I", zlib.crc32(bytes(blob)))
    Path(path).write_bytes(bytes(blob))


def read_pyramid(path: str | Path) -> EmbeddingPyramid:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != PYRAMID_MAGIC:
        raise BadMagicError(f"{path}: not a pyramid file")
    if len(raw) < 18:
        raise TruncatedFileError(f"{path}: header incomplete")
    version, m, d, label = struct.unpack_from("<HIII", raw, 4)
    if version != PYRAMID_VERSION:
        raise BadVersionError(f"{path}: unsupported pyramid version {version}")
    off = 18
    strings = []
    for what in ("group_id", "slide_id"):
        if len(raw) < off + 2:
            raise TruncatedFileError(f"{path}: {what} length field missing")
        (n,) = struct.unpack_from("<H", raw, off)
        off += 2
        if len(raw) < off + n:
            raise TruncatedFileError(f"{path}: {what} bytes missing")
        strings.append(raw[off : off + n].decode("utf-8"))
        off += n
    group_id, slide_id = strings
    block_bytes = m * d * 4
    expected = off + 3 * block_bytes + 4
    if len(raw) < expected:
        raise TruncatedFileError(f"{path}: expected {expected} bytes, found {len(raw)}")
    if len(raw) > expected:
        raise TruncatedFileError(f"{path}: {len(raw) - expected} trailing bytes")
    (stored_crc,) = struct.unpack_from("<I", raw, expected - 4)
    if zlib.crc32(raw[: expected - 4]) != stored_crc:
        raise ChecksumError(f"{path}: payload CRC mismatch")
    blocks = []
    for _ in range(3):
        block = np.frombuffer(raw, dtype="<f4", count=m * d, offset=off).reshape(m, d)
        blocks.append(block.copy())
        off += block_bytes
    return EmbeddingPyramid(
        slide_id=slide_id,
        feats_m1=blocks[0],
        feats_m2=blocks[1],
        feats_m3=blocks[2],
        label=label,
        group_id=group_id,
    )


def pyramid_file_size(m: int, d: int, group_id: str, slide_id: str) -> int:
    """Exact on-disk size of a .gpyr file with the given dimensions."""
    header = 4 + 14 + 2 + len(group_id.encode()) + 2 + len(slide_id.encode())
    return header + 3 * m * d * 4 + 4


# -- datasets -----------------------------------------------------------------


@dataclass
class GraphDataset:
    """Built graphs plus the label vocabulary they were encoded against."""

    graphs: list[PyramidGraph]
    classes: int
    class_names: list[str] | None = None

    def __post_init__(self):
        bad = [g.slide_id for g in self.graphs if not 0 <= g.label < self.classes]
        if bad:
            raise ValidationError(f"labels outside [0, {self.classes}) for slides {bad}")

    def __len__(self) -> int:
        return len(self.graphs)

    def labels(self) -> np.ndarray:
        return np.array([g.label for g in self.graphs], dtype=np.int64)

    def slides(self) -> list[tuple[str, str, int]]:
        """(slide_id, group_id, label) rows, the fold-assignment view."""
        return [(g.slide_id, g.group_id, g.label) for g in self.graphs]


def build_dataset(
    pyramids: list[EmbeddingPyramid],
    classes: int,
    class_names: list[str] | None = None,
    **graph_kwargs,
) -> GraphDataset:
    graphs = [build_graph(p, **graph_kwargs) for p in pyramids]
    return GraphDataset(graphs=graphs, classes=classes, class_names=class_names)


def permute_labels(dataset: GraphDataset, seed: int) -> GraphDataset:
    """Null-control copy: the label column is permuted across slides."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(dataset.graphs))
    labels = dataset.labels()
    graphs = [g.with_label(int(labels[order[i]])) for i, g in enumerate(dataset.graphs)]
    return GraphDataset(graphs=graphs, classes=dataset.classes, class_names=dataset.class_names)


def dataset_fingerprint(pyramids: list[EmbeddingPyramid]) -> str:
    """sha256 over every block and label; equal specs must yield equal prints."""
    h = hashlib.sha256()
    for p in pyramids:
        h.update(p.slide_id.encode())
        h.update(p.group_id.encode())
        h.update(struct.pack("<III", p.m, p.d, p.label))
        for block in (p.feats_m1, p.feats_m2, p.feats_m3):
            h.update(np.ascontiguousarray(block, dtype="<f4").tobytes())
    return h.hexdigest()


# -- synthetic planted-signal data ----------------------------------------------


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for a synthetic dataset with known signal placement.

    signal_levels gives, per class, the magnification levels (subset of
    {1, 2, 3}) whose features carry that class's mean offset. Background is
    i.i.d. standard normal; each slide plants the offset on a random
    `fraction` of its triplet indices. Class offsets are orthonormal
    directions scaled to length `snr`, so the per-class means are mutually
    distinguishable by construction.
    """

    classes: int
    m: int
    d: int
    signal_levels: tuple[tuple[int, ...], ...]
    snr: float
    fraction: float
    slides_per_class: int
    groups_per_class: int
    seed: int

    def __post_init__(self):
        if self.classes < 1 or self.m < 1 or self.d < 1:
            raise ConfigError("classes, m, d must be >= 1")
        if self.classes > self.d:
            raise ConfigError("need classes <= d for orthogonal class directions")
        if len(self.signal_levels) != self.classes:
            raise ConfigError("signal_levels must list one level subset per class")
        for levels in self.signal_levels:
            if not levels or any(l not in ALL_LEVELS for l in levels):
                raise ConfigError(f"signal levels {levels} not a nonempty subset of {ALL_LEVELS}")
        if self.snr < 0:
            raise ConfigError("snr must be non-negative (0 builds the null dataset)")
        if not 0 < self.fraction <= 1:
            raise ConfigError("fraction must lie in (0, 1]")
        if self.slides_per_class < 2:
            raise ConfigError("need at least 2 slides per class")
        if not 1 <= self.groups_per_class <= self.slides_per_class:
            raise ConfigError("groups_per_class must lie in [1, slides_per_class]")

    def to_json(self) -> str:
        return json.dumps(
            {
                "classes": self.classes,
                "m": self.m,
                "d": self.d,
                "signal_levels": [list(l) for l in self.signal_levels],
                "snr": self.snr,
                "fraction": self.fraction,
                "slides_per_class": self.slides_per_class,
                "groups_per_class": self.groups_per_class,
                "seed": self.seed,
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "SynthSpec":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid synth spec JSON: {e}") from e
        try:
            return cls(
                classes=raw["classes"],
                m=raw["m"],
                d=raw["d"],
                signal_levels=tuple(tuple(l) for l in raw["signal_levels"]),
                snr=raw["snr"],
                fraction=raw["fraction"],
                slides_per_class=raw["slides_per_class"],
                groups_per_class=raw["groups_per_class"],
                seed=raw["seed"],
            )
        except KeyError as e:
            raise ConfigError(f"synth spec missing key {e}") from e


def class_directions(spec: SynthSpec) -> np.ndarray:
    """(classes, d) orthonormal offset directions, deterministic in the seed."""
    rng = np.random.default_rng(spec.seed)
    raw = rng.standard_normal((spec.d, spec.classes))
    q, r = np.linalg.qr(raw)
    q = q * np.sign(np.diag(r))  # fix QR sign ambiguity for determinism
    return q.T[: spec.classes]


def generate_synthetic(spec: SynthSpec) -> list[EmbeddingPyramid]:
    """Deterministic dataset of planted-signal pyramids.

    Groups are assigned round-robin within each class, so slides_per_class /
    groups_per_class slides share a patient.
    """
    rng = np.random.default_rng(spec.seed)
    offsets = class_directions(spec) * spec.snr
    n_signal = max(1, int(round(spec.fraction * spec.m)))
    out = []
    for c in range(spec.classes):
        for s in range(spec.slides_per_class):
            blocks = rng.standard_normal((3, spec.m, spec.d))
            idx = rng.choice(spec.m, size=n_signal, replace=False)
            for level in spec.signal_levels[c]:
                blocks[level - 1][idx] += offsets[c]
            out.append(
                EmbeddingPyramid(
                    slide_id=f"c{c}s{s:04d}",
                    feats_m1=blocks[0].astype(np.float32),
                    feats_m2=blocks[1].astype(np.float32),
                    feats_m3=blocks[2].astype(np.float32),
                    label=c,
                    group_id=f"c{c}g{s % spec.groups_per_class}",
                )
            )
    return out


def synth_class_names(classes: int) -> list[str]:
    return [f"class{c:02d}" for c in range(classes)]


def import_published_graphs(path):
    """Adapter point for pyramid datasets released in other serializations.

    No external schema is pinned down here; converting such data means
    constructing EmbeddingPyramid objects (three index-aligned m x d float
    blocks, label, patient group) and writing them with write_pyramid plus a
    manifest. This stub marks the seam where that converter plugs in.
    """
    raise NotImplementedError(
        "convert external data to .gpyr via EmbeddingPyramid + write_dataset"
    )


# -- manifests ------------------------------------------------------------------

MANIFEST_COLUMNS = ["slide_id", "path", "label", "group"]


@dataclass(frozen=True)
class ManifestRow:
    slide_id: str
    path: str
    label: str
    group: str


@dataclass
class Manifest:
    """Validated manifest rows plus the sorted label vocabulary."""

    rows: list[ManifestRow]
    base_dir: Path
    label_names: list[str]

    @property
    def classes(self) -> int:
        return len(self.label_names)

    def label_index(self, name: str) -> int:
        return self.label_names.index(name)

    def iter_pyramids(self):
        """Lazily read pyramids; manifest labels override the stored label field."""
        for row in self.rows:
            pyr = read_pyramid(self.base_dir / row.path)
            yield replace(
                pyr,
                slide_id=row.slide_id,
                label=self.label_index(row.label),
                group_id=row.group,
            )

    def load_dataset(self, **graph_kwargs) -> GraphDataset:
        return build_dataset(
            list(self.iter_pyramids()), self.classes, self.label_names, **graph_kwargs
        )


def load_manifest(path: str | Path) -> Manifest:
    """Parse and validate manifest.csv; file paths are resolved relative to it."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty manifest") from None
        if header != MANIFEST_COLUMNS:
            raise ValidationError(
                f"{path}: header must be {','.join(MANIFEST_COLUMNS)}, got {','.join(header)}"
            )
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != 4:
                raise ValidationError(f"{path}:{lineno}: expected 4 fields, got {len(rec)}")
            rows.append(ManifestRow(*rec))
    if not rows:
        raise ValidationError(f"{path}: manifest has no data rows")
    seen: set[str] = set()
    base = path.parent
    for row in rows:
        if not row.slide_id:
            raise ValidationError(f"{path}: empty slide_id")
        if row.slide_id in seen:
            raise ValidationError(f"{path}: duplicate slide_id {row.slide_id!r}")
        seen.add(row.slide_id)
        if not row.group:
            raise ValidationError(f"{path}: empty group for slide {row.slide_id!r}")
        if not (base / row.path).is_file():
            raise ValidationError(f"{path}: missing file {row.path!r} for slide {row.slide_id!r}")
    label_names = sorted({row.label for row in rows})
    return Manifest(rows=rows, base_dir=base, label_names=label_names)


def write_dataset(
    pyramids: list[EmbeddingPyramid],
    out_dir: str | Path,
    class_names: list[str],
) -> Path:
    """Write one .gpyr per pyramid plus manifest.csv; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = out_dir / "manifest.csv"
    with open(manifest_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_COLUMNS)
        for pyr in pyramids:
            fname = f"{pyr.slide_id}.gpyr"
            write_pyramid(pyr, out_dir / fname)
            writer.writerow([pyr.slide_id, fname, class_names[pyr.label], pyr.group_id])
    return manifest_path

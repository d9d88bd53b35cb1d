"""Dataset manifests, subsampling, train/test splits and the synthetic texture families."""

from __future__ import annotations

import csv
import io
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, FormatError
from .ppm import atomic_write, encode_ppm, read_ppm

SYNTHETIC_KINDS = ("stripes_h", "stripes_v", "checker", "dots")

SYNTHETIC_PHRASES = {
    "stripes_v": ("vertical lines", "striped", "parallel lines"),
    "stripes_h": ("horizontal lines", "striped", "parallel lines"),
    "checker": ("checkered", "chessboard", "grid", "squares"),
    "dots": ("dotted", "polka dots", "spots", "circles"),
}


@dataclass(frozen=True)
class DatasetManifest:
    root: Path
    records: tuple  # (relative path, label)
    phrases: dict = field(default_factory=dict)  # relative path -> tuple of phrases

    @property
    def classes(self) -> tuple:
        return tuple(sorted({label for _, label in self.records}))

    @property
    def counts(self) -> dict:
        c = Counter(label for _, label in self.records)
        return {k: c[k] for k in self.classes}

    def label_indices(self, classes=None) -> np.ndarray:
        table = {c: i for i, c in enumerate(classes or self.classes)}
        return np.array([table[label] for _, label in self.records], dtype=np.int64)

    def phrase_sets(self) -> list:
        return [self.phrases.get(path, ()) for path, _ in self.records]

    def image_path(self, rel: str) -> Path:
        return self.root / rel

    def load_image(self, rel: str) -> np.ndarray:
        return read_ppm(self.image_path(rel))

    def subset(self, records) -> "DatasetManifest":
        keep = {p for p, _ in records}
        return replace(
            self, records=tuple(records), phrases={p: v for p, v in self.phrases.items() if p in keep}
        )


def _read_csv(path: Path, header: tuple) -> list:
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise DataError(f"{path}: file not found") from exc
    except UnicodeDecodeError as exc:
        raise DataError(f"{path}: not valid UTF-8") from exc
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(c.strip() for c in rows[0]) != header:
        got = rows[0] if rows else []
        raise DataError(f"{path}: expected header {','.join(header)}, got {','.join(got)}")
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header) or any(not c.strip() for c in row):
            raise DataError(f"{path}:{lineno}: expected {len(header)} non-empty fields, got {row}")
        out.append((lineno, tuple(c.strip() for c in row)))
    return out


def load_manifest(labels_csv, phrases_csv=None, root=None, check_images: bool = True) -> DatasetManifest:
    """Read and validate ``path,label`` (and optionally ``path,phrase``) CSV files.

    Image paths are relative to ``root`` (default: the labels file's directory).
    """
    labels_csv = Path(labels_csv)
    root = Path(root) if root is not None else labels_csv.parent
    seen, labels = {}, {}
    records = []
    for lineno, (rel, label) in _read_csv(labels_csv, ("path", "label")):
        if (rel, label) in seen:
            raise DataError(
                f"{labels_csv}:{lineno}: duplicate row {rel},{label} (first seen on line {seen[rel, label]})"
            )
        if rel in labels:
            raise DataError(f"{labels_csv}:{lineno}: {rel} already labelled {labels[rel]!r}")
        seen[rel, label] = lineno
        labels[rel] = label
        img = root / rel
        if not img.is_file():
            raise DataError(f"{labels_csv}:{lineno}: image file {img} does not exist")
        if check_images:
            try:
                read_ppm(img)
            except FormatError as exc:
                raise DataError(f"{labels_csv}:{lineno}: cannot decode {img}: {exc}") from exc
        records.append((rel, label))
    if not records:
        raise DataError(f"{labels_csv}: no records")

    phrases: dict = {}
    if phrases_csv is not None:
        phrases_csv = Path(phrases_csv)
        pseen = {}
        for lineno, (rel, phrase) in _read_csv(phrases_csv, ("path", "phrase")):
            if (rel, phrase) in pseen:
                raise DataError(
                    f"{phrases_csv}:{lineno}: duplicate row {rel},{phrase} (first seen on line {pseen[rel, phrase]})"
                )
            if rel not in labels:
                raise DataError(f"{phrases_csv}:{lineno}: {rel} is not in the labels file")
            pseen[rel, phrase] = lineno
            phrases.setdefault(rel, []).append(phrase)
        phrases = {k: tuple(v) for k, v in phrases.items()}
    return DatasetManifest(root, tuple(records), phrases)


def subsample(manifest: DatasetManifest, per_class: int = 100, top_classes: int = 200, seed: int = 0):
    """Keep the ``top_classes`` largest classes (ties by name), then up to
    ``per_class`` images from each, drawn without replacement."""
    if per_class < 1 or top_classes < 1:
        raise ConfigError("per_class and top_classes must be >= 1")
    counts = manifest.counts
    ranked = sorted(counts, key=lambda c: (-counts[c], c))[:top_classes]
    rng = np.random.default_rng(seed)
    keep = []
    for cls in sorted(ranked):
        members = [r for r in manifest.records if r[1] == cls]
        if len(members) > per_class:
            idx = np.sort(rng.choice(len(members), size=per_class, replace=False))
            members = [members[i] for i in idx]
        keep.extend(members)
    return manifest.subset(keep)


def split(manifest: DatasetManifest, test_fraction: float = 0.2, seed: int = 0):
    """Per-class seeded split. Returns ``(train, test)`` manifests."""
    if not 0 <= test_fraction < 1:
        raise ConfigError("test_fraction must be in [0, 1)")
    rng = np.random.default_rng(seed)
    train, test = [], []
    for cls in manifest.classes:
        members = [r for r in manifest.records if r[1] == cls]
        n_test = min(int(round(len(members) * test_fraction)), len(members) - 1)
        perm = rng.permutation(len(members))
        test_idx = set(perm[:n_test].tolist())
        for i, r in enumerate(members):
            (test if i in test_idx else train).append(r)
    return manifest.subset(train), manifest.subset(test)


def texture(kind: str, size: int, rng: np.random.Generator, noise: float = 0.05) -> np.ndarray:
    """One (size, size, 3) sample of a synthetic texture family, values in [0, 1]."""
    if kind not in SYNTHETIC_KINDS:
        raise ConfigError(f"unknown synthetic kind {kind!r}; choose from {SYNTHETIC_KINDS}")
    if size < 16:
        raise ConfigError("synthetic images must be at least 16 pixels wide")
    period = rng.uniform(4.0, 8.0)
    phase = rng.uniform(0.0, 2 * np.pi, size=2)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    u = 2 * np.pi * xx / period + phase[0]
    v = 2 * np.pi * yy / period + phase[1]
    if kind == "stripes_v":
        g = 0.5 + 0.5 * np.sin(u)
    elif kind == "stripes_h":
        g = 0.5 + 0.5 * np.sin(v)
    elif kind == "checker":
        g = (np.sin(u) * np.sin(v) > 0).astype(np.float64)
    else:
        # distance to the nearest lattice point, in pixels
        dx = (u / (2 * np.pi)) % 1.0 - 0.5
        dy = (v / (2 * np.pi)) % 1.0 - 0.5
        d2 = (dx * dx + dy * dy) * period**2
        g = np.exp(-d2 / (2 * (period / 6) ** 2))
    if noise > 0:
        g = g + rng.normal(0.0, noise, size=g.shape)
    g = np.clip(g, 0.0, 1.0)
    return np.repeat(g[:, :, None], 3, axis=2)


def make_synthetic(
    out_dir,
    kinds=SYNTHETIC_KINDS,
    count: int = 125,
    size: int = 64,
    noise: float = 0.05,
    seed: int = 0,
) -> DatasetManifest:
    """Write ``count`` PPM images per kind plus ``labels.csv`` and ``phrases.csv``."""
    out_dir = Path(out_dir)
    if count < 1:
        raise ConfigError("count must be >= 1")
    kinds = tuple(kinds)
    for k in kinds:
        if k not in SYNTHETIC_KINDS:
            raise ConfigError(f"unknown synthetic kind {k!r}; choose from {SYNTHETIC_KINDS}")
    labels = ["path,label"]
    phrases = ["path,phrase"]
    records, phrase_map = [], {}
    for ki, kind in enumerate(kinds):
        rng = np.random.default_rng([seed, ki])
        for i in range(count):
            rel = f"images/{kind}_{i:04d}.ppm"
            atomic_write(out_dir / rel, encode_ppm(texture(kind, size, rng, noise)))
            labels.append(f"{rel},{kind}")
            phrases.extend(f"{rel},{p}" for p in SYNTHETIC_PHRASES[kind])
            records.append((rel, kind))
            phrase_map[rel] = SYNTHETIC_PHRASES[kind]
    atomic_write(out_dir / "labels.csv", "\n".join(labels) + "\n")
    atomic_write(out_dir / "phrases.csv", "\n".join(phrases) + "\n")
    return DatasetManifest(out_dir, tuple(records), phrase_map)

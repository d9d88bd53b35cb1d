"""Phrase clouds: greedy spiral layout and a bitmap-font raster."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _font8x8
from .errors import ConfigError

DEFAULT_K = 20
MIN_FONT = 10
MAX_FONT = 36
MIN_CANVAS = 64
DEFAULT_CANVAS = (480, 360)


@dataclass(frozen=True)
class PlacedPhrase:
    phrase: str
    probability: float
    font: int
    x: int  # top-left
    y: int
    w: int
    h: int

    def overlaps(self, other: "PlacedPhrase") -> bool:
        return (
            self.x < other.x + other.w
            and other.x < self.x + self.w
            and self.y < other.y + other.h
            and other.y < self.y + self.h
        )


@dataclass
class PhraseCloudLayout:
    width: int
    height: int
    items: list = field(default_factory=list)
    dropped: list = field(default_factory=list)

    def to_json(self) -> str:
        doc = {
            "canvas": {"width": self.width, "height": self.height},
            "items": [asdict(it) for it in self.items],
            "dropped": list(self.dropped),
        }
        return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"


def _round(v: float) -> int:
    return int(math.floor(v + 0.5))


def glyph_advance(font_size: int) -> int:
    return _round(0.6 * font_size)


def measure_text(phrase: str, font_size: int) -> tuple[int, int]:
    """Box ``(width, height)`` of ``phrase`` at ``font_size``, including the 2px padding."""
    if not phrase.strip():
        raise ConfigError("cannot measure an empty phrase")
    return len(phrase) * glyph_advance(font_size) + 2, font_size + 2


def font_sizes(probs) -> list[int]:
    """Affine map of probabilities onto [MIN_FONT, MAX_FONT]; all MAX_FONT when they are equal."""
    probs = [float(p) for p in probs]
    if not probs:
        return []
    lo, hi = min(probs), max(probs)
    if hi == lo:
        return [MAX_FONT] * len(probs)
    return [_round(MIN_FONT + (MAX_FONT - MIN_FONT) * (p - lo) / (hi - lo + 1e-12)) for p in probs]


def layout_cloud(scores, k: int = DEFAULT_K, canvas=DEFAULT_CANVAS, seed: int = 0) -> PhraseCloudLayout:
    """Place the top-``k`` phrases, most likely first, on an Archimedean spiral.

    Each phrase takes the first spiral position (from the canvas center
    outwards) where its box lies inside the canvas and touches no placed box.
    Phrases that fit nowhere are listed in ``layout.dropped``.
    """
    width, height = (int(v) for v in canvas)
    if width < MIN_CANVAS or height < MIN_CANVAS:
        raise ConfigError(f"canvas must be at least {MIN_CANVAS}x{MIN_CANVAS}, got {width}x{height}")
    if k < 1:
        raise ConfigError("k must be >= 1")
    scores = [(str(p), float(q)) for p, q in scores]
    for phrase, q in scores:
        if not phrase.strip():
            raise ConfigError("empty phrase in score list")
        if not 0.0 <= q <= 1.0:
            raise ConfigError(f"probability {q} for {phrase!r} is outside [0, 1]")
    top = sorted(scores, key=lambda t: -t[1])[:k]
    sizes = font_sizes([q for _, q in top])

    layout = PhraseCloudLayout(width, height)
    theta0 = float(np.random.default_rng(seed).uniform(0.0, 2 * math.pi))
    cx, cy = width / 2, height / 2
    aspect = height / width
    r_max = math.hypot(width, height) / 2
    for (phrase, q), size in zip(top, sizes):
        w, h = measure_text(phrase, size)
        spot = _spiral_spot(layout.items, w, h, width, height, cx, cy, aspect, theta0, r_max)
        if spot is None:
            layout.dropped.append(phrase)
            continue
        layout.items.append(PlacedPhrase(phrase, q, size, spot[0], spot[1], w, h))
    return layout


def _spiral_spot(placed, w, h, width, height, cx, cy, aspect, theta0, r_max, pitch=1.5):
    if w > width or h > height:
        return None
    t = 0.0
    while True:
        r = pitch * t
        if r > r_max:
            return None
        px = cx + r * math.cos(theta0 + t)
        py = cy + aspect * r * math.sin(theta0 + t)
        x, y = _round(px - w / 2), _round(py - h / 2)
        if 0 <= x and x + w <= width and 0 <= y and y + h <= height:
            cand = PlacedPhrase("", 0.0, 0, x, y, w, h)
            if not any(cand.overlaps(p) for p in placed):
                return x, y
        # roughly one pixel of arc per step
        t += 1.0 / max(r, 1.0)


def _glyph_bitmap(ch: str) -> np.ndarray:
    code = ord(ch) - _font8x8.FIRST_CODE
    rows = _font8x8.GLYPHS[code] if 0 <= code < len(_font8x8.GLYPHS) else _font8x8.FALLBACK
    return np.unpackbits(np.frombuffer(rows, dtype=np.uint8)).reshape(8, 8).astype(bool)


def render_cloud(layout: PhraseCloudLayout) -> np.ndarray:
    """White (H, W, 3) uint8 canvas with every placed phrase drawn in black."""
    img = np.full((layout.height, layout.width, 3), 255, dtype=np.uint8)
    for item in layout.items:
        adv = glyph_advance(item.font)
        rows = np.arange(item.font) * 8 // item.font
        cols = np.arange(adv) * 8 // adv
        for i, ch in enumerate(item.phrase):
            cell = _glyph_bitmap(ch)[np.ix_(rows, cols)]
            top, left = item.y + 1, item.x + 1 + i * adv
            region = img[top : top + item.font, left : left + adv]
            region[cell] = 0
    return img

#!/usr/bin/env python3
"""
Synthetic handwriting generator.

Glyphs are procedural: every character owns a small set of strokes drawn
from a generator seeded by its code point, so a character looks the same
in every sample while styles vary per line (slant, stroke width,
baseline jitter, spacing).

Sample images are ink maps: 0 is paper, larger values are ink. Files on
disk store ``255 - ink`` (dark ink on white paper) and the model sees
``(255 - ink) / 255``.
"""
import logging
import string
from dataclasses import dataclass

import numpy as np
from PIL import Image, ImageDraw

from ..lib.errors import ParameterError
from ..lib.rng import RngStreams
from ..tokens import TokenSequence

log = logging.getLogger(__name__)

DIGITS = string.digits

PAGE_COLUMNS = {"single_page": 1, "double_page": 2, "triple_page": 3}


def synth_alphabet(cfg):
    """Characters a generator can emit: the alphabet plus page digits."""
    return "".join(sorted(set(cfg.alphabet) | set(DIGITS)))


@dataclass
class SyntheticSample:
    image: np.ndarray
    label: TokenSequence
    level: str
    seed: int
    index: int

    def model_input(self):
        return ink_to_input(self.image)


@dataclass
class LineStyle:
    slant: float
    stroke: int
    jitter: float
    spacing: int

    @classmethod
    def draw(cls, cfg, rng):
        return cls(
            slant=float(rng.uniform(cfg.slant[0], cfg.slant[1])),
            stroke=int(rng.integers(cfg.stroke_width[0],
                                    cfg.stroke_width[1] + 1)),
            jitter=float(cfg.baseline_jitter),
            spacing=int(rng.integers(cfg.spacing[0], cfg.spacing[1] + 1)),
        )


def glyph_strokes(ch):
    """Polylines in the unit box for character ch."""
    rng = np.random.default_rng(ord(ch) + 1009)
    strokes = []
    for _ in range(2 + int(rng.integers(0, 3))):
        n = 2 + int(rng.integers(0, 2))
        strokes.append(rng.uniform(0.1, 0.9, size=(n, 2)))
    return strokes


def ink_to_input(ink):
    """Ink map [H, W] -> model input [3, H, W] in [0, 1], paper = 1."""
    gray = (255.0 - np.asarray(ink, dtype=np.float64)) / 255.0
    return np.repeat(gray[None], 3, axis=0)


def render_line(text, height, width, style, rng):
    """Draw text into a height x width ink map."""
    img = Image.new("L", (width, height), 0)
    draw = ImageDraw.Draw(img)
    margin = 4
    gh = height * 0.7
    gw = height * 0.5
    spacing = float(style.spacing)
    needed = len(text) * (gw + spacing)
    avail = width - 2 * margin
    if needed > avail:
        shrink = avail / needed
        gw *= shrink
        spacing *= shrink
    x = float(margin)
    top = (height - gh) / 2.0
    for ch in text:
        if ch == " ":
            x += 0.6 * gw + spacing
            continue
        dy = float(rng.normal(0.0, style.jitter)) if style.jitter else 0.0
        for stroke in glyph_strokes(ch):
            pts = [
                (x + px * gw, top + dy + py * gh) for px, py in stroke
            ]
            draw.line(pts, fill=255, width=style.stroke)
        x += gw + spacing
    if style.slant:
        img = img.transform(
            (width, height),
            Image.Transform.AFFINE,
            (1.0, style.slant, -style.slant * height / 2.0, 0.0, 1.0, 0.0),
            resample=Image.Resampling.BILINEAR,
        )
    return np.asarray(img, dtype=np.uint8)


def random_words(rng, alphabet, min_chars, max_chars):
    """Letters with occasional single spaces, never at either end."""
    n = int(rng.integers(min_chars, max_chars + 1))
    letters = list(alphabet)
    out = []
    for i in range(n):
        if 0 < i < n - 1 and out[-1] != " " and rng.random() < 0.15:
            out.append(" ")
        else:
            out.append(letters[int(rng.integers(0, len(letters)))])
    return "".join(out)


def _line_sample(cfg, rng):
    text = random_words(rng, cfg.alphabet, cfg.min_chars, cfg.max_chars)
    style = LineStyle.draw(cfg, rng)
    image = render_line(text, cfg.line_height, cfg.line_width, style, rng)
    return image, text


def _paragraph_sample(cfg, rng):
    lo, hi = cfg.paragraph_lines
    k = int(rng.integers(lo, hi + 1))
    row_h = cfg.paragraph_height // k
    image = np.zeros((cfg.paragraph_height, cfg.paragraph_width), np.uint8)
    lines = []
    style = LineStyle.draw(cfg, rng)
    for i in range(k):
        text = random_words(rng, cfg.alphabet, cfg.min_chars, cfg.max_chars)
        image[i * row_h:(i + 1) * row_h] = render_line(
            text, row_h, cfg.paragraph_width, style, rng
        )
        lines.append(text)
    return image, "\n".join(lines)


def _page_sample(cfg, rng, columns):
    slot = cfg.line_height
    height = cfg.page_height
    col_w = cfg.page_width
    image = np.zeros((height, col_w * columns), np.uint8)
    n_slots = height // slot
    style = LineStyle.draw(cfg, rng)
    margin_w = col_w // 4
    pages = []

    def put(text, row, x0, x1):
        image[row * slot:(row + 1) * slot, x0:x1] = np.maximum(
            image[row * slot:(row + 1) * slot, x0:x1],
            render_line(text, slot, x1 - x0, style, rng),
        )

    for c in range(columns):
        x0 = c * col_w
        number = str(int(rng.integers(1, 100)))
        put(number, 0, x0 + col_w - margin_w, x0 + col_w)
        row = 1
        sections = []
        n_sec = int(rng.integers(cfg.sections_per_page[0],
                                 cfg.sections_per_page[1] + 1))
        for _ in range(max(1, n_sec)):
            if row >= n_slots:
                break
            n_lines = int(rng.integers(cfg.lines_per_body[0],
                                       cfg.lines_per_body[1] + 1))
            n_lines = max(1, min(n_lines, n_slots - row))
            section = "<S>"
            if rng.random() < cfg.annotation_probability:
                note = random_words(rng, cfg.alphabet, 1,
                                    max(1, cfg.min_chars))
                put(note, row, x0, x0 + margin_w)
                section += "<A>{}</A>".format(note)
            body = []
            for i in range(n_lines):
                text = random_words(
                    rng, cfg.alphabet, cfg.min_chars, cfg.max_chars
                )
                put(text, row + i, x0 + margin_w, x0 + col_w)
                body.append(text)
            row += n_lines
            section += "<B>{}</B></S>".format("\n".join(body))
            sections.append(section)
        pages.append("<P><N>{}</N>{}</P>".format(number, "".join(sections)))
    return image, "<D>{}</D>".format("".join(pages))


def generate_sample(cfg, level, seed, index):
    rng = RngStreams(seed).stream("synth", level, index)
    if level == "line":
        image, label = _line_sample(cfg, rng)
    elif level == "paragraph":
        image, label = _paragraph_sample(cfg, rng)
    elif level in PAGE_COLUMNS:
        image, label = _page_sample(cfg, rng, PAGE_COLUMNS[level])
    else:
        raise ParameterError("unknown level {!r}".format(level))
    return SyntheticSample(
        image, TokenSequence.from_text(label), level, int(seed), int(index)
    )


def generate_synthetic(cfg, level, count, seed, start=0):
    """count samples of the given level; sample i depends on (seed, i) only."""
    if not cfg.alphabet:
        raise ParameterError("synthetic alphabet is empty")
    if count < 0:
        raise ParameterError("count must be >= 0")
    samples = [
        generate_sample(cfg, level, seed, start + i) for i in range(count)
    ]
    log.debug("generated %d %s samples (seed %d)", count, level, seed)
    return samples


def add_noise(image, sigma, rng):
    """Additive Gaussian pixel noise on a [0, 1] image, clipped."""
    if sigma <= 0:
        return image
    noisy = image + rng.normal(0.0, sigma, size=np.shape(image))
    return np.clip(noisy, 0.0, 1.0)

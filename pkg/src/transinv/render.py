"""Grayscale raster output: sensitivity heatmaps and radial profile plots.

Everything is written as binary PGM (P5); PNG twins are optional and share
the exact pixel data.  Heatmap convention follows the maps themselves:
whiter means less sensitive, so a perfectly invariant model renders as a
blank white square.  All drawing is integer arithmetic, so identical inputs
produce identical bytes.
"""

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .invariance import GRID_SIDE


def write_pgm(path, img):
    """Binary PGM, maxval 255."""
    img = np.asarray(img, dtype=np.uint8)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-d grayscale image, got shape {img.shape}")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5" or len(parts) != 4:
        raise ValueError(f"{path}: not a binary PGM")
    w, h = (int(v) for v in parts[1].split())
    if parts[2] != b"255":
        raise ValueError(f"{path}: maxval {parts[2].decode()!r}, expected 255")
    img = np.frombuffer(parts[3][:w * h], dtype=np.uint8)
    if img.size != w * h:
        raise ValueError(f"{path}: truncated pixel data")
    return img.reshape(h, w).copy()


def write_png_gray(path, img):
    """8-bit grayscale PNG, no external encoder."""
    img = np.asarray(img, dtype=np.uint8)
    h, w = img.shape

    def chunk(tag, data):
        body = tag + data
        return struct.pack(">I", len(data)) + body + struct.pack(">I", zlib.crc32(body))

    raw = b"".join(b"\x00" + img[y].tobytes() for y in range(h))  # filter 0 rows
    out = b"\x89PNG\r\n\x1a\n"
    out += chunk(b"IHDR", struct.pack(">IIBBBBB", w, h, 8, 0, 0, 0, 0))
    out += chunk(b"IDAT", zlib.compress(raw, 9))
    out += chunk(b"IEND", b"")
    with open(path, "wb") as fh:
        fh.write(out)


@dataclass
class HeatmapStyle:
    scale_max: float = 1.0      # distance that maps to full black
    upscale: int = 16           # pixel replication factor
    annotate_center: bool = False

    def __post_init__(self):
        if self.scale_max <= 0:
            raise ValueError(f"scale_max must be > 0, got {self.scale_max}")
        if self.upscale < 1:
            raise ValueError(f"upscale must be >= 1, got {self.upscale}")


def heatmap_pixels(smap, style=None):
    """Map grid -> u8 pixels: gray = round(255 * (1 - min(d / scale_max, 1)))."""
    style = style or HeatmapStyle()
    d = np.clip(smap.grid / style.scale_max, 0.0, 1.0)
    gray = np.rint(255.0 * (1.0 - d)).astype(np.uint8)
    img = np.repeat(np.repeat(gray, style.upscale, axis=0), style.upscale, axis=1)
    if style.annotate_center:
        u = style.upscale
        c0 = (GRID_SIDE // 2) * u
        img[c0:c0 + u, c0] = 128
        img[c0:c0 + u, c0 + u - 1] = 128
        img[c0, c0:c0 + u] = 128
        img[c0 + u - 1, c0:c0 + u] = 128
    return img


def render_heatmap(smap, path, style=None, png=False):
    """Write the map as PGM (and optionally a PNG with identical pixels)."""
    img = heatmap_pixels(smap, style)
    write_pgm(path, img)
    if png:
        write_png_gray(_sibling(path, ".png"), img)


def _sibling(path, ext):
    s = str(path)
    dot = s.rfind(".")
    return (s[:dot] if dot > s.rfind("/") else s) + ext


# ---------------------------------------------------------------------------
# tiny 5x7 bitmap font (case-folded) for axis labels and legends

_GLYPHS = {
    "a": "01110 10001 10001 11111 10001 10001 10001",
    "b": "11110 10001 10001 11110 10001 10001 11110",
    "c": "01110 10001 10000 10000 10000 10001 01110",
    "d": "11110 10001 10001 10001 10001 10001 11110",
    "e": "11111 10000 10000 11110 10000 10000 11111",
    "f": "11111 10000 10000 11110 10000 10000 10000",
    "g": "01110 10001 10000 10111 10001 10001 01111",
    "h": "10001 10001 10001 11111 10001 10001 10001",
    "i": "01110 00100 00100 00100 00100 00100 01110",
    "j": "00111 00010 00010 00010 00010 10010 01100",
    "k": "10001 10010 10100 11000 10100 10010 10001",
    "l": "10000 10000 10000 10000 10000 10000 11111",
    "m": "10001 11011 10101 10101 10001 10001 10001",
    "n": "10001 11001 10101 10011 10001 10001 10001",
    "o": "01110 10001 10001 10001 10001 10001 01110",
    "p": "11110 10001 10001 11110 10000 10000 10000",
    "q": "01110 10001 10001 10001 10101 10010 01101",
    "r": "11110 10001 10001 11110 10100 10010 10001",
    "s": "01111 10000 10000 01110 00001 00001 11110",
    "t": "11111 00100 00100 00100 00100 00100 00100",
    "u": "10001 10001 10001 10001 10001 10001 01110",
    "v": "10001 10001 10001 10001 10001 01010 00100",
    "w": "10001 10001 10001 10101 10101 11011 10001",
    "x": "10001 10001 01010 00100 01010 10001 10001",
    "y": "10001 10001 01010 00100 00100 00100 00100",
    "z": "11111 00001 00010 00100 01000 10000 11111",
    "0": "01110 10001 10011 10101 11001 10001 01110",
    "1": "00100 01100 00100 00100 00100 00100 01110",
    "2": "01110 10001 00001 00010 00100 01000 11111",
    "3": "11111 00010 00100 00010 00001 10001 01110",
    "4": "00010 00110 01010 10010 11111 00010 00010",
    "5": "11111 10000 11110 00001 00001 10001 01110",
    "6": "00110 01000 10000 11110 10001 10001 01110",
    "7": "11111 00001 00010 00100 01000 01000 01000",
    "8": "01110 10001 10001 01110 10001 10001 01110",
    "9": "01110 10001 10001 01111 00001 00010 01100",
    "-": "00000 00000 00000 01110 00000 00000 00000",
    ".": "00000 00000 00000 00000 00000 01100 01100",
    "_": "00000 00000 00000 00000 00000 00000 11111",
    "/": "00001 00001 00010 00100 01000 10000 10000",
    " ": "00000 00000 00000 00000 00000 00000 00000",
}
FONT = {ch: [row for row in rows.split()] for ch, rows in _GLYPHS.items()}


def draw_text(img, x, y, text, gray=0):
    """Stamp text at (x, y) top-left, 6 px advance; unknown chars are blank."""
    for ch in str(text).lower():
        glyph = FONT.get(ch, FONT[" "])
        for gy, row in enumerate(glyph):
            for gx, bit in enumerate(row):
                if bit == "1" and 0 <= y + gy < img.shape[0] and 0 <= x + gx < img.shape[1]:
                    img[y + gy, x + gx] = gray
        x += 6


def _draw_line(img, x0, y0, x1, y1, gray=0, dashed=False):
    # Bresenham; the dash pattern counts steps, 5 on then 3 off
    dx = abs(x1 - x0)
    dy = -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    step = 0
    while True:
        if not dashed or (step % 8) < 5:
            if 0 <= y0 < img.shape[0] and 0 <= x0 < img.shape[1]:
                img[y0, x0] = gray
        if x0 == x1 and y0 == y1:
            break
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy
        step += 1


def _marker(img, x, y, gray):
    img[max(y - 1, 0):y + 2, max(x - 1, 0):x + 2] = gray


_LINE_GRAYS = (0, 90, 150, 60, 120, 30, 180, 105, 75, 135)


def render_profiles(named_profiles, path, png=False, width=720, height=420):
    """Plot radial profiles as polylines and write the numbers next to them.

    Names ending in '-aug' draw dashed, everything else solid.  A combined
    CSV (radius plus one column per profile) lands beside the image so the
    plot is never the only artifact.  Returns (pgm_path, csv_path).
    """
    if not named_profiles:
        raise ValueError("nothing to plot")
    radii = named_profiles[0][1].radii
    for name, p in named_profiles:
        if p.radii != radii:
            raise ValueError(f"profile {name!r} has a different radius axis")

    img = np.full((height, width), 255, dtype=np.uint8)
    x0, x1 = 56, width - 20
    y0, y1 = 20, height - 44
    top = max(max(p.means) for _, p in named_profiles)
    ymax = max(0.25, np.ceil(top / 0.25) * 0.25)

    def px(r):
        return x0 + round((x1 - x0) * (r - radii[0]) / max(radii[-1] - radii[0], 1))

    def py(v):
        return y1 - round((y1 - y0) * v / ymax)

    _draw_line(img, x0, y0, x0, y1)
    _draw_line(img, x0, y1, x1, y1)
    for i in range(5):
        v = ymax * i / 4
        y = py(v)
        _draw_line(img, x0 - 3, y, x0, y)
        label = f"{v:.2f}"
        draw_text(img, x0 - 6 - 6 * len(label), y - 3, label)
    for r in radii:
        x = px(r)
        _draw_line(img, x, y1, x, y1 + 3)
        if r % 2 == 0:
            draw_text(img, x - 3 * len(str(r)), y1 + 6, str(r))
    draw_text(img, (x0 + x1) // 2 - 18, height - 12, "radius")
    draw_text(img, x0 + 4, y0 - 12 if y0 >= 12 else y0, "normalized distance")

    for k, (name, p) in enumerate(named_profiles):
        gray = _LINE_GRAYS[k % len(_LINE_GRAYS)]
        dashed = name.endswith("-aug")
        pts = [(px(r), py(v)) for r, v in zip(p.radii, p.means)]
        for (ax, ay), (bx, by) in zip(pts, pts[1:]):
            _draw_line(img, ax, ay, bx, by, gray=gray, dashed=dashed)
        for (ax, ay) in pts:
            _marker(img, ax, ay, gray)

    # legend, top right
    lw = max(len(n) for n, _ in named_profiles) * 6 + 34
    lx = x1 - lw - 4
    ly = y0 + 4
    for k, (name, _) in enumerate(named_profiles):
        gray = _LINE_GRAYS[k % len(_LINE_GRAYS)]
        yy = ly + 10 * k
        _draw_line(img, lx, yy + 3, lx + 22, yy + 3, gray=gray,
                   dashed=name.endswith("-aug"))
        draw_text(img, lx + 28, yy, name)

    write_pgm(path, img)
    csv_path = _sibling(path, ".csv")
    with open(csv_path, "w", newline="") as fh:
        fh.write("radius," + ",".join(n for n, _ in named_profiles) + "\n")
        for i, r in enumerate(radii):
            fh.write(str(r) + "," +
                     ",".join(f"{p.means[i]:.6f}" for _, p in named_profiles) + "\n")
    if png:
        write_png_gray(_sibling(path, ".png"), img)
    return path, csv_path

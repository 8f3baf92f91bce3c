"""Minimal software-rendered line charts, written as PNG via the image export
path. No plotting dependency: a float image buffer, polyline rasterization,
and a small 5x7 bitmap font for axis labels.
"""

from __future__ import annotations

import numpy as np

from .dataio import save_png

# 5x7 glyphs, 5 column bytes each, LSB = top row. Digits, minus, dot, and the
# uppercase letters used in chart labels.
_FONT = {
    "0": (0x3E, 0x51, 0x49, 0x45, 0x3E), "1": (0x00, 0x42, 0x7F, 0x40, 0x00),
    "2": (0x42, 0x61, 0x51, 0x49, 0x46), "3": (0x21, 0x41, 0x45, 0x4B, 0x31),
    "4": (0x18, 0x14, 0x12, 0x7F, 0x10), "5": (0x27, 0x45, 0x45, 0x45, 0x39),
    "6": (0x3C, 0x4A, 0x49, 0x49, 0x30), "7": (0x01, 0x71, 0x09, 0x05, 0x03),
    "8": (0x36, 0x49, 0x49, 0x49, 0x36), "9": (0x06, 0x49, 0x49, 0x29, 0x1E),
    "-": (0x08, 0x08, 0x08, 0x08, 0x08), ".": (0x00, 0x60, 0x60, 0x00, 0x00),
    "+": (0x08, 0x08, 0x3E, 0x08, 0x08), " ": (0x00, 0x00, 0x00, 0x00, 0x00),
    "E": (0x7F, 0x49, 0x49, 0x49, 0x41), "A": (0x7E, 0x11, 0x11, 0x11, 0x7E),
    "B": (0x7F, 0x49, 0x49, 0x49, 0x36), "C": (0x3E, 0x41, 0x41, 0x41, 0x22),
    "D": (0x7F, 0x41, 0x41, 0x22, 0x1C), "F": (0x7F, 0x09, 0x09, 0x09, 0x01),
    "G": (0x3E, 0x41, 0x49, 0x49, 0x7A), "H": (0x7F, 0x08, 0x08, 0x08, 0x7F),
    "I": (0x00, 0x41, 0x7F, 0x41, 0x00), "J": (0x20, 0x40, 0x41, 0x3F, 0x01),
    "K": (0x7F, 0x08, 0x14, 0x22, 0x41), "L": (0x7F, 0x40, 0x40, 0x40, 0x40),
    "M": (0x7F, 0x02, 0x0C, 0x02, 0x7F), "N": (0x7F, 0x04, 0x08, 0x10, 0x7F),
    "O": (0x3E, 0x41, 0x41, 0x41, 0x3E), "P": (0x7F, 0x09, 0x09, 0x09, 0x06),
    "Q": (0x3E, 0x41, 0x51, 0x21, 0x5E), "R": (0x7F, 0x09, 0x19, 0x29, 0x46),
    "S": (0x46, 0x49, 0x49, 0x49, 0x31), "T": (0x01, 0x01, 0x7F, 0x01, 0x01),
    "U": (0x3F, 0x40, 0x40, 0x40, 0x3F), "V": (0x1F, 0x20, 0x40, 0x20, 0x1F),
    "W": (0x3F, 0x40, 0x38, 0x40, 0x3F), "X": (0x63, 0x14, 0x08, 0x14, 0x63),
    "Y": (0x07, 0x08, 0x70, 0x08, 0x07), "Z": (0x61, 0x51, 0x49, 0x45, 0x43),
}

PALETTE = [(0.85, 0.2, 0.2), (0.2, 0.4, 0.85), (0.15, 0.65, 0.3),
           (0.8, 0.55, 0.1), (0.5, 0.25, 0.7), (0.1, 0.6, 0.6)]


class Canvas:
    def __init__(self, width: int, height: int):
        self.img = np.ones((height, width, 3))
        self.h, self.w = height, width

    def pixel(self, x: int, y: int, color) -> None:
        if 0 <= x < self.w and 0 <= y < self.h:
            self.img[y, x] = color

    def line(self, x0, y0, x1, y1, color) -> None:
        n = int(max(abs(x1 - x0), abs(y1 - y0), 1)) * 2 + 1
        for f in np.linspace(0.0, 1.0, n):
            self.pixel(int(round(x0 + f * (x1 - x0))),
                       int(round(y0 + f * (y1 - y0))), color)

    def text(self, x: int, y: int, s: str, color=(0.1, 0.1, 0.1)) -> None:
        cx = x
        for ch in s.upper():
            cols = _FONT.get(ch, _FONT[" "])
            for i, byte in enumerate(cols):
                for j in range(7):
                    if byte >> j & 1:
                        self.pixel(cx + i, y + j, color)
            cx += 6

    def rect(self, x0, y0, x1, y1, color) -> None:
        self.line(x0, y0, x1, y0, color)
        self.line(x1, y0, x1, y1, color)
        self.line(x1, y1, x0, y1, color)
        self.line(x0, y1, x0, y0, color)


def _format_tick(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1000 or abs(v) < 0.01:
        return f"{v:.1e}".replace("e-0", "e-").replace("e+0", "e+")
    return f"{v:.3g}"


def line_chart(series: list[tuple[str, np.ndarray, np.ndarray]], path,
               title: str = "", xlabel: str = "", ylabel: str = "",
               width: int = 640, height: int = 420) -> None:
    """Render (label, x, y) series as a PNG line chart with axes and legend."""
    cv = Canvas(width, height)
    ml, mr, mt, mb = 62, 16, 28, 40
    x0, x1 = ml, width - mr
    y0, y1 = mt, height - mb

    all_x = np.concatenate([np.asarray(s[1], dtype=np.float64) for s in series])
    all_y = np.concatenate([np.asarray(s[2], dtype=np.float64) for s in series])
    xmin, xmax = float(all_x.min()), float(all_x.max())
    ymin, ymax = float(all_y.min()), float(all_y.max())
    if xmax == xmin:
        xmax = xmin + 1.0
    if ymax == ymin:
        ymax = ymin + 1.0
    pad = 0.05 * (ymax - ymin)
    ymin, ymax = ymin - pad, ymax + pad

    def sx(v):
        return x0 + (v - xmin) / (xmax - xmin) * (x1 - x0)

    def sy(v):
        return y1 - (v - ymin) / (ymax - ymin) * (y1 - y0)

    grid_c = (0.85, 0.85, 0.85)
    axis_c = (0.25, 0.25, 0.25)
    for f in np.linspace(0.0, 1.0, 5):
        gx = int(round(x0 + f * (x1 - x0)))
        gy = int(round(y0 + f * (y1 - y0)))
        cv.line(gx, y0, gx, y1, grid_c)
        cv.line(x0, gy, x1, gy, grid_c)
        xv = xmin + f * (xmax - xmin)
        yv = ymax - f * (ymax - ymin)
        cv.text(gx - 12, y1 + 6, _format_tick(xv), axis_c)
        cv.text(6, gy - 3, _format_tick(yv), axis_c)
    cv.rect(x0, y0, x1, y1, axis_c)

    for k, (label, xs, ys) in enumerate(series):
        color = PALETTE[k % len(PALETTE)]
        xs = np.asarray(xs, dtype=np.float64)
        ys = np.asarray(ys, dtype=np.float64)
        for i in range(xs.size - 1):
            cv.line(sx(xs[i]), sy(ys[i]), sx(xs[i + 1]), sy(ys[i + 1]), color)
        ly = y0 + 8 + 12 * k
        cv.line(x1 - 90, ly + 3, x1 - 74, ly + 3, color)
        cv.text(x1 - 70, ly, label[:10], axis_c)

    if title:
        cv.text(ml, 10, title, (0.05, 0.05, 0.05))
    if xlabel:
        cv.text((x0 + x1) // 2 - 3 * len(xlabel), height - 14, xlabel, axis_c)
    if ylabel:
        cv.text(6, y0 - 14, ylabel, axis_c)
    save_png(cv.img, path)

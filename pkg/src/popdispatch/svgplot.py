"""Minimal static SVG line charts. No rendering dependency; pure strings."""

from __future__ import annotations

import math


def _nice_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    span = hi - lo
    step = 10 ** math.floor(math.log10(span / n))
    for mult in (1, 2, 5, 10):
        if span / (step * mult) <= n:
            step *= mult
            break
    first = math.ceil(lo / step) * step
    ticks = []
    v = first
    while v <= hi + 1e-12 * span:
        ticks.append(round(v, 10))
        v += step
    return ticks


class LineChart:
    """One chart: series as polylines, optional horizontal/vertical rules."""

    W, H = 880, 430
    ML, MR, MT, MB = 70, 170, 40, 50
    COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
              "#17becf", "#e377c2")

    def __init__(self, title: str, x_label: str, y_label: str):
        self.title = title
        self.x_label = x_label
        self.y_label = y_label
        self.series: list[tuple[str, list[float], list[float], bool]] = []
        self.hlines: list[tuple[float, str]] = []
        self.vlines: list[tuple[float, str]] = []

    def add_series(self, name: str, xs, ys, dashed: bool = False) -> None:
        xs = [float(v) for v in xs]
        ys = [float(v) for v in ys]
        if len(xs) != len(ys):
            raise ValueError("xs and ys must have equal length")
        self.series.append((name, xs, ys, dashed))

    def add_hline(self, y: float, label: str = "") -> None:
        self.hlines.append((float(y), label))

    def add_vline(self, x: float, label: str = "") -> None:
        self.vlines.append((float(x), label))

    def _bounds(self):
        xs = [v for _, sx, _, _ in self.series for v in sx]
        ys = [v for _, _, sy, _ in self.series for v in sy]
        ys += [y for y, _ in self.hlines if math.isfinite(y)]
        xs += [x for x, _ in self.vlines]
        if not xs or not ys:
            xs, ys = [0.0, 1.0], [0.0, 1.0]
        x0, x1 = min(xs), max(xs)
        y0, y1 = min(ys), max(ys)
        if x1 == x0:
            x1 = x0 + 1.0
        pad = 0.06 * (y1 - y0) or 1.0
        return x0, x1, y0 - pad, y1 + pad

    def render(self) -> str:
        x0, x1, y0, y1 = self._bounds()
        iw = self.W - self.ML - self.MR
        ih = self.H - self.MT - self.MB

        def px(x):
            return self.ML + (x - x0) / (x1 - x0) * iw

        def py(y):
            return self.MT + (1.0 - (y - y0) / (y1 - y0)) * ih

        parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.W}" height="{self.H}" '
            f'viewBox="0 0 {self.W} {self.H}" font-family="sans-serif" font-size="12">',
            f'<rect width="{self.W}" height="{self.H}" fill="white"/>',
            f'<text x="{self.W / 2:.1f}" y="22" text-anchor="middle" font-size="15">'
            f"{self.title}</text>",
            f'<rect x="{self.ML}" y="{self.MT}" width="{iw}" height="{ih}" '
            f'fill="none" stroke="#333"/>',
        ]
        for tx in _nice_ticks(x0, x1):
            X = px(tx)
            parts.append(
                f'<line x1="{X:.1f}" y1="{self.MT + ih}" x2="{X:.1f}" '
                f'y2="{self.MT + ih + 5}" stroke="#333"/>'
            )
            parts.append(
                f'<text x="{X:.1f}" y="{self.MT + ih + 18}" text-anchor="middle">{tx:g}</text>'
            )
        for ty in _nice_ticks(y0, y1):
            Y = py(ty)
            parts.append(
                f'<line x1="{self.ML - 5}" y1="{Y:.1f}" x2="{self.ML}" y2="{Y:.1f}" stroke="#333"/>'
            )
            parts.append(
                f'<text x="{self.ML - 9}" y="{Y + 4:.1f}" text-anchor="end">{ty:g}</text>'
            )
            parts.append(
                f'<line x1="{self.ML}" y1="{Y:.1f}" x2="{self.ML + iw}" y2="{Y:.1f}" '
                f'stroke="#ddd" stroke-width="0.5"/>'
            )
        parts.append(
            f'<text x="{self.ML + iw / 2:.1f}" y="{self.H - 12}" text-anchor="middle">'
            f"{self.x_label}</text>"
        )
        parts.append(
            f'<text x="18" y="{self.MT + ih / 2:.1f}" text-anchor="middle" '
            f'transform="rotate(-90 18 {self.MT + ih / 2:.1f})">{self.y_label}</text>'
        )
        for y, label in self.hlines:
            if not math.isfinite(y):
                continue
            Y = py(y)
            parts.append(
                f'<line x1="{self.ML}" y1="{Y:.1f}" x2="{self.ML + iw}" y2="{Y:.1f}" '
                f'stroke="#888" stroke-dasharray="2,3"/>'
            )
            if label:
                parts.append(
                    f'<text x="{self.ML + iw - 4}" y="{Y - 4:.1f}" text-anchor="end" '
                    f'fill="#666">{label}</text>'
                )
        for x, label in self.vlines:
            X = px(x)
            parts.append(
                f'<line x1="{X:.1f}" y1="{self.MT}" x2="{X:.1f}" y2="{self.MT + ih}" '
                f'stroke="#c33" stroke-dasharray="4,3"/>'
            )
            if label:
                parts.append(
                    f'<text x="{X + 4:.1f}" y="{self.MT + 14}" fill="#c33">{label}</text>'
                )
        for idx, (name, xs, ys, dashed) in enumerate(self.series):
            color = self.COLORS[idx % len(self.COLORS)]
            pts = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in zip(xs, ys))
            dash = ' stroke-dasharray="6,4"' if dashed else ""
            parts.append(
                f'<polyline points="{pts}" fill="none" stroke="{color}" '
                f'stroke-width="1.5"{dash}/>'
            )
            ly = self.MT + 16 * idx + 10
            lx = self.ML + iw + 12
            parts.append(
                f'<line x1="{lx}" y1="{ly}" x2="{lx + 22}" y2="{ly}" stroke="{color}" '
                f'stroke-width="1.5"{dash}/>'
            )
            parts.append(f'<text x="{lx + 27}" y="{ly + 4}">{name}</text>')
        parts.append("</svg>")
        return "\n".join(parts)

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.render())

"""Tiny hand-rolled SVG line/scatter plots.

CSV files are the source of truth; these renderings exist so a run
directory is viewable without any plotting dependency. Every data point
becomes a <circle class="pt"> element, which tests count against the CSV.
"""

from __future__ import annotations

from xml.sax.saxutils import escape

WIDTH = 640
HEIGHT = 400
MARGIN = 56


def _scaler(values: list[float], out_lo: float, out_hi: float):
    lo, hi = min(values), max(values)
    span = hi - lo
    if span == 0:
        span = 1.0
        lo -= 0.5

    def to_px(v: float) -> float:
        return out_lo + (v - lo) / span * (out_hi - out_lo)

    return to_px, lo, hi


def line_plot(
    xs: list[float],
    ys: list[float],
    title: str,
    x_label: str,
    y_label: str,
    marked: list[int] | None = None,
    draw_line: bool = True,
) -> str:
    """Render points (and optionally the connecting polyline); ``marked``
    indices get a highlighted ring."""
    if len(xs) != len(ys) or not xs:
        raise ValueError("line_plot needs equal-length non-empty x/y")
    to_x, x_lo, x_hi = _scaler(list(xs), MARGIN, WIDTH - MARGIN // 2)
    to_y, y_lo, y_hi = _scaler(list(ys), HEIGHT - MARGIN, MARGIN // 2)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH // 2}" y="20" text-anchor="middle" font-size="14">'
        f"{escape(title)}</text>",
        f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - MARGIN // 2}" '
        f'y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<line x1="{MARGIN}" y1="{MARGIN // 2}" x2="{MARGIN}" '
        f'y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<text x="{WIDTH // 2}" y="{HEIGHT - 12}" text-anchor="middle" '
        f'font-size="12">{escape(x_label)}</text>',
        f'<text x="16" y="{HEIGHT // 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 16 {HEIGHT // 2})">{escape(y_label)}</text>',
        f'<text x="{MARGIN}" y="{HEIGHT - MARGIN + 16}" font-size="10" '
        f'text-anchor="middle">{x_lo:.4g}</text>',
        f'<text x="{WIDTH - MARGIN // 2}" y="{HEIGHT - MARGIN + 16}" font-size="10" '
        f'text-anchor="middle">{x_hi:.4g}</text>',
        f'<text x="{MARGIN - 6}" y="{HEIGHT - MARGIN}" font-size="10" '
        f'text-anchor="end">{y_lo:.4g}</text>',
        f'<text x="{MARGIN - 6}" y="{MARGIN // 2 + 4}" font-size="10" '
        f'text-anchor="end">{y_hi:.4g}</text>',
    ]
    if draw_line and len(xs) > 1:
        points = " ".join(f"{to_x(x):.2f},{to_y(y):.2f}" for x, y in zip(xs, ys))
        parts.append(f'<polyline points="{points}" fill="none" stroke="steelblue"/>')
    for i, (x, y) in enumerate(zip(xs, ys)):
        parts.append(
            f'<circle class="pt" cx="{to_x(x):.2f}" cy="{to_y(y):.2f}" r="3" '
            f'fill="steelblue"/>'
        )
    for i in marked or []:
        parts.append(
            f'<circle class="mark" cx="{to_x(xs[i]):.2f}" cy="{to_y(ys[i]):.2f}" '
            f'r="7" fill="none" stroke="crimson" stroke-width="2"/>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"

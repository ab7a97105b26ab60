"""Minimal hand-rolled SVG line charts (no charting dependency).

Three lines per the figure convention: blue = global accuracy, orange =
accuracy excluding the attacked source class, green = attack success rate.
"""
from __future__ import annotations

WIDTH, HEIGHT = 640, 400
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 56, 16, 20, 56

SERIES = (
    ("global_accuracy", "#1f77b4", "global accuracy"),
    ("accuracy_excluding_source", "#ff7f0e", "accuracy excluding source class"),
    ("attack_success", "#2ca02c", "attack success rate"),
)


def _x(round_idx: int, last_round: int) -> float:
    span = WIDTH - MARGIN_L - MARGIN_R
    frac = round_idx / last_round if last_round else 0.0
    return MARGIN_L + frac * span


def _y(value: float) -> float:
    span = HEIGHT - MARGIN_T - MARGIN_B
    return MARGIN_T + (1.0 - value) * span


def render_svg(metrics) -> str:
    """Render round metrics (objects with round_idx + the three series) to SVG text."""
    rows = list(metrics)
    last = rows[-1].round_idx if rows else 1
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
    ]
    # axes
    x0, y0 = MARGIN_L, _y(0.0)
    x1, y1 = WIDTH - MARGIN_R, _y(1.0)
    parts.append(f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>')
    parts.append(f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>')
    for tick in range(6):
        v = tick / 5.0
        ty = _y(v)
        parts.append(f'<line x1="{x0 - 4}" y1="{ty:.1f}" x2="{x0}" y2="{ty:.1f}" stroke="black"/>')
        parts.append(
            f'<text x="{x0 - 8}" y="{ty + 4:.1f}" text-anchor="end">{v:.1f}</text>'
        )
    n_xticks = min(last, 10) or 1
    for tick in range(n_xticks + 1):
        r = round(tick * last / n_xticks)
        tx = _x(r, last)
        parts.append(f'<line x1="{tx:.1f}" y1="{y0}" x2="{tx:.1f}" y2="{y0 + 4}" stroke="black"/>')
        parts.append(f'<text x="{tx:.1f}" y="{y0 + 18}" text-anchor="middle">{r}</text>')
    parts.append(
        f'<text x="{(x0 + x1) / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle">round</text>'
    )

    for attr, color, label in SERIES:
        points = [
            f"{_x(m.round_idx, last):.2f},{_y(getattr(m, attr)):.2f}"
            for m in rows
            if getattr(m, attr) is not None
        ]
        if points:
            parts.append(
                f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                f'points="{" ".join(points)}"/>'
            )
    # legend
    ly = MARGIN_T + 4
    for attr, color, label in SERIES:
        parts.append(
            f'<line x1="{x0 + 10}" y1="{ly}" x2="{x0 + 34}" y2="{ly}" '
            f'stroke="{color}" stroke-width="2"/>'
        )
        parts.append(f'<text x="{x0 + 40}" y="{ly + 4}">{label}</text>')
        ly += 16
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_svg(path, metrics) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(render_svg(metrics))

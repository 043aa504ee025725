"""Minimal SVG output: agent trajectories from rollout CSVs and simple line plots."""

from __future__ import annotations

import csv
from xml.sax.saxutils import escape

COLORS = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
          "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


def read_trajectory_csv(path):
    """Return ``(s, Z)`` with ``Z`` a list of state rows."""
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        zcols = [i for i, h in enumerate(header) if h.startswith("z")]
        s, Z = [], []
        for row in rd:
            s.append(float(row[0]))
            Z.append([float(row[i]) for i in zcols])
    return s, Z


class _Frame:
    def __init__(self, xs, ys, width, height, pad=40):
        self.x0, self.x1 = min(xs), max(xs)
        self.y0, self.y1 = min(ys), max(ys)
        if self.x1 == self.x0:
            self.x0, self.x1 = self.x0 - 1, self.x1 + 1
        if self.y1 == self.y0:
            self.y0, self.y1 = self.y0 - 1, self.y1 + 1
        self.w, self.h, self.pad = width, height, pad

    def __call__(self, x, y):
        px = self.pad + (x - self.x0) / (self.x1 - self.x0) * (self.w - 2 * self.pad)
        py = self.h - self.pad - (y - self.y0) / (self.y1 - self.y0) * (self.h - 2 * self.pad)
        return px, py


def _svg(width, height, body, title=""):
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">\n<rect width="100%" height="100%" fill="white"/>\n')
    if title:
        head += f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>\n'
    return head + "\n".join(body) + "\n</svg>\n"


def trajectories_svg(Z, q=2, dims=(0, 1), targets=None, width=480, height=480, title=""):
    """One polyline per agent, projected onto the coordinates ``dims`` of each block."""
    n = len(Z[0]) // q
    pts = [[(row[i * q + dims[0]], row[i * q + dims[1]]) for row in Z] for i in range(n)]
    xs = [p[0] for a in pts for p in a]
    ys = [p[1] for a in pts for p in a]
    if targets is not None:
        xs += [targets[i * q + dims[0]] for i in range(n)]
        ys += [targets[i * q + dims[1]] for i in range(n)]
    fr = _Frame(xs, ys, width, height)
    body = []
    for i, agent in enumerate(pts):
        coords = " ".join("%.2f,%.2f" % fr(x, y) for x, y in agent)
        body.append(f'<polyline class="agent" fill="none" stroke="{COLORS[i % len(COLORS)]}" '
                    f'stroke-width="2" points="{coords}"/>')
        cx, cy = fr(*agent[0])
        body.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="3" fill="{COLORS[i % len(COLORS)]}"/>')
    if targets is not None:
        for i in range(n):
            tx, ty = fr(targets[i * q + dims[0]], targets[i * q + dims[1]])
            body.append(f'<path d="M{tx - 4:.2f},{ty - 4:.2f} L{tx + 4:.2f},{ty + 4:.2f} '
                        f'M{tx - 4:.2f},{ty + 4:.2f} L{tx + 4:.2f},{ty - 4:.2f}" stroke="red"/>')
    return _svg(width, height, body, title)


def line_svg(series, width=520, height=360, title="", xlabel="", ylabel=""):
    """Line plot of ``{label: (xs, ys)}`` with markers."""
    xs = [x for v in series.values() for x in v[0]]
    ys = [y for v in series.values() for y in v[1] if y == y]
    if not xs or not ys:    # nothing to draw; keep the axes
        xs, ys = [0.0, 1.0], [0.0, 1.0]
    fr = _Frame(xs, ys, width, height, pad=50)
    body = [f'<line x1="50" y1="{height - 50}" x2="{width - 50}" y2="{height - 50}" stroke="black"/>',
            f'<line x1="50" y1="50" x2="50" y2="{height - 50}" stroke="black"/>',
            f'<text x="{width / 2:.1f}" y="{height - 12}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
            f'<text x="14" y="{height / 2:.1f}" font-size="12" transform="rotate(-90 14 {height / 2:.1f})" '
            f'text-anchor="middle">{escape(ylabel)}</text>']
    for tick in (fr.y0, fr.y1):
        _, py = fr(fr.x0, tick)
        body.append(f'<text x="46" y="{py:.2f}" text-anchor="end" font-size="10">{tick:.3g}</text>')
    for tick in (fr.x0, fr.x1):
        px, _ = fr(tick, fr.y0)
        body.append(f'<text x="{px:.2f}" y="{height - 36}" text-anchor="middle" font-size="10">{tick:.3g}</text>')
    for i, (label, (sx, sy)) in enumerate(series.items()):
        col = COLORS[i % len(COLORS)]
        pts = [fr(x, y) for x, y in zip(sx, sy) if y == y]
        body.append(f'<polyline fill="none" stroke="{col}" stroke-width="2" points="'
                    + " ".join("%.2f,%.2f" % p for p in pts) + '"/>')
        body += [f'<circle cx="{px:.2f}" cy="{py:.2f}" r="3" fill="{col}"/>' for px, py in pts]
        body.append(f'<text x="{width - 55}" y="{60 + 14 * i}" text-anchor="end" font-size="11" '
                    f'fill="{col}">{escape(str(label))}</text>')
    return _svg(width, height, body, title)


def plot_trajectory_csv(csv_path, svg_path, q=2, dims=(0, 1), targets=None, title=""):
    _, Z = read_trajectory_csv(csv_path)
    if not Z:
        raise ValueError(f"{csv_path} holds no trajectory rows")
    if len(Z[0]) % q:
        raise ValueError(f"state width {len(Z[0])} is not a multiple of q={q}")
    with open(svg_path, "w") as fh:
        fh.write(trajectories_svg(Z, q, dims, targets, title=title))

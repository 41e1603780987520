"""Deterministic writers: JSON with fixed float formatting, CSV, SVG.

Every float is rendered with 17 significant digits so identical runs
produce byte-identical artifacts regardless of platform repr choices.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "fmt17",
    "dumps17",
    "dump17",
    "write_scattering_csv",
    "write_fiber_csv",
    "svg_heatmap",
]


def fmt17(x) -> str:
    x = float(x)
    if np.isnan(x):
        return "NaN"
    if np.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return format(x, ".17g")


def _render(obj, out, indent, level):
    pad = " " * (indent * level)
    pad_in = " " * (indent * (level + 1))
    if obj is None:
        out.append("null")
    elif isinstance(obj, bool) or isinstance(obj, np.bool_):
        out.append("true" if obj else "false")
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(fmt17(obj))
    elif isinstance(obj, (complex, np.complexfloating)):
        out.append(f"[{fmt17(obj.real)}, {fmt17(obj.imag)}]")
    elif isinstance(obj, str):
        import json
        out.append(json.dumps(obj))
    elif isinstance(obj, np.ndarray):
        _render(obj.tolist(), out, indent, level)
    elif isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{\n")
        for i, (k, v) in enumerate(obj.items()):
            out.append(f'{pad_in}"{k}": ')
            _render(v, out, indent, level + 1)
            out.append(",\n" if i + 1 < len(obj) else "\n")
        out.append(pad + "}")
    elif isinstance(obj, (list, tuple)):
        if not obj:
            out.append("[]")
            return
        out.append("[")
        for i, v in enumerate(obj):
            _render(v, out, indent, level + 1)
            if i + 1 < len(obj):
                out.append(", ")
        out.append("]")
    else:
        raise TypeError(f"cannot serialize {type(obj)!r}")


def dumps17(obj, indent: int = 2) -> str:
    out: list = []
    _render(obj, out, indent, 0)
    out.append("\n")
    return "".join(out)


def dump17(obj, path, indent: int = 2) -> None:
    with open(path, "w") as fh:
        fh.write(dumps17(obj, indent=indent))


def write_scattering_csv(path, scat) -> None:
    """Columns beta, mu, then re/im of each entry in row-major order."""
    n = scat.n
    header = ["beta", "mu"]
    for i in range(n):
        for j in range(n):
            header.append(f"re_C_{i}_{j}")
            header.append(f"im_C_{i}_{j}")
    lines = [",".join(header)]
    for b, M in zip(scat.grid, scat.values):
        row = [fmt17(b.beta), fmt17(b.mu)]
        for i in range(n):
            for j in range(n):
                row.append(fmt17(M[i, j].real))
                row.append(fmt17(M[i, j].imag))
        lines.append(",".join(row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _value_headers(vshape):
    if vshape == ():
        return ["re", "im"]
    if len(vshape) == 1:
        out = []
        for i in range(vshape[0]):
            out += [f"re_{i}", f"im_{i}"]
        return out
    out = []
    for i in range(vshape[0]):
        for j in range(vshape[1]):
            out += [f"re_{i}_{j}", f"im_{i}_{j}"]
    return out


def write_fiber_csv(path, fib) -> None:
    """Columns r, phi, theta then interleaved re/im values, r-major rows."""
    grid = fib.grid
    R, P, T = grid.meshes()
    flat = fib.values.reshape(R.size, -1)
    header = ["r", "phi", "theta"] + _value_headers(fib.vshape)
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        rr, pp, tt = R.ravel(), P.ravel(), T.ravel()
        for k in range(R.size):
            row = [fmt17(rr[k]), fmt17(pp[k]), fmt17(tt[k])]
            for v in flat[k]:
                row.append(fmt17(v.real))
                row.append(fmt17(v.imag))
            fh.write(",".join(row) + "\n")


_STOPS = [
    (0.0, (68, 1, 84)),
    (0.25, (59, 82, 139)),
    (0.5, (33, 145, 140)),
    (0.75, (94, 201, 98)),
    (1.0, (253, 231, 37)),
]


def _color(v) -> str:
    v = min(max(float(v), 0.0), 1.0)
    for (a, ca), (b, cb) in zip(_STOPS, _STOPS[1:]):
        if v <= b:
            t = 0.0 if b == a else (v - a) / (b - a)
            rgb = [round(x + t * (y - x)) for x, y in zip(ca, cb)]
            return f"#{rgb[0]:02x}{rgb[1]:02x}{rgb[2]:02x}"
    return "#fde725"


def svg_heatmap(path, values, title: str = "", xlabel: str = "",
                ylabel: str = "", cell: int = 8) -> None:
    """Self-contained SVG heatmap of a 2D real array (row 0 at bottom)."""
    Z = np.asarray(values, float)
    ny, nx = Z.shape
    lo, hi = float(np.min(Z)), float(np.max(Z))
    span = hi - lo if hi > lo else 1.0
    margin = 40
    w = nx * cell + 2 * margin
    h = ny * cell + 2 * margin
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
        f'viewBox="0 0 {w} {h}">',
        f'<rect width="{w}" height="{h}" fill="white"/>',
    ]
    if title:
        parts.append(
            f'<text x="{w // 2}" y="20" text-anchor="middle" '
            f'font-family="monospace" font-size="13">{title}</text>')
    for iy in range(ny):
        y = margin + (ny - 1 - iy) * cell
        for ix in range(nx):
            c = _color((Z[iy, ix] - lo) / span)
            parts.append(
                f'<rect x="{margin + ix * cell}" y="{y}" width="{cell}" '
                f'height="{cell}" fill="{c}"/>')
    if xlabel:
        parts.append(
            f'<text x="{w // 2}" y="{h - 8}" text-anchor="middle" '
            f'font-family="monospace" font-size="11">{xlabel}</text>')
    if ylabel:
        parts.append(
            f'<text x="12" y="{h // 2}" text-anchor="middle" '
            f'font-family="monospace" font-size="11" '
            f'transform="rotate(-90 12 {h // 2})">{ylabel}</text>')
    parts.append(
        f'<text x="{margin}" y="{h - 8}" font-family="monospace" '
        f'font-size="10">min={fmt17(lo)} max={fmt17(hi)}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")

"""Dendrograms with shrinkage-scaled levels, and small SVG charts."""

from __future__ import annotations

import xml.etree.ElementTree as ET
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import ValidationError
from .hierarchy import Hierarchy, leaf_order

SVG_NS = "http://www.w3.org/2000/svg"


@dataclass(frozen=True)
class DendrogramLayout:
    """Geometry in data units: x is the leaf slot, y runs from 0 (leaves) upward.

    Level ``l`` occupies the band ``bands[l] = (low, high)`` of height
    ``theta[l]``; the root band is on top and the total height is
    ``sum(theta)``. Each segment is ``((x0, y0), (x1, y1))``.
    """

    leaves: Tuple[int, ...]
    bands: Tuple[Tuple[float, float], ...]
    segments: Tuple[Tuple[Tuple[float, float], Tuple[float, float]], ...]
    total_height: float

    @property
    def band_heights(self) -> np.ndarray:
        return np.array([hi - lo for lo, hi in self.bands])


def dendrogram_layout(h: Hierarchy, theta) -> DendrogramLayout:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (h.L,):
        raise ValidationError(f"need {h.L} shrinkage weights, got shape {theta.shape}")
    if np.any(theta < -1e-12):
        raise ValidationError("shrinkage weights must be nonnegative")
    theta = np.maximum(theta, 0.0)
    # top[l] = upper edge of band l; top[L] = 0 at the leaves
    top = np.append(np.cumsum(theta[::-1])[::-1], 0.0)
    bands = tuple((float(top[l + 1]), float(top[l])) for l in range(h.L))

    leaves = leaf_order(h)
    xpos = {m: float(i) for i, m in enumerate(leaves)}
    segs: List = []

    def split_level(members, start):
        for l in range(start + 1, h.L):
            if not any(cl.members == members for cl in h.levels[l]):
                return l
        return h.L

    def draw(members, level):
        if len(members) == 1:
            return xpos[members[0]], 0.0
        l = split_level(members, level)
        y = float(top[l])
        if l == h.L:
            kids = [((xpos[m], 0.0)) for m in members]
        else:
            mset = set(members)
            kids = [draw(cl.members, l) for cl in h.levels[l] if set(cl.members) <= mset]
        for x, yk in kids:
            if y > yk:
                segs.append(((x, yk), (x, y)))
        xs = [x for x, _ in kids]
        segs.append(((min(xs), y), (max(xs), y)))
        return float(np.mean(xs)), y

    root = h.levels[0][0].members
    x, y = draw(root, 0)
    if top[0] > y:
        segs.append(((x, y), (x, float(top[0]))))
    return DendrogramLayout(leaves, bands, tuple(segs), float(top[0]))


def _svg_root(width, height):
    ET.register_namespace("", SVG_NS)
    return ET.Element(
        f"{{{SVG_NS}}}svg",
        {"version": "1.1", "width": str(width), "height": str(height),
         "viewBox": f"0 0 {width} {height}"},
    )


def _el(parent, tag, text=None, **attrs):
    e = ET.SubElement(parent, f"{{{SVG_NS}}}{tag}", {k.replace("_", "-"): str(v) for k, v in attrs.items()})
    if text is not None:
        e.text = text
    return e


def _to_string(root) -> str:
    return ET.tostring(root, encoding="unicode", xml_declaration=True)


def render_dendrogram(fit, format: str = "svg", feature_names: Optional[Sequence[str]] = None) -> str:
    """Dendrogram whose level spacing equals the shrinkage weights of ``fit``.

    A bar on the right shows each level's share of the explained variation.
    ``format`` is ``"svg"`` or ``"dot"``.
    """
    if format not in ("svg", "dot"):
        raise ValidationError(f"unsupported dendrogram format {format!r}")
    h = fit.hierarchy
    names = list(feature_names or fit.feature_names or [f"x{j + 1}" for j in range(h.K)])
    r2 = np.asarray(getattr(fit, "r2_levels", np.zeros(h.L)), dtype=float)
    layout = dendrogram_layout(h, fit.theta)
    if format == "dot":
        return _dendrogram_dot(h, np.asarray(fit.theta, float), r2, names)
    return _dendrogram_svg(layout, r2, names)


def _dendrogram_svg(layout: DendrogramLayout, r2, names) -> str:
    K = len(layout.leaves)
    slot, pad, plot_h, bar_w = 36.0, 40.0, 320.0, 18.0
    width = int(2 * pad + slot * K + 3 * bar_w)
    height = int(plot_h + 2 * pad + 60)
    total = layout.total_height
    unit = plot_h / total if total > 0 else 0.0

    def X(x):
        return pad + slot * (x + 0.5)

    def Y(y):
        return pad + plot_h - y * unit

    root = _svg_root(width, height)
    _el(root, "title", f"dendrogram, total height {total:.6g}")
    g_bands = _el(root, "g", id="bands", stroke="#cccccc", stroke_dasharray="3,3")
    for l, (lo, hi) in enumerate(layout.bands):
        _el(g_bands, "line", x1=pad, x2=pad + slot * K, y1=f"{Y(hi):.3f}", y2=f"{Y(hi):.3f}",
            data_level=l)
    g_tree = _el(root, "g", id="tree", stroke="black", stroke_width="1.5", fill="none")
    for (x0, y0), (x1, y1) in layout.segments:
        _el(g_tree, "line", x1=f"{X(x0):.3f}", y1=f"{Y(y0):.3f}", x2=f"{X(x1):.3f}", y2=f"{Y(y1):.3f}")
    g_lab = _el(root, "g", id="labels", font_size="11", font_family="sans-serif")
    for i, j in enumerate(layout.leaves):
        x, y = X(i), Y(0) + 12
        _el(g_lab, "text", names[j], x=f"{x:.3f}", y=f"{y:.3f}",
            transform=f"rotate(45 {x:.3f} {y:.3f})")

    g_bar = _el(root, "g", id="contribution")
    bx = pad + slot * K + bar_w
    shares = np.clip(r2, 0.0, None)
    top = shares.max() if shares.size and shares.max() > 0 else 1.0
    for l, (lo, hi) in enumerate(layout.bands):
        if hi <= lo:
            continue
        _el(g_bar, "rect", x=f"{bx:.3f}", y=f"{Y(hi):.3f}", width=bar_w,
            height=f"{(hi - lo) * unit:.3f}", fill="#1f4e79",
            fill_opacity=f"{0.1 + 0.9 * shares[l] / top:.3f}" if l < shares.size else "0.1",
            stroke="white", data_level=l)
    return _to_string(root)


def _dendrogram_dot(h: Hierarchy, theta, r2, names) -> str:
    lines = [
        "digraph hierarchy {",
        f'  graph [rankdir=TB, label="total height {theta.sum():.6g}"];',
        "  node [shape=box, fontsize=10];",
    ]
    ids = {}
    for l, lv in enumerate(h.levels):
        for c, cl in enumerate(lv):
            prev = ids.get((l - 1, cl.members))
            if prev is not None:
                ids[(l, cl.members)] = prev
                continue
            nid = f"n{l}_{c}"
            ids[(l, cl.members)] = nid
            label = ",".join(("-" if s < 0 else "") + names[m] for m, s in zip(cl.members, cl.signs))
            share = float(r2[l]) if l < len(r2) else 0.0
            lines.append(f'  {nid} [label="{label}", level={l}, r2="{share:.6g}"];')
            if l > 0:
                parent = next(ids[(l - 1, p.members)] for p in h.levels[l - 1]
                              if set(cl.members) <= set(p.members))
                lines.append(f'  {parent} -> {nid} [minlen=1, theta="{theta[l]:.6g}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def line_chart(x, series, *, title="", xlabel="", ylabel="", labels=None) -> str:
    """Polyline chart; ``series`` is an (n_points, n_lines) array."""
    x = np.asarray(x, dtype=float)
    Y = np.asarray(series, dtype=float).reshape(x.size, -1)
    W, H, pad = 520, 340, 50
    root = _svg_root(W, H)
    _el(root, "title", title)
    xlo, xhi = float(x.min()), float(x.max())
    finite = Y[np.isfinite(Y)]
    ylo, yhi = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
    if xhi == xlo:
        xhi = xlo + 1.0
    if yhi == ylo:
        yhi = ylo + 1.0

    def px(v):
        return pad + (v - xlo) / (xhi - xlo) * (W - 2 * pad)

    def py(v):
        return H - pad - (v - ylo) / (yhi - ylo) * (H - 2 * pad)

    _el(root, "rect", x=pad, y=pad, width=W - 2 * pad, height=H - 2 * pad, fill="none", stroke="#888888")
    _el(root, "text", xlabel, x=W / 2, y=H - 12, font_size="12", text_anchor="middle")
    _el(root, "text", ylabel, x=12, y=H / 2, font_size="12", transform=f"rotate(-90 12 {H / 2})")
    _el(root, "text", title, x=W / 2, y=20, font_size="13", text_anchor="middle")
    for t, v in ((ylo, ylo), (yhi, yhi)):
        _el(root, "text", f"{v:.4g}", x=pad - 4, y=f"{py(t):.2f}", font_size="10", text_anchor="end")
    for t in (xlo, xhi):
        _el(root, "text", f"{t:.4g}", x=f"{px(t):.2f}", y=H - pad + 14, font_size="10", text_anchor="middle")
    g = _el(root, "g", fill="none", stroke_width="1.2")
    for k in range(Y.shape[1]):
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, Y[:, k]) if np.isfinite(b))
        hue = (k * 67) % 360
        e = _el(g, "polyline", points=pts, stroke=f"hsl({hue},60%,40%)")
        if labels is not None:
            _el(e, "title", str(labels[k]))
    return _to_string(root)


def box_chart(groups, labels, *, title="", ylabel="") -> str:
    """Box plots (quartiles, 1.5 IQR whiskers) for several samples."""
    W, H, pad = max(320, 70 * len(groups) + 100), 360, 50
    root = _svg_root(W, H)
    _el(root, "title", title)
    allv = np.concatenate([np.asarray(g, float) for g in groups]) if groups else np.zeros(1)
    lo, hi = float(np.min(allv)), float(np.max(allv))
    if hi == lo:
        hi = lo + 1.0

    def py(v):
        return H - pad - (v - lo) / (hi - lo) * (H - 2 * pad)

    _el(root, "text", title, x=W / 2, y=20, font_size="13", text_anchor="middle")
    _el(root, "text", ylabel, x=12, y=H / 2, font_size="12", transform=f"rotate(-90 12 {H / 2})")
    step = (W - 2 * pad) / max(len(groups), 1)
    for i, (vals, name) in enumerate(zip(groups, labels)):
        v = np.asarray(vals, float)
        q1, med, q3 = np.percentile(v, [25, 50, 75])
        iqr = q3 - q1
        wlo = v[v >= q1 - 1.5 * iqr].min()
        whi = v[v <= q3 + 1.5 * iqr].max()
        cx = pad + step * (i + 0.5)
        g = _el(root, "g", stroke="black", fill="none")
        _el(g, "line", x1=cx, x2=cx, y1=f"{py(wlo):.2f}", y2=f"{py(q1):.2f}")
        _el(g, "line", x1=cx, x2=cx, y1=f"{py(q3):.2f}", y2=f"{py(whi):.2f}")
        _el(g, "rect", x=f"{cx - 15:.2f}", y=f"{py(q3):.2f}", width=30,
            height=f"{py(q1) - py(q3):.2f}", fill="#dde6f0")
        _el(g, "line", x1=f"{cx - 15:.2f}", x2=f"{cx + 15:.2f}", y1=f"{py(med):.2f}", y2=f"{py(med):.2f}",
            stroke_width="2")
        _el(root, "text", str(name), x=f"{cx:.2f}", y=H - pad + 16, font_size="11", text_anchor="middle")
    return _to_string(root)

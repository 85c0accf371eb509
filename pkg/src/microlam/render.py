"""SVG and PNG rendering of Fields with the cyan/magenta/yellow well encoding."""
import io
import re

import numpy as np

from . import geometry as geo
from . import scheme as sc
from . import strain as st
from .errors import EmptyWindow


def strain_color(lam, tol=1e-9):
    """RGB in [0, 1] for barycentric coordinates: well i drives ink channel i."""
    lam = np.asarray(lam, dtype=float)
    lam = np.where(np.abs(lam) <= tol, 0.0, lam)
    lam = np.where(np.abs(lam - 1.0) <= tol, 1.0, lam)
    return 1.0 - np.clip(lam, 0.0, 1.0)


def cell_colors(Fd):
    return strain_color(Fd.bary())


def fmt(x):
    """Shortest round-trip decimal, capped at 9 significant digits."""
    x = float(x)
    if x == 0.0:
        return "0"
    return np.format_float_positional(x, precision=9, unique=True, fractional=False, trim="-")


def _hex(rgb):
    r, g, b = (int(round(255 * c)) for c in rgb)
    return f"#{r:02x}{g:02x}{b:02x}"


def _window(Fd, window):
    W = Fd.omega if window is None else geo.convex_poly(window)
    if len(W) < 3 or len(geo.clip(Fd.omega, W)) < 3:
        raise EmptyWindow("window does not meet omega")
    return W


def _stretch(P, window, aspect):
    """Render-only scaling of y about the window centre."""
    if aspect == 1.0:
        return P
    cy = 0.5 * (window[:, 1].min() + window[:, 1].max())
    Q = np.array(P, dtype=float, copy=True)
    Q[..., 1] = cy + aspect * (Q[..., 1] - cy)
    return Q


def render_svg(Fd, window=None, width=800, aspect=1.0, edges=False):
    """SVG document with one filled polygon per cell clipped to ``window``.

    User units are the physical coordinates (y up, encoded by negating y), so
    painted area equals area(window & omega) times ``aspect``.  ``aspect``
    stretches y for display only.
    """
    W = _window(Fd, window)
    V, cnt = geo.clip_batch(Fd.tri, W)
    keep = np.flatnonzero(cnt >= 3)
    keep = keep[geo.poly_areas(V[keep], cnt[keep]) > 0]
    cols = cell_colors(Fd)
    Ws = _stretch(W, W, aspect)
    lo, hi = Ws.min(axis=0), Ws.max(axis=0)
    w, h = hi - lo
    height = max(1, int(round(width * h / w)))
    out = ['<?xml version="1.0" encoding="UTF-8"?>',
           f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" '
           f'viewBox="{fmt(lo[0])} {fmt(-hi[1])} {fmt(w)} {fmt(h)}">']
    stroke = ' stroke="#000000" stroke-width="{}"'.format(fmt(1e-3 * w)) if edges else ""
    out.append(f'<g stroke-linejoin="round"{stroke}>')
    for i in keep:
        P = _stretch(V[i, :cnt[i]], W, aspect)
        pts = " ".join(f"{fmt(x)},{fmt(-y)}" for x, y in P)
        out.append(f'<polygon id="c{Fd.lineage[i]}" points="{pts}" fill="{_hex(cols[i])}"/>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def painted_area(svg_text):
    """Total polygon area of an SVG produced by render_svg (for checks)."""
    total = 0.0
    for m in re.finditer(r'points="([^"]+)"', svg_text):
        P = np.array([[float(v) for v in p.split(",")] for p in m.group(1).split()])
        total += geo.area(P)
    return total


def raster_rgb(Fd, window=None, px=512, supersample=4, aspect=1.0, background=(1.0, 1.0, 1.0)):
    """Float RGB image (rows top to bottom) with box-filter supersampling."""
    W = _window(Fd, window)
    lo, hi = W.min(axis=0), W.max(axis=0)
    w, h = hi - lo
    h_disp = h * aspect
    nx = int(px)
    ny = max(1, int(round(px * h_disp / w)))
    m = int(supersample)
    xs = lo[0] + (np.arange(nx * m) + 0.5) * w / (nx * m)
    ys = hi[1] - (np.arange(ny * m) + 0.5) * h / (ny * m)
    X, Y = np.meshgrid(xs, ys)
    pts = np.stack([X.ravel(), Y.ravel()], axis=1)
    idx = sc.locate(Fd, pts)
    inwin = geo.contains(W, pts)
    cols = cell_colors(Fd)
    img = np.broadcast_to(np.asarray(background, dtype=float), (len(pts), 3)).copy()
    sel = (idx >= 0) & inwin
    img[sel] = cols[idx[sel]]
    img = img.reshape(ny, m, nx, m, 3).mean(axis=(1, 3))
    return img


def render_png(Fd, window=None, px=512, supersample=4, aspect=1.0):
    """8-bit RGB PNG bytes of the field inside ``window``."""
    from PIL import Image
    img = raster_rgb(Fd, window, px, supersample, aspect)
    arr = np.clip(np.round(255 * img), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr, "RGB").save(buf, format="PNG")
    return buf.getvalue()


def bary_of_mean(Fd, window=None):
    """Barycentric coordinates of the area-mean strain inside ``window``."""
    W = _window(Fd, window)
    V, cnt = geo.clip_batch(Fd.tri, W)
    a = geo.poly_areas(V, cnt)
    e = np.einsum("n,nij->ij", a, st.sym(Fd.F)) / a.sum()
    return st.barycentric(e)

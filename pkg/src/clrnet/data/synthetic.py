"""Procedurally rendered 28x28 image sets written as IDX files.

``digits`` draws the ten numerals as jittered pen strokes; ``clothing``
draws ten garment silhouettes with random fill and texture. Both are
offline stand-ins for the usual handwritten-digit and clothing IDX
collections, and share their file layout, so the real files can be
dropped in wherever these are used.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, ImageFilter

from .idx import write_idx

SIZE = 28
SUPER = 4

DIGIT_NAMES = [str(i) for i in range(10)]
CLOTHING_NAMES = ["tshirt", "trouser", "pullover", "dress", "coat",
                  "sandal", "shirt", "sneaker", "bag", "boot"]


def _arc(cx, cy, rx, ry, t0, t1, n=14):
    t = np.radians(np.linspace(t0, t1, n))
    return [(cx + rx * np.cos(a), cy + ry * np.sin(a)) for a in t]


# Pen strokes in a unit box, y pointing down. Angles in degrees, 0 = +x, 90 = down.
_DIGIT_STROKES = {
    0: [_arc(0.5, 0.5, 0.28, 0.4, 0, 360, 28)],
    1: [[(0.36, 0.26), (0.54, 0.1), (0.54, 0.9)]],
    2: [_arc(0.5, 0.32, 0.27, 0.22, 190, 380) + [(0.22, 0.9), (0.8, 0.9)]],
    3: [_arc(0.48, 0.3, 0.26, 0.2, 200, 450), _arc(0.48, 0.7, 0.3, 0.21, 270, 520)],
    4: [[(0.66, 0.9), (0.66, 0.1), (0.16, 0.66), (0.86, 0.66)]],
    5: [[(0.78, 0.1), (0.3, 0.1), (0.26, 0.45)] + _arc(0.5, 0.65, 0.28, 0.24, 220, 480)],
    6: [[(0.72, 0.12)] + _arc(0.62, 0.55, 0.36, 0.43, 250, 180, 8) + _arc(0.5, 0.68, 0.26, 0.22, 180, 540, 24)],
    7: [[(0.2, 0.12), (0.8, 0.12), (0.42, 0.9)]],
    8: [_arc(0.5, 0.3, 0.22, 0.19, 0, 360, 24), _arc(0.5, 0.7, 0.27, 0.21, 0, 360, 24)],
    9: [_arc(0.5, 0.33, 0.26, 0.22, 0, 360, 24) + [(0.76, 0.35), (0.7, 0.9)]],
}

# Garment outlines in a unit box (filled polygons; extra entries are detail strokes).
_GARMENTS = {
    0: [[(0.3, 0.12), (0.42, 0.16), (0.58, 0.16), (0.7, 0.12), (0.92, 0.3), (0.82, 0.42), (0.74, 0.36),
         (0.74, 0.9), (0.26, 0.9), (0.26, 0.36), (0.18, 0.42), (0.08, 0.3)]],
    1: [[(0.3, 0.08), (0.7, 0.08), (0.74, 0.94), (0.56, 0.94), (0.5, 0.34), (0.44, 0.94), (0.26, 0.94)]],
    2: [[(0.3, 0.1), (0.7, 0.1), (0.9, 0.22), (0.96, 0.88), (0.82, 0.88), (0.76, 0.4), (0.74, 0.9),
         (0.26, 0.9), (0.24, 0.4), (0.18, 0.88), (0.04, 0.88), (0.1, 0.22)]],
    3: [[(0.38, 0.06), (0.62, 0.06), (0.62, 0.3), (0.84, 0.94), (0.16, 0.94), (0.38, 0.3)]],
    4: [[(0.28, 0.06), (0.72, 0.06), (0.92, 0.18), (0.98, 0.94), (0.84, 0.94), (0.78, 0.42), (0.78, 0.96),
         (0.22, 0.96), (0.22, 0.42), (0.16, 0.94), (0.02, 0.94), (0.08, 0.18)], "line:0.5,0.1,0.5,0.96"],
    5: [[(0.06, 0.72), (0.94, 0.66), (0.94, 0.78), (0.06, 0.82)], "line:0.2,0.72,0.45,0.38",
        "line:0.45,0.38,0.7,0.7", "line:0.5,0.45,0.85,0.68"],
    6: [[(0.3, 0.1), (0.7, 0.1), (0.9, 0.22), (0.94, 0.86), (0.8, 0.86), (0.76, 0.42), (0.76, 0.92),
         (0.24, 0.92), (0.24, 0.42), (0.2, 0.86), (0.06, 0.86), (0.1, 0.22)], "collar", "buttons"],
    7: [[(0.04, 0.56), (0.4, 0.52), (0.62, 0.4), (0.8, 0.44), (0.96, 0.62), (0.96, 0.78), (0.04, 0.78)]],
    8: [[(0.12, 0.36), (0.88, 0.36), (0.92, 0.9), (0.08, 0.9)], "handle"],
    9: [[(0.36, 0.12), (0.68, 0.12), (0.7, 0.54), (0.94, 0.66), (0.96, 0.88), (0.1, 0.88), (0.12, 0.66),
         (0.34, 0.56)]],
}


def _affine(rng, jitter_scale=1.0):
    angle = np.radians(rng.uniform(-12, 12) * jitter_scale)
    scale = rng.uniform(0.78, 1.04)
    shear = rng.uniform(-0.18, 0.18) * jitter_scale
    tx, ty = rng.uniform(-0.07, 0.07, size=2) * jitter_scale
    ca, sa = np.cos(angle), np.sin(angle)
    m = np.array([[ca, -sa], [sa, ca]]) @ np.array([[1.0, shear], [0.0, 1.0]]) * scale

    def apply(pts):
        p = np.asarray(pts, dtype=float) - 0.5
        p = p @ m.T + 0.5 + np.array([tx, ty])
        return p

    return apply


def _finish(img: Image.Image, rng) -> np.ndarray:
    img = img.filter(ImageFilter.GaussianBlur(radius=SUPER * rng.uniform(0.2, 0.6)))
    small = np.asarray(img.resize((SIZE, SIZE), Image.BOX), dtype=np.float64)
    small += rng.normal(0, 6, size=small.shape)
    return np.clip(small, 0, 255).astype(np.uint8)


def render_digit(label: int, rng: np.random.Generator) -> np.ndarray:
    big = SIZE * SUPER
    img = Image.new("L", (big, big), 0)
    draw = ImageDraw.Draw(img)
    tf = _affine(rng)
    width = int(big * rng.uniform(0.07, 0.12))
    for stroke in _DIGIT_STROKES[label]:
        pts = np.asarray(stroke) + rng.normal(0, 0.018, size=(len(stroke), 2))
        pts = tf(pts) * big
        draw.line([tuple(p) for p in pts], fill=int(rng.uniform(200, 255)), width=width, joint="curve")
    return _finish(img, rng)


def render_garment(label: int, rng: np.random.Generator) -> np.ndarray:
    big = SIZE * SUPER
    img = Image.new("L", (big, big), 0)
    draw = ImageDraw.Draw(img)
    tf = _affine(rng, jitter_scale=0.5)
    fill = int(rng.uniform(90, 240))
    shape = _GARMENTS[label]
    poly = np.asarray(shape[0]) + rng.normal(0, 0.015, size=(len(shape[0]), 2))
    draw.polygon([tuple(p) for p in tf(poly) * big], fill=fill)
    detail = max(0, fill - int(rng.uniform(50, 90)))
    width = max(2, big // 40)
    for extra in shape[1:]:
        if extra.startswith("line:"):
            x0, y0, x1, y1 = (float(v) for v in extra[5:].split(","))
            pts = tf([(x0, y0), (x1, y1)]) * big
            draw.line([tuple(p) for p in pts], fill=fill if label == 5 else detail, width=width * (3 if label == 5 else 1))
        elif extra == "collar":
            pts = tf([(0.36, 0.1), (0.5, 0.24), (0.64, 0.1)]) * big
            draw.line([tuple(p) for p in pts], fill=detail, width=width)
        elif extra == "buttons":
            for y in (0.35, 0.5, 0.65, 0.8):
                cx, cy = tf([(0.5, y)])[0] * big
                draw.ellipse([cx - width, cy - width, cx + width, cy + width], fill=detail)
        elif extra == "handle":
            box = tf([(0.3, 0.1), (0.7, 0.5)]) * big
            (x0, y0), (x1, y1) = np.minimum(box[0], box[1]), np.maximum(box[0], box[1])
            draw.arc([x0, y0, x1, y1], 180, 360, fill=fill, width=width * 2)
    arr = np.asarray(img, dtype=np.float64)
    # woven texture: random-frequency stripes modulate the fill
    yy, xx = np.mgrid[0:big, 0:big]
    freq, phase, amp = rng.uniform(0.05, 0.3), rng.uniform(0, 2 * np.pi), rng.uniform(0, 0.35)
    direction = rng.uniform(0, np.pi)
    tex = 1 - amp * (0.5 + 0.5 * np.sin(freq * (xx * np.cos(direction) + yy * np.sin(direction)) + phase))
    return _finish(Image.fromarray(np.clip(arr * tex, 0, 255).astype(np.uint8)), rng)


RENDERERS = {"digits": (render_digit, DIGIT_NAMES), "clothing": (render_garment, CLOTHING_NAMES)}


def generate(kind: str, n: int, seed: int):
    """``n`` images (balanced classes, shuffled) and their labels as uint8 arrays."""
    render, names = RENDERERS[kind]
    rng = np.random.Generator(np.random.PCG64(seed))
    labels = np.arange(n) % len(names)
    rng.shuffle(labels)
    images = np.stack([render(int(lbl), rng) for lbl in labels]) if n else np.zeros((0, SIZE, SIZE), np.uint8)
    return images, labels.astype(np.uint8)


def write_synthetic_idx(out_dir, kind: str, n_train: int, n_test: int, seed: int = 0) -> dict:
    """Write ``{kind}-{split}-images-idx3-ubyte`` / ``-labels-idx1-ubyte`` files; return their paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    for split, n, s in (("train", n_train, seed), ("test", n_test, seed + 1_000_003)):
        images, labels = generate(kind, n, s)
        img_path = out_dir / f"{kind}-{split}-images-idx3-ubyte"
        lbl_path = out_dir / f"{kind}-{split}-labels-idx1-ubyte"
        write_idx(img_path, images)
        write_idx(lbl_path, labels)
        paths[f"{split}_images"] = img_path
        paths[f"{split}_labels"] = lbl_path
    return paths

"""Image I/O: 8-bit PNG for viewing, raw float32 .npy for exact comparison."""

import io

import numpy as np
from PIL import Image


def to_uint8(img):
    arr = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return (arr * 255.0 + 0.5).astype(np.uint8)


def save_png(img, path):
    Image.fromarray(to_uint8(img), mode="RGB").save(path, format="PNG")


def png_bytes(img):
    buf = io.BytesIO()
    Image.fromarray(to_uint8(img), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def load_png(path):
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def save_float(img, path):
    np.save(path, np.asarray(img, dtype=np.float32))


def load_float(path):
    return np.load(path)

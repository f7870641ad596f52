"""FSDS: a flat binary container for labelled image datasets.

Layout (all integers little-endian)::

    0      8 bytes   ASCII magic "FSDS0001"
    8      u32       header length L
    12     L bytes   UTF-8 JSON header
    12+L   N x u32   labels
    ...    N*C*H*W   uint8 pixels, image-major, CHW row-major

Header keys: version (1), num_images, channels, height, width, class_names,
split {"base", "validation", "novel"} -> lists of class ids.
"""
import json
import os

import numpy as np

from ..errors import ContractError, FormatError
from .container import SPLITS, DatasetContainer

MAGIC = b"FSDS0001"
HEADER_KEYS = ("version", "num_images", "channels", "height", "width", "class_names", "split")


def encode(ds):
    """Serialize a container to FSDS bytes (deterministic)."""
    n, c, h, w = ds.images.shape
    header = {
        "version": 1,
        "num_images": int(n),
        "channels": int(c),
        "height": int(h),
        "width": int(w),
        "class_names": list(ds.class_names),
        "split": {name: [int(k) for k in ds.split[name]] for name in SPLITS},
    }
    blob = json.dumps(header, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    return b"".join([
        MAGIC,
        np.uint32(len(blob)).astype("<u4").tobytes(),
        blob,
        ds.labels.astype("<u4").tobytes(),
        np.ascontiguousarray(ds.images, dtype=np.uint8).tobytes(),
    ])


def decode(buf):
    """Parse FSDS bytes into a validated :class:`DatasetContainer`."""
    buf = memoryview(buf)
    if len(buf) < 12:
        raise FormatError(f"truncated file: {len(buf)} bytes, need at least 12", offset=len(buf))
    if bytes(buf[:8]) != MAGIC:
        raise FormatError(f"bad magic {bytes(buf[:8])!r}, expected {MAGIC!r}", offset=0)
    hlen = int(np.frombuffer(buf[8:12], dtype="<u4")[0])
    if 12 + hlen > len(buf):
        raise FormatError(f"truncated header: declares {hlen} bytes", offset=len(buf))
    try:
        header = json.loads(bytes(buf[12:12 + hlen]).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"header is not valid UTF-8 JSON: {exc}", offset=12) from None
    if not isinstance(header, dict):
        raise FormatError("header is not a JSON object", offset=12)
    missing = [k for k in HEADER_KEYS if k not in header]
    if missing:
        raise FormatError(f"header is missing keys {missing}", offset=12)
    if header["version"] != 1:
        raise FormatError(f"unsupported version {header['version']}", offset=12)
    try:
        n, c, h, w = (int(header[k]) for k in ("num_images", "channels", "height", "width"))
        split = {name: [int(k) for k in header["split"].get(name, [])] for name in SPLITS}
    except (TypeError, ValueError, AttributeError) as exc:
        raise FormatError(f"malformed header field: {exc}", offset=12) from None
    if min(n, c, h, w) < 0:
        raise FormatError("negative dimension in header", offset=12)
    class_names = header["class_names"]

    lab_off = 12 + hlen
    pix_off = lab_off + 4 * n
    end = pix_off + n * c * h * w
    if len(buf) < pix_off:
        raise FormatError(f"truncated label block: need {4 * n} bytes", offset=len(buf))
    labels = np.frombuffer(buf[lab_off:pix_off], dtype="<u4").astype(np.uint32)
    over = np.flatnonzero(labels >= len(class_names))
    if over.size:
        i = int(over[0])
        raise FormatError(
            f"image {i} has label {int(labels[i])} but only {len(class_names)} classes exist",
            offset=lab_off + 4 * i,
        )
    if len(buf) < end:
        raise FormatError(f"truncated pixel payload: need {end - pix_off} bytes", offset=len(buf))
    if len(buf) > end:
        raise FormatError(f"{len(buf) - end} trailing bytes after payload", offset=end)
    images = np.frombuffer(buf[pix_off:end], dtype=np.uint8).reshape(n, c, h, w).copy()
    try:
        return DatasetContainer(images, labels, class_names, split)
    except ContractError as exc:
        raise FormatError(str(exc), offset=12) from None


def save_dataset(ds, path):
    data = encode(ds)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def load_dataset(path):
    with open(path, "rb") as fh:
        return decode(fh.read())

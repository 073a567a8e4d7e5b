"""Text serialization of pixel fields.

ASCII PGM (P2) holds single-channel fields and ASCII PPM (P3) holds
three-channel ones, both with maxval 255 and linear quantization of [0, 1].
The PFIELD dump (``PFIELD h w c`` header, then whitespace-separated decimals)
round-trips float64 values exactly.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .field import PixelField

MAXVAL = 255


def quantize(x: PixelField) -> np.ndarray:
    return np.rint(np.clip(x.data, 0.0, 1.0) * MAXVAL).astype(np.int64)


def format_pnm(x: PixelField) -> str:
    if x.channels == 1:
        magic = "P2"
    elif x.channels == 3:
        magic = "P3"
    else:
        raise ValueError(f"PGM/PPM need 1 or 3 channels, got {x.channels}")
    q = quantize(x)
    rows = [" ".join(str(v) for v in q[r].ravel()) for r in range(x.height)]
    return f"{magic}\n{x.width} {x.height}\n{MAXVAL}\n" + "\n".join(rows) + "\n"


def _tokens(text: str) -> list[str]:
    out: list[str] = []
    for line in text.splitlines():
        out.extend(line.split("#", 1)[0].split())
    return out


def parse_pnm(text: str) -> PixelField:
    tok = _tokens(text)
    if len(tok) < 4 or tok[0] not in ("P2", "P3"):
        raise ValueError("not an ASCII PGM/PPM file")
    channels = 1 if tok[0] == "P2" else 3
    width, height, maxval = int(tok[1]), int(tok[2]), int(tok[3])
    if maxval <= 0:
        raise ValueError("maxval must be positive")
    vals = np.array([int(v) for v in tok[4:]], dtype=np.float64)
    if vals.size != width * height * channels:
        raise ValueError(f"expected {width * height * channels} samples, found {vals.size}")
    return PixelField.from_values(height, width, channels, vals / maxval)


def format_pfield(x: PixelField) -> str:
    body = " ".join(repr(float(v)) for v in x.values())
    return f"PFIELD {x.height} {x.width} {x.channels}\n{body}\n"


def parse_pfield(text: str) -> PixelField:
    tok = text.split()
    if len(tok) < 4 or tok[0] != "PFIELD":
        raise ValueError("missing PFIELD header")
    h, w, c = (int(v) for v in tok[1:4])
    return PixelField.from_values(h, w, c, [float(v) for v in tok[4:]])


def write_field(x: PixelField, path: str | Path) -> Path:
    """Write by extension: ``.pfield`` is lossless, anything else is PGM/PPM."""
    path = Path(path)
    text = format_pfield(x) if path.suffix == ".pfield" else format_pnm(x)
    path.write_text(text, encoding="ascii", newline="\n")
    return path


def read_field(path: str | Path) -> PixelField:
    text = Path(path).read_text(encoding="ascii")
    if text.lstrip().startswith("PFIELD"):
        return parse_pfield(text)
    return parse_pnm(text)

"""Binary netpbm I/O: P5 grayscale (8/16-bit) and P6 colour (8-bit)."""
import numpy as np


class PnmFormatError(ValueError):
    """Malformed or truncated netpbm file; ``offset`` is the byte position of the fault."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def _header_tokens(buf, count):
    """Read ``count`` whitespace-separated header tokens, skipping ``#`` comments.

    Returns the tokens and the offset of the first payload byte.
    """
    tokens = []
    pos = 0
    n = len(buf)
    while len(tokens) < count:
        while pos < n and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos:pos + 1] == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        if pos >= n:
            raise PnmFormatError("header ended early", pos)
        start = pos
        while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        tokens.append((buf[start:pos], start))
    if pos >= n or not buf[pos:pos + 1].isspace():
        raise PnmFormatError("missing whitespace after header", pos)
    return tokens, pos + 1


def parse_pgm(buf):
    """Decode P5 bytes to a float64 array in [0, 1]."""
    tokens, data_start = _header_tokens(buf, 4)
    magic, off = tokens[0]
    if magic != b"P5":
        raise PnmFormatError(f"expected magic P5, got {magic!r}", off)
    vals = []
    for tok, off in tokens[1:]:
        if not tok.isdigit():
            raise PnmFormatError(f"non-numeric header field {tok!r}", off)
        vals.append(int(tok))
    width, height, maxval = vals
    if width < 1 or height < 1:
        raise PnmFormatError("zero image extent", tokens[1][1])
    if not 0 < maxval < 65536:
        raise PnmFormatError(f"maxval {maxval} out of range", tokens[3][1])
    bpp = 1 if maxval < 256 else 2
    need = width * height * bpp
    have = len(buf) - data_start
    if have < need:
        raise PnmFormatError(f"truncated payload: need {need} bytes, have {have}", data_start + have)
    dtype = np.uint8 if bpp == 1 else np.dtype(">u2")
    raw = np.frombuffer(buf, dtype=dtype, count=width * height, offset=data_start)
    return raw.reshape(height, width).astype(np.float64) / maxval


def read_pgm(path):
    with open(path, "rb") as fh:
        return parse_pgm(fh.read())


def encode_pgm(image, maxval=255):
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"PGM needs a 2-D image, got shape {img.shape}")
    if maxval not in (255, 65535):
        raise ValueError("maxval must be 255 or 65535")
    q = np.rint(np.clip(img, 0.0, 1.0) * maxval)
    payload = q.astype(np.uint8 if maxval == 255 else ">u2").tobytes()
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode("ascii")
    return header + payload


def write_pgm(path, image, maxval=255):
    with open(path, "wb") as fh:
        fh.write(encode_pgm(image, maxval))


def write_ppm(path, rgb):
    """Write an (H, W, 3) uint8-range image as binary P6."""
    arr = np.asarray(rgb)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"PPM needs an (H, W, 3) array, got {arr.shape}")
    data = np.clip(np.rint(arr), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_ppm(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    tokens, start = _header_tokens(buf, 4)
    if tokens[0][0] != b"P6":
        raise PnmFormatError("expected magic P6", tokens[0][1])
    w, h, maxval = (int(t) for t, _ in tokens[1:])
    if maxval != 255:
        raise PnmFormatError("only 8-bit PPM is supported", tokens[3][1])
    if len(buf) - start < w * h * 3:
        raise PnmFormatError("truncated payload", len(buf))
    return np.frombuffer(buf, np.uint8, w * h * 3, start).reshape(h, w, 3)

"""Baseline sequential JPEG encoder/decoder (ITU-T T.81 subset).

Encoding: RGB -> YCbCr (JFIF), 4:2:0 chroma subsampling by 2x2 mean, 8x8
orthonormal DCT, the standard quantization tables scaled by the usual
quality rule (quality < 50: 5000/q, else 200 - 2q, applied as a percentage),
zigzag ordering, DPCM on DC, run-length AC coding, and the standard Huffman
tables with byte stuffing. Streams open with FFD8 and close with FFD9 and
decode in mainstream viewers.

The decoder inverts the same subset: baseline DCT, Huffman coding, 8-bit
precision, 1- or 2-fold chroma sampling factors, no restart intervals or
progressive scans.
"""

from __future__ import annotations

import struct

import numpy as np
from scipy.fft import dctn, idctn

from .errors import ConfigError, FormatError
from .imaging import resize_bilinear_float
from .validation import check_rgb8

# Annex K reference tables.
QTABLE_LUMA = np.array([
    16, 11, 10, 16, 24, 40, 51, 61,
    12, 12, 14, 19, 26, 58, 60, 55,
    14, 13, 16, 24, 40, 57, 69, 56,
    14, 17, 22, 29, 51, 87, 80, 62,
    18, 22, 37, 56, 68, 109, 103, 77,
    24, 35, 55, 64, 81, 104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101,
    72, 92, 95, 98, 112, 100, 103, 99], np.int64).reshape(8, 8)

QTABLE_CHROMA = np.array([
    17, 18, 24, 47, 99, 99, 99, 99,
    18, 21, 26, 66, 99, 99, 99, 99,
    24, 26, 56, 99, 99, 99, 99, 99,
    47, 66, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99], np.int64).reshape(8, 8)

# zigzag position -> natural (row-major) index
ZIGZAG = np.array([
    0, 1, 8, 16, 9, 2, 3, 10,
    17, 24, 32, 25, 18, 11, 4, 5,
    12, 19, 26, 33, 40, 48, 41, 34,
    27, 20, 13, 6, 7, 14, 21, 28,
    35, 42, 49, 56, 57, 50, 43, 36,
    29, 22, 15, 23, 30, 37, 44, 51,
    58, 59, 52, 45, 38, 31, 39, 46,
    53, 60, 61, 54, 47, 55, 62, 63], np.int64)
UNZIGZAG = np.argsort(ZIGZAG)

# Standard Huffman tables: (code-length counts for lengths 1..16, symbols).
DC_LUMA_BITS = [0, 1, 5, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0]
DC_LUMA_VALS = list(range(12))
DC_CHROMA_BITS = [0, 3, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0]
DC_CHROMA_VALS = list(range(12))
AC_LUMA_BITS = [0, 2, 1, 3, 3, 2, 4, 3, 5, 5, 4, 4, 0, 0, 1, 0x7D]
AC_LUMA_VALS = [
    0x01, 0x02, 0x03, 0x00, 0x04, 0x11, 0x05, 0x12, 0x21, 0x31, 0x41, 0x06,
    0x13, 0x51, 0x61, 0x07, 0x22, 0x71, 0x14, 0x32, 0x81, 0x91, 0xA1, 0x08,
    0x23, 0x42, 0xB1, 0xC1, 0x15, 0x52, 0xD1, 0xF0, 0x24, 0x33, 0x62, 0x72,
    0x82, 0x09, 0x0A, 0x16, 0x17, 0x18, 0x19, 0x1A, 0x25, 0x26, 0x27, 0x28,
    0x29, 0x2A, 0x34, 0x35, 0x36, 0x37, 0x38, 0x39, 0x3A, 0x43, 0x44, 0x45,
    0x46, 0x47, 0x48, 0x49, 0x4A, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58, 0x59,
    0x5A, 0x63, 0x64, 0x65, 0x66, 0x67, 0x68, 0x69, 0x6A, 0x73, 0x74, 0x75,
    0x76, 0x77, 0x78, 0x79, 0x7A, 0x83, 0x84, 0x85, 0x86, 0x87, 0x88, 0x89,
    0x8A, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99, 0x9A, 0xA2, 0xA3,
    0xA4, 0xA5, 0xA6, 0xA7, 0xA8, 0xA9, 0xAA, 0xB2, 0xB3, 0xB4, 0xB5, 0xB6,
    0xB7, 0xB8, 0xB9, 0xBA, 0xC2, 0xC3, 0xC4, 0xC5, 0xC6, 0xC7, 0xC8, 0xC9,
    0xCA, 0xD2, 0xD3, 0xD4, 0xD5, 0xD6, 0xD7, 0xD8, 0xD9, 0xDA, 0xE1, 0xE2,
    0xE3, 0xE4, 0xE5, 0xE6, 0xE7, 0xE8, 0xE9, 0xEA, 0xF1, 0xF2, 0xF3, 0xF4,
    0xF5, 0xF6, 0xF7, 0xF8, 0xF9, 0xFA]
AC_CHROMA_BITS = [0, 2, 1, 2, 4, 4, 3, 4, 7, 5, 4, 4, 0, 1, 2, 0x77]
AC_CHROMA_VALS = [
    0x00, 0x01, 0x02, 0x03, 0x11, 0x04, 0x05, 0x21, 0x31, 0x06, 0x12, 0x41,
    0x51, 0x07, 0x61, 0x71, 0x13, 0x22, 0x32, 0x81, 0x08, 0x14, 0x42, 0x91,
    0xA1, 0xB1, 0xC1, 0x09, 0x23, 0x33, 0x52, 0xF0, 0x15, 0x62, 0x72, 0xD1,
    0x0A, 0x16, 0x24, 0x34, 0xE1, 0x25, 0xF1, 0x17, 0x18, 0x19, 0x1A, 0x26,
    0x27, 0x28, 0x29, 0x2A, 0x35, 0x36, 0x37, 0x38, 0x39, 0x3A, 0x43, 0x44,
    0x45, 0x46, 0x47, 0x48, 0x49, 0x4A, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58,
    0x59, 0x5A, 0x63, 0x64, 0x65, 0x66, 0x67, 0x68, 0x69, 0x6A, 0x73, 0x74,
    0x75, 0x76, 0x77, 0x78, 0x79, 0x7A, 0x82, 0x83, 0x84, 0x85, 0x86, 0x87,
    0x88, 0x89, 0x8A, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99, 0x9A,
    0xA2, 0xA3, 0xA4, 0xA5, 0xA6, 0xA7, 0xA8, 0xA9, 0xAA, 0xB2, 0xB3, 0xB4,
    0xB5, 0xB6, 0xB7, 0xB8, 0xB9, 0xBA, 0xC2, 0xC3, 0xC4, 0xC5, 0xC6, 0xC7,
    0xC8, 0xC9, 0xCA, 0xD2, 0xD3, 0xD4, 0xD5, 0xD6, 0xD7, 0xD8, 0xD9, 0xDA,
    0xE2, 0xE3, 0xE4, 0xE5, 0xE6, 0xE7, 0xE8, 0xE9, 0xEA, 0xF2, 0xF3, 0xF4,
    0xF5, 0xF6, 0xF7, 0xF8, 0xF9, 0xFA]

SOI, EOI, SOS, DQT, DHT, SOF0, APP0, COM = (
    0xD8, 0xD9, 0xDA, 0xDB, 0xC4, 0xC0, 0xE0, 0xFE)


def scaled_qtable(base, quality):
    """Scale a reference table by quality (libjpeg integer arithmetic)."""
    q = int(quality)
    if not 1 <= q <= 100:
        raise ConfigError(f"quality must be in [1, 100], got {quality}")
    scale = 5000 // q if q < 50 else 200 - 2 * q
    return np.clip((base * scale + 50) // 100, 1, 255).astype(np.int64)


def rgb_to_ycbcr(rgb):
    arr = rgb.astype(np.float64)
    r, g, b = arr[..., 0], arr[..., 1], arr[..., 2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = -0.168736 * r - 0.331264 * g + 0.5 * b + 128.0
    cr = 0.5 * r - 0.418688 * g - 0.081312 * b + 128.0
    return y, cb, cr


def ycbcr_to_rgb(y, cb, cr):
    cb = cb - 128.0
    cr = cr - 128.0
    r = y + 1.402 * cr
    g = y - 0.344136 * cb - 0.714136 * cr
    b = y + 1.772 * cb
    out = np.stack([r, g, b], axis=-1)
    return np.clip(np.round(out), 0, 255).astype(np.uint8)


def _build_codes(bits, vals):
    """Canonical Huffman: symbol -> (code, length)."""
    table = {}
    code = 0
    k = 0
    for length in range(1, 17):
        for _ in range(bits[length - 1]):
            table[vals[k]] = (code, length)
            code += 1
            k += 1
        code <<= 1
    return table


def _build_decode(bits, vals):
    """Canonical Huffman decode map: (length, code) -> symbol."""
    table = {}
    code = 0
    k = 0
    for length in range(1, 17):
        for _ in range(bits[length - 1]):
            table[(length, code)] = vals[k]
            code += 1
            k += 1
        code <<= 1
    return table


class _BitWriter:
    def __init__(self):
        self.buf = bytearray()
        self.acc = 0
        self.nbits = 0

    def write(self, code, length):
        self.acc = ((self.acc << length) | code) & 0xFFFFFFFFFF
        self.nbits += length
        while self.nbits >= 8:
            byte = (self.acc >> (self.nbits - 8)) & 0xFF
            self.buf.append(byte)
            if byte == 0xFF:
                self.buf.append(0x00)  # byte stuffing
            self.nbits -= 8

    def flush(self):
        if self.nbits:
            pad = 8 - self.nbits
            self.write((1 << pad) - 1, pad)
        return bytes(self.buf)


def _magnitude(value):
    """JPEG magnitude category and the raw bits encoding ``value``."""
    size = int(value).bit_length() if value >= 0 else int(-value).bit_length()
    bits = value if value >= 0 else value + (1 << size) - 1
    return size, bits


def _blockify(plane):
    h, w = plane.shape
    return plane.reshape(h // 8, 8, w // 8, 8).transpose(0, 2, 1, 3)


def _quantize_plane(plane, qtbl):
    """(H, W) pixel plane -> (H/8, W/8, 64) of zigzagged quantized ints."""
    blocks = _blockify(plane.astype(np.float64) - 128.0)
    coefs = dctn(blocks, axes=(-2, -1), norm="ortho")
    quant = np.round(coefs / qtbl).astype(np.int64)
    # Baseline Huffman categories top out at 11 bits (DC) / 10 bits (AC).
    np.clip(quant, -1023, 1023, out=quant)
    nb0, nb1 = quant.shape[:2]
    return quant.reshape(nb0, nb1, 64)[..., ZIGZAG]


def _encode_block(writer, zz, prev_dc, dc_codes, ac_codes):
    dc = int(zz[0])
    size, bits = _magnitude(dc - prev_dc)
    code, length = dc_codes[size]
    writer.write(code, length)
    if size:
        writer.write(int(bits), size)
    nz = np.flatnonzero(zz[1:]) + 1
    pos = 0
    for idx in nz:
        run = int(idx) - pos - 1
        while run >= 16:
            code, length = ac_codes[0xF0]  # ZRL
            writer.write(code, length)
            run -= 16
        size, bits = _magnitude(int(zz[idx]))
        code, length = ac_codes[(run << 4) | size]
        writer.write(code, length)
        writer.write(int(bits), size)
        pos = int(idx)
    if pos != 63:
        code, length = ac_codes[0x00]  # EOB
        writer.write(code, length)
    return dc


def _segment(marker, payload):
    return bytes([0xFF, marker]) + struct.pack(">H", 2 + len(payload)) + payload


def jpeg_encode(img, quality) -> bytes:
    """Encode an (H, W, 3) uint8 RGB image as a baseline JPEG stream."""
    arr = check_rgb8(img)
    h, w = arr.shape[:2]
    qy = scaled_qtable(QTABLE_LUMA, quality)
    qc = scaled_qtable(QTABLE_CHROMA, quality)

    # Pad to whole 16x16 MCUs by edge replication.
    ph = (-h) % 16
    pw = (-w) % 16
    if ph or pw:
        arr = np.pad(arr, ((0, ph), (0, pw), (0, 0)), mode="edge")
    y, cb, cr = rgb_to_ycbcr(arr)
    hh, ww = y.shape
    cb = cb.reshape(hh // 2, 2, ww // 2, 2).mean(axis=(1, 3))
    cr = cr.reshape(hh // 2, 2, ww // 2, 2).mean(axis=(1, 3))

    zy = _quantize_plane(y, qy)
    zcb = _quantize_plane(cb, qc)
    zcr = _quantize_plane(cr, qc)

    dc_y = _build_codes(DC_LUMA_BITS, DC_LUMA_VALS)
    ac_y = _build_codes(AC_LUMA_BITS, AC_LUMA_VALS)
    dc_c = _build_codes(DC_CHROMA_BITS, DC_CHROMA_VALS)
    ac_c = _build_codes(AC_CHROMA_BITS, AC_CHROMA_VALS)

    writer = _BitWriter()
    prev = [0, 0, 0]
    mcu_rows, mcu_cols = hh // 16, ww // 16
    for mr in range(mcu_rows):
        for mc in range(mcu_cols):
            for dy, dx in ((0, 0), (0, 1), (1, 0), (1, 1)):
                prev[0] = _encode_block(writer, zy[2 * mr + dy, 2 * mc + dx],
                                        prev[0], dc_y, ac_y)
            prev[1] = _encode_block(writer, zcb[mr, mc], prev[1], dc_c, ac_c)
            prev[2] = _encode_block(writer, zcr[mr, mc], prev[2], dc_c, ac_c)
    scan = writer.flush()

    out = bytearray()
    out += bytes([0xFF, SOI])
    out += _segment(APP0, b"JFIF\x00" + bytes([1, 1, 0]) + struct.pack(">HH", 1, 1)
                    + bytes([0, 0]))
    out += _segment(DQT, bytes([0x00]) + bytes(qy.reshape(64)[ZIGZAG].astype(np.uint8)))
    out += _segment(DQT, bytes([0x01]) + bytes(qc.reshape(64)[ZIGZAG].astype(np.uint8)))
    sof = struct.pack(">BHHB", 8, h, w, 3)
    sof += bytes([1, 0x22, 0])  # Y: 2x2 sampling, qtable 0
    sof += bytes([2, 0x11, 1])  # Cb
    sof += bytes([3, 0x11, 1])  # Cr
    out += _segment(SOF0, sof)
    for cls, dest, bits, vals in (
            (0, 0, DC_LUMA_BITS, DC_LUMA_VALS), (1, 0, AC_LUMA_BITS, AC_LUMA_VALS),
            (0, 1, DC_CHROMA_BITS, DC_CHROMA_VALS),
            (1, 1, AC_CHROMA_BITS, AC_CHROMA_VALS)):
        out += _segment(DHT, bytes([(cls << 4) | dest]) + bytes(bits) + bytes(vals))
    sos = bytes([3, 1, 0x00, 2, 0x11, 3, 0x11, 0, 63, 0])
    out += _segment(SOS, sos)
    out += scan
    out += bytes([0xFF, EOI])
    return bytes(out)


# ---------------------------------------------------------------------------
# Decoder


class _BitReader:
    def __init__(self, data):
        self.data = data
        self.pos = 0
        self.acc = 0
        self.nbits = 0

    def _fill(self):
        if self.pos >= len(self.data):
            raise FormatError("entropy data truncated")
        self.acc = (self.acc << 8) | self.data[self.pos]
        self.pos += 1
        self.nbits += 8

    def read_bit(self):
        if self.nbits == 0:
            self._fill()
        self.nbits -= 1
        return (self.acc >> self.nbits) & 1

    def read_bits(self, n):
        out = 0
        for _ in range(n):
            out = (out << 1) | self.read_bit()
        return out


def _decode_symbol(reader, table):
    code = 0
    for length in range(1, 17):
        code = (code << 1) | reader.read_bit()
        sym = table.get((length, code))
        if sym is not None:
            return sym
    raise FormatError("invalid Huffman code in scan data")


def _extend(bits, size):
    if size == 0:
        return 0
    if bits < (1 << (size - 1)):
        return bits - (1 << size) + 1
    return bits


def _decode_block(reader, dc_tbl, ac_tbl, prev_dc):
    zz = np.zeros(64, np.int64)
    size = _decode_symbol(reader, dc_tbl)
    dc = prev_dc + _extend(reader.read_bits(size), size)
    zz[0] = dc
    k = 1
    while k < 64:
        sym = _decode_symbol(reader, ac_tbl)
        if sym == 0x00:  # EOB
            break
        run, size = sym >> 4, sym & 0x0F
        if size == 0:
            if run != 15:
                raise FormatError(f"invalid AC symbol {sym:#x}")
            k += 16
            continue
        k += run
        if k > 63:
            raise FormatError("AC run overflows block")
        zz[k] = _extend(reader.read_bits(size), size)
        k += 1
    return zz, dc


def _unstuff(data, start):
    """Entropy bytes from ``start`` to the next marker, stuffing removed."""
    out = bytearray()
    i = start
    n = len(data)
    while i < n:
        b = data[i]
        if b != 0xFF:
            out.append(b)
            i += 1
            continue
        if i + 1 >= n:
            raise FormatError("stream ends inside entropy data")
        nxt = data[i + 1]
        if nxt == 0x00:
            out.append(0xFF)
            i += 2
        else:
            return bytes(out), i
    raise FormatError("missing end-of-image marker")


def jpeg_decode(data) -> np.ndarray:
    """Decode a baseline JPEG stream produced by :func:`jpeg_encode`.

    Also accepts other baseline streams within the same subset (8-bit,
    YCbCr or grayscale-as-luma, sampling factors 1 or 2, no restarts).
    """
    if len(data) < 4 or data[0] != 0xFF or data[1] != SOI:
        raise FormatError("not a JPEG stream (missing FFD8)")
    qtables = {}
    dc_tables = {}
    ac_tables = {}
    frame = None
    scan_comps = None
    pos = 2
    while True:
        if pos + 2 > len(data):
            raise FormatError("stream truncated before start-of-scan")
        if data[pos] != 0xFF:
            raise FormatError(f"expected marker at byte {pos}")
        marker = data[pos + 1]
        pos += 2
        if marker == EOI:
            raise FormatError("no scan data before end-of-image")
        if marker in (0x01,) or 0xD0 <= marker <= 0xD7:
            continue  # standalone markers
        if pos + 2 > len(data):
            raise FormatError("segment header truncated")
        seglen = struct.unpack(">H", data[pos : pos + 2])[0]
        seg = data[pos + 2 : pos + seglen]
        if len(seg) != seglen - 2:
            raise FormatError("segment payload truncated")
        pos += seglen
        if marker == DQT:
            i = 0
            while i < len(seg):
                pq, tq = seg[i] >> 4, seg[i] & 0x0F
                if pq != 0:
                    raise FormatError("16-bit quantization tables unsupported")
                vals = np.frombuffer(seg[i + 1 : i + 65], np.uint8).astype(np.int64)
                if len(vals) != 64:
                    raise FormatError("short quantization table")
                qtables[tq] = vals[UNZIGZAG].reshape(8, 8)
                i += 65
        elif marker == DHT:
            i = 0
            while i < len(seg):
                cls, dest = seg[i] >> 4, seg[i] & 0x0F
                bits = list(seg[i + 1 : i + 17])
                count = sum(bits)
                vals = list(seg[i + 17 : i + 17 + count])
                if len(vals) != count:
                    raise FormatError("short Huffman table")
                (dc_tables if cls == 0 else ac_tables)[dest] = _build_decode(bits, vals)
                i += 17 + count
        elif marker == SOF0:
            prec, h, w, ncomp = struct.unpack(">BHHB", seg[:6])
            if prec != 8:
                raise FormatError(f"unsupported sample precision {prec}")
            if ncomp != 3:
                raise FormatError(f"unsupported component count {ncomp}")
            comps = []
            for c in range(ncomp):
                cid, hv, tq = seg[6 + 3 * c : 9 + 3 * c]
                comps.append({"id": cid, "h": hv >> 4, "v": hv & 0x0F, "tq": tq})
            frame = {"h": h, "w": w, "comps": comps}
        elif 0xC1 <= marker <= 0xCF and marker not in (DHT, 0xC8, 0xCC):
            raise FormatError(f"non-baseline frame marker FF{marker:02X}")
        elif marker == 0xDD:
            raise FormatError("restart intervals unsupported")
        elif marker == SOS:
            if frame is None:
                raise FormatError("scan before frame header")
            ns = seg[0]
            scan_comps = []
            for c in range(ns):
                cid, tables = seg[1 + 2 * c : 3 + 2 * c]
                scan_comps.append({"id": cid, "dc": tables >> 4, "ac": tables & 0x0F})
            break
        # APPn, COM, and anything else: skipped

    scan, end = _unstuff(data, pos)
    if end + 1 >= len(data) or data[end + 1] != EOI:
        raise FormatError("scan does not end with FFD9")

    comps = frame["comps"]
    hmax = max(c["h"] for c in comps)
    vmax = max(c["v"] for c in comps)
    if not all(c["h"] in (1, 2) and c["v"] in (1, 2) for c in comps):
        raise FormatError("sampling factors above 2 unsupported")
    h, w = frame["h"], frame["w"]
    mcu_w, mcu_h = 8 * hmax, 8 * vmax
    mcu_cols = -(-w // mcu_w)
    mcu_rows = -(-h // mcu_h)

    order = {sc["id"]: sc for sc in scan_comps}
    planes = {}
    for c in comps:
        ph = mcu_rows * c["v"] * 8
        pw = mcu_cols * c["h"] * 8
        planes[c["id"]] = np.zeros((ph // 8, pw // 8, 64), np.int64)

    reader = _BitReader(scan)
    prev = {c["id"]: 0 for c in comps}
    for mr in range(mcu_rows):
        for mc in range(mcu_cols):
            for c in comps:
                sc = order.get(c["id"])
                if sc is None:
                    raise FormatError(f"component {c['id']} missing from scan")
                if sc["dc"] not in dc_tables or sc["ac"] not in ac_tables:
                    raise FormatError("scan references undefined Huffman table")
                for dy in range(c["v"]):
                    for dx in range(c["h"]):
                        zz, dc = _decode_block(reader, dc_tables[sc["dc"]],
                                               ac_tables[sc["ac"]], prev[c["id"]])
                        prev[c["id"]] = dc
                        planes[c["id"]][mr * c["v"] + dy, mc * c["h"] + dx] = zz

    out_planes = []
    for c in comps:
        if c["tq"] not in qtables:
            raise FormatError("frame references undefined quantization table")
        zz = planes[c["id"]]
        blocks = zz[..., UNZIGZAG].reshape(zz.shape[0], zz.shape[1], 8, 8)
        coefs = blocks * qtables[c["tq"]]
        pix = idctn(coefs.astype(np.float64), axes=(-2, -1), norm="ortho") + 128.0
        plane = pix.transpose(0, 2, 1, 3).reshape(zz.shape[0] * 8, zz.shape[1] * 8)
        # Subsampled planes go back to full resolution bilinearly, which
        # inverts the encoder's 2x2 mean on smooth content.
        fy, fx = vmax // c["v"], hmax // c["h"]
        if fy > 1 or fx > 1:
            plane = resize_bilinear_float(plane, plane.shape[0] * fy,
                                          plane.shape[1] * fx)
        out_planes.append(plane[:h, :w])
    return ycbcr_to_rgb(*out_planes)

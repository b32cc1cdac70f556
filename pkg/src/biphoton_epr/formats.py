"""On-disk formats: BPFS frame stacks and BPRJ projection containers.

BPFS (little-endian throughout)::

    offset size  field
    0      4     magic b"BPFS"
    4      2     version (u16, = 1)
    6      2     width  (u16, px)
    8      2     height (u16, px)
    10     4     n_frames (u32)
    14     1     basis tag (u8: 0 = position, 1 = momentum)
    15     8     master seed (u64)
    23     32    config hash (SHA-256 of the embedded config text)
    55     ...   n_frames frames, each ceil(width*height/8) bytes: the frame's
                 pixels in row-major order packed 8 per byte, first pixel in
                 the least significant bit, zero padded at the end
    ...    ...   optional trailer: b"META", u32 length, UTF-8 JSON object with
                 "config_text", "dropped_photons", "emitted_photons"

Readers that stop after the frames stay compatible with the trailer.

BPRJ::

    0      4     magic b"BPRJ"
    4      2     version (u16, = 1)
    6      4     header length in bytes (u32)
    10     ...   UTF-8 JSON header: axis_kind, bin_size, units, center_index,
                 dims [rows, cols], n_pairs, stretch, lambda_signal,
                 lambda_idler, accidentals, config_hash (hex), n_blocks,
                 block_pairs
    ...    ...   rows*cols float64 values, row-major
    ...    ...   n_blocks*rows*cols float64 block sums, block-major
"""
from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from .jpd import Projection
from .synth import FrameStack, SensorModel

BPFS_MAGIC = b"BPFS"
BPFS_VERSION = 1
BPFS_HEADER = struct.Struct("<4sHHHIBQ32s")
TRAILER_MAGIC = b"META"
BASIS_CODES = {"position": 0, "momentum": 1}
BASIS_NAMES = {v: k for k, v in BASIS_CODES.items()}

BPRJ_MAGIC = b"BPRJ"
BPRJ_VERSION = 1

WRITE_CHUNK = 1024


class FormatError(ValueError):
    pass


def frame_nbytes(width: int, height: int) -> int:
    return (width * height + 7) // 8


def write_bpfs(path, stack: FrameStack) -> None:
    h, w = stack.sensor.shape
    if stack.n_frames >= 2**32:
        raise FormatError("too many frames for a u32 count")
    header = BPFS_HEADER.pack(BPFS_MAGIC, BPFS_VERSION, w, h, stack.n_frames,
                              BASIS_CODES[stack.basis_tag], stack.seed % 2**64,
                              stack.config_hash)
    with open(path, "wb") as fh:
        fh.write(header)
        for start in range(0, stack.n_frames, WRITE_CHUNK):
            dense = stack.dense(start, start + WRITE_CHUNK).reshape(-1, h * w)
            fh.write(np.packbits(dense, axis=1, bitorder="little").tobytes())
        meta = {"config_text": stack.config_text, "dropped_photons": stack.dropped_photons,
                "emitted_photons": stack.emitted_photons}
        blob = json.dumps(meta, sort_keys=True).encode()
        fh.write(TRAILER_MAGIC + struct.pack("<I", len(blob)) + blob)


def read_bpfs_header(path) -> dict:
    with open(path, "rb") as fh:
        raw = fh.read(BPFS_HEADER.size)
    if len(raw) < BPFS_HEADER.size:
        raise FormatError(f"{path}: truncated BPFS header")
    magic, version, w, h, n, basis, seed, digest = BPFS_HEADER.unpack(raw)
    if magic != BPFS_MAGIC:
        raise FormatError(f"{path}: not a BPFS file (magic {magic!r})")
    if version != BPFS_VERSION:
        raise FormatError(f"{path}: unsupported BPFS version {version}")
    if basis not in BASIS_NAMES:
        raise FormatError(f"{path}: unknown basis tag {basis}")
    return {"width": w, "height": h, "n_frames": n, "basis_tag": BASIS_NAMES[basis],
            "seed": seed, "config_hash": digest}


def read_bpfs(path, sensor: SensorModel | None = None) -> FrameStack:
    """Load a BPFS file; the sensor comes from the embedded config unless given."""
    from .config import RunConfig

    head = read_bpfs_header(path)
    w, h, n = head["width"], head["height"], head["n_frames"]
    nbytes = frame_nbytes(w, h)
    with open(path, "rb") as fh:
        fh.seek(BPFS_HEADER.size)
        body = fh.read(nbytes * n)
        if len(body) != nbytes * n:
            raise FormatError(f"{path}: truncated frame data")
        tail = fh.read()
    meta = {}
    if tail:
        if tail[:4] != TRAILER_MAGIC or len(tail) < 8:
            raise FormatError(f"{path}: unrecognized trailer")
        (length,) = struct.unpack("<I", tail[4:8])
        meta = json.loads(tail[8:8 + length].decode())
    config_text = meta.get("config_text")
    if config_text is not None and hashlib.sha256(config_text.encode()).digest() != head["config_hash"]:
        raise FormatError(f"{path}: embedded config does not match header hash")
    if sensor is None:
        if config_text is None:
            raise FormatError(f"{path}: no embedded config; pass the sensor model explicitly")
        sensor = RunConfig.from_text(config_text).sensor
    if sensor.shape != (h, w):
        raise FormatError(f"{path}: frame size {w}x{h} does not match sensor {sensor.width_px}x{sensor.height_px}")
    packed = np.frombuffer(body, dtype=np.uint8).reshape(n, nbytes)
    pieces, counts = [], []
    for start in range(0, n, WRITE_CHUNK):
        bits = np.unpackbits(packed[start:start + WRITE_CHUNK], axis=1, count=w * h,
                             bitorder="little")
        counts.append(bits.sum(axis=1, dtype=np.int64))
        pieces.append(np.nonzero(bits)[1].astype(np.int64))
    offsets = np.concatenate([[0], np.cumsum(np.concatenate(counts or [[]]))]).astype(np.int64)
    indices = np.concatenate(pieces) if pieces else np.zeros(0, dtype=np.int64)
    return FrameStack(indices=indices, offsets=offsets, sensor=sensor,
                      basis_tag=head["basis_tag"], seed=head["seed"],
                      config_hash=head["config_hash"], config_text=config_text,
                      dropped_photons=int(meta.get("dropped_photons", 0)),
                      emitted_photons=int(meta.get("emitted_photons", 0)))


def write_projection(path, projection: Projection, include_blocks: bool = True) -> None:
    rows, cols = projection.shape
    blocks = projection.block_values if include_blocks else None
    header = {
        "axis_kind": projection.axis_kind,
        "bin_size": projection.bin_size,
        "units": projection.units,
        "center_index": list(projection.center_index),
        "dims": [rows, cols],
        "n_pairs": projection.n_pairs,
        "stretch": projection.stretch,
        "lambda_signal": projection.lambda_signal,
        "lambda_idler": projection.lambda_idler,
        "accidentals": projection.accidentals,
        "config_hash": projection.config_hash.hex(),
        "n_blocks": 0 if blocks is None else int(len(blocks)),
        "block_pairs": [] if blocks is None else [int(b) for b in projection.block_pairs],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(BPRJ_MAGIC + struct.pack("<HI", BPRJ_VERSION, len(blob)) + blob)
        fh.write(np.ascontiguousarray(projection.values, dtype="<f8").tobytes())
        if blocks is not None:
            fh.write(np.ascontiguousarray(blocks, dtype="<f8").tobytes())


def read_projection(path) -> Projection:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != BPRJ_MAGIC:
        raise FormatError(f"{path}: not a projection container")
    version, length = struct.unpack("<HI", raw[4:10])
    if version != BPRJ_VERSION:
        raise FormatError(f"{path}: unsupported projection version {version}")
    header = json.loads(raw[10:10 + length].decode())
    rows, cols = header["dims"]
    start = 10 + length
    size = rows * cols * 8
    values = np.frombuffer(raw, dtype="<f8", count=rows * cols, offset=start).reshape(rows, cols)
    blocks = None
    pairs = None
    if header["n_blocks"]:
        k = header["n_blocks"]
        blocks = np.frombuffer(raw, dtype="<f8", count=k * rows * cols,
                               offset=start + size).reshape(k, rows, cols).astype(float)
        pairs = np.array(header["block_pairs"], dtype=np.int64)
    return Projection(values=values.astype(float), axis_kind=header["axis_kind"],
                      bin_size=header["bin_size"], center_index=tuple(header["center_index"]),
                      n_pairs=header["n_pairs"], units=header["units"], stretch=header["stretch"],
                      lambda_signal=header["lambda_signal"], lambda_idler=header["lambda_idler"],
                      accidentals=header["accidentals"], block_values=blocks, block_pairs=pairs,
                      config_hash=bytes.fromhex(header["config_hash"]))


def write_projection_csv(path, projection: Projection) -> None:
    """One row per bin: offsets in bins, camera-plane offsets in um, value."""
    ay, ax = np.meshgrid(projection.axis(0), projection.axis(1), indexing="ij")
    bs = projection.bin_size
    table = np.column_stack([ay.ravel(), ax.ravel(), ay.ravel() * bs, ax.ravel() * bs,
                             projection.values.ravel()])
    np.savetxt(path, table, fmt=["%d", "%d", "%.17g", "%.17g", "%.17g"], delimiter=",",
               header="dy_bin,dx_bin,dy_um,dx_um,value", comments="")

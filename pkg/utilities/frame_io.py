''' Frame and frame-sequence I/O: binary PGM (P5) images plus a manifest.json
Only module touching the filesystem for pixel data.
'''

import json
import os
from dataclasses import dataclass, field

import numpy as np
from loguru import logger

MANIFEST_NAME = "manifest.json"


class FrameIOError(Exception):
    pass

class PgmHeaderError(FrameIOError):
    pass

class PgmMaxvalError(FrameIOError):
    pass

class PgmTruncatedError(FrameIOError):
    pass

class MissingFrameError(FrameIOError):
    def __init__(self, index, path):
        super().__init__("missing frame index {} ({})".format(index, path))
        self.index = index
        self.path = path

class FrameShapeError(FrameIOError):
    pass

class ManifestError(FrameIOError):
    pass


##====== Types =================================================================

@dataclass
class Frame:
    pixels: np.ndarray   # uint8, shape (height, width)
    index: int = 0
    timestamp_s: float = 0.0

    def __post_init__(self):
        self.pixels = np.ascontiguousarray(self.pixels, dtype = np.uint8)
        if self.pixels.ndim != 2 or self.pixels.size == 0:
            raise FrameShapeError("frame needs a non-empty 2-D pixel grid, got shape {}"
                                    .format(self.pixels.shape))
        if self.index < 0 or self.timestamp_s < 0:
            raise FrameIOError("negative frame index/timestamp")

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def height(self):
        return self.pixels.shape[0]


@dataclass
class SequenceManifest:
    fps: float = 10.0
    um_per_pixel: float = 1.0
    frame_pattern: str = "frame_%06d.pgm"
    frame_count: int = 1
    extra: dict = field(default_factory = dict)

    def __post_init__(self):
        if not self.fps > 0:
            raise ManifestError("fps must be > 0, got {}".format(self.fps))
        if not self.um_per_pixel > 0:
            raise ManifestError("umPerPixel must be > 0, got {}".format(self.um_per_pixel))
        if int(self.frame_count) != self.frame_count or self.frame_count < 1:
            raise ManifestError("frameCount must be an integer >= 1, got {}".format(self.frame_count))
        try:
            self.frame_pattern % 0
        except (TypeError, ValueError):
            raise ManifestError("framePattern needs one integer field, got {!r}".format(self.frame_pattern))
        self.frame_count = int(self.frame_count)

    def frame_name(self, index):
        return self.frame_pattern % index

    def timestamp(self, index):
        return index / self.fps

    def to_dict(self):
        out = dict(self.extra)
        out.update({"fps": self.fps, "umPerPixel": self.um_per_pixel,
                    "framePattern": self.frame_pattern, "frameCount": self.frame_count})
        return out

    @classmethod
    def from_dict(cls, data):
        missing = [k for k in ("fps", "umPerPixel", "framePattern", "frameCount") if k not in data]
        if missing:
            raise ManifestError("manifest lacks keys: {}".format(missing))
        extra = {k: v for k, v in data.items()
                    if k not in ("fps", "umPerPixel", "framePattern", "frameCount")}
        return cls(fps = data["fps"], um_per_pixel = data["umPerPixel"],
                    frame_pattern = data["framePattern"], frame_count = data["frameCount"],
                    extra = extra)


##====== PGM codec =============================================================

_WHITESPACE = b" \t\r\n"

def _header_tokens(data, count):
    ''' Pull `count` whitespace separated tokens, skipping '#' comments
    Returns tokens and offset of the single whitespace byte ending the last one
    '''
    tokens = []
    pos = 0
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos] in _WHITESPACE:
            pos += 1
        if pos >= n:
            raise PgmHeaderError("header ended after {} of {} tokens".format(len(tokens), count))
        if data[pos] == ord('#'):
            while pos < n and data[pos] not in b"\r\n":
                pos += 1
            continue
        start = pos
        while pos < n and data[pos] not in _WHITESPACE and data[pos] != ord('#'):
            pos += 1
        tokens.append(data[start:pos])
    if pos >= n or data[pos] not in _WHITESPACE:
        raise PgmHeaderError("header must end with a single whitespace byte")
    return tokens, pos


def decode_pgm(data):
    ''' Binary PGM bytes -> uint8 array of shape (height, width)
    '''
    data = bytes(data)
    if not data.startswith(b"P5"):
        raise PgmHeaderError("not a binary PGM: magic {!r}".format(data[:2]))
    tokens, pos = _header_tokens(data, 4)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise PgmHeaderError("non-integer header tokens {}".format(tokens[1:]))
    if tokens[0] != b"P5":
        raise PgmHeaderError("bad magic token {!r}".format(tokens[0]))
    if width < 1 or height < 1:
        raise PgmHeaderError("bad dimensions {}x{}".format(width, height))
    if maxval != 255:
        raise PgmMaxvalError("unsupported maxval {}".format(maxval))

    raster = data[pos + 1:]
    need = width * height
    if len(raster) < need:
        raise PgmTruncatedError("pixel data truncated: {} of {} bytes".format(len(raster), need))
    return np.frombuffer(raster[:need], dtype = np.uint8).reshape(height, width).copy()


def encode_pgm(frame):
    ''' Canonical P5 encoding of a Frame (or 2-D uint8 array)
    '''
    pixels = frame.pixels if isinstance(frame, Frame) else np.asarray(frame, dtype = np.uint8)
    height, width = pixels.shape
    header = "P5\n{} {}\n255\n".format(width, height).encode("ascii")
    return header + np.ascontiguousarray(pixels, dtype = np.uint8).tobytes()


def read_pgm(path):
    with open(path, "rb") as f:
        return decode_pgm(f.read())


def write_pgm(path, pixels):
    with open(path, "wb") as f:
        f.write(encode_pgm(pixels))
    return path


##====== Sequences =============================================================

def read_manifest(directory):
    path = os.path.join(directory, MANIFEST_NAME)
    if not os.path.isfile(path):
        raise ManifestError("no {} in {}".format(MANIFEST_NAME, directory))
    with open(path, 'r', encoding = "utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as err:
            raise ManifestError("unparseable manifest {}: {}".format(path, err))
    return SequenceManifest.from_dict(data)


def write_manifest(manifest, directory):
    path = os.path.join(directory, MANIFEST_NAME)
    with open(path, "w", encoding = "utf-8") as f:
        json.dump(manifest.to_dict(), f, indent = 4, sort_keys = True)
        f.write("\n")
    return path


def open_sequence(manifest, directory):
    ''' Frames in index order, one resident at a time
    Presence of every file is checked before the first frame is yielded.
    '''
    paths = [os.path.join(directory, manifest.frame_name(i)) for i in range(manifest.frame_count)]
    for i, p in enumerate(paths):
        if not os.path.isfile(p):
            raise MissingFrameError(i, p)
    logger.debug("opened sequence {} ({} frames @ {} fps)", directory,
                    manifest.frame_count, manifest.fps)
    return _stream(paths, manifest)


def _stream(paths, manifest):
    shape = None
    for i, p in enumerate(paths):
        if not os.path.isfile(p):
            raise MissingFrameError(i, p)
        pixels = read_pgm(p)
        if shape is None:
            shape = pixels.shape
        elif pixels.shape != shape:
            raise FrameShapeError("frame {} is {}x{}, sequence is {}x{}".format(
                                    i, pixels.shape[1], pixels.shape[0], shape[1], shape[0]))
        yield Frame(pixels, index = i, timestamp_s = manifest.timestamp(i))


def write_sequence(frames, manifest, directory):
    ''' Writes frames by manifest pattern, then the manifest itself
    '''
    os.makedirs(directory, exist_ok = True)
    count = 0
    for frame in frames:
        write_pgm(os.path.join(directory, manifest.frame_name(frame.index)), frame.pixels)
        count += 1
    if count != manifest.frame_count:
        raise ManifestError("wrote {} frames, manifest says {}".format(count, manifest.frame_count))
    write_manifest(manifest, directory)
    return directory

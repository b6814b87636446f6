''' Worm segmentation inside membrane interiors:
sliding-window local threshold, 8-connected blobs, area and perimeter/area filter.
'''

from dataclasses import dataclass

import numpy as np
from loguru import logger

from algorithms.vision_ops import VisionError, IntegralImage, as_pixels, connected_components
from utilities.frame_io import write_pgm
from utilities.logging_utils import fmt_float, write_csv_table


@dataclass(frozen = True)
class ThresholdConfig:
    window_w: int = 100
    window_h: int = 100
    ratio: float = 0.9

    def __post_init__(self):
        if not 0 < self.ratio < 1:
            raise VisionError("threshold ratio must be in (0, 1), got {}".format(self.ratio))
        if self.window_w < 3 or self.window_h < 3:
            raise VisionError("threshold window must be at least 3x3, got {}x{}".format(
                                self.window_w, self.window_h))


@dataclass(frozen = True)
class WormFilterConfig:
    min_area_px: int = 200
    max_area_px: int = 300
    min_pa: float = 0.5
    max_pa: float = 1.0
    max_merged_area_px: int = 1200   # larger blobs are never reported

    def __post_init__(self):
        if not 0 < self.min_area_px < self.max_area_px:
            raise VisionError("need 0 < min_area_px < max_area_px")
        if not 0 < self.min_pa < self.max_pa:
            raise VisionError("need 0 < min_pa < max_pa")
        if self.max_merged_area_px < self.max_area_px:
            raise VisionError("max_merged_area_px below max_area_px")


@dataclass
class Detection:
    frame_index: int
    centroid: tuple        # (x, y) bbox centre
    bbox: tuple            # (xmin, ymin, xmax, ymax), inclusive
    area_px: int
    perimeter_px: int
    membrane_id: int
    merged: bool = False   # oversized worm-like blob, input to the occlusion rule

    @property
    def bbox_area(self):
        xmin, ymin, xmax, ymax = self.bbox
        return (xmax - xmin + 1) * (ymax - ymin + 1)


##====== Operations ============================================================

def local_threshold(frame, cfg = ThresholdConfig()):
    ''' Foreground (True) where pixel < ratio * mean of the window centred on it.
    Window spans x - w//2 .. x + (w-1)//2, clamped; mean over in-bounds pixels.
    '''
    pixels = as_pixels(frame)
    sums, counts = IntegralImage(pixels).window_sums(cfg.window_w, cfg.window_h)
    return pixels < cfg.ratio * (sums / counts)


def _shape_ok(blob, cfg):
    return cfg.min_pa <= blob.perimeter / blob.area <= cfg.max_pa


def _worm_like(blob, cfg):
    return cfg.min_area_px <= blob.area <= cfg.max_area_px and _shape_ok(blob, cfg)


def classify_worms(blobs, cfg = WormFilterConfig()):
    ''' Inclusive area and P/A bounds; order preserved '''
    return [b for b in blobs if _worm_like(b, cfg)]


def _is_merged_pair(blob, cfg):
    return cfg.max_area_px < blob.area <= cfg.max_merged_area_px and _shape_ok(blob, cfg)


def segment_frame(frame, membranes, thr_cfg = ThresholdConfig(),
                  filt_cfg = WormFilterConfig(), frame_index = None):
    ''' Detections per membrane, membrane order then blob raster order
    Blobs straddling a membrane boundary are clipped to its interior first.
    '''
    pixels = as_pixels(frame)
    if frame_index is None:
        frame_index = getattr(frame, "index", 0)
    foreground = local_threshold(pixels, thr_cfg)

    detections = []
    for m in membranes:
        x0, y0, x1, y1 = m.bbox
        crop = foreground[y0:y1 + 1, x0:x1 + 1] & m.mask[y0:y1 + 1, x0:x1 + 1]
        blobs = connected_components(crop, connectivity = 8, offset = (x0, y0))
        for b in blobs:
            merged = _is_merged_pair(b, filt_cfg)
            if not merged and not _worm_like(b, filt_cfg):
                continue
            detections.append(Detection(frame_index = frame_index, centroid = b.centroid,
                                        bbox = b.bbox, area_px = b.area,
                                        perimeter_px = b.perimeter,
                                        membrane_id = m.id, merged = merged))
    logger.debug("frame {}: {} detections", frame_index, len(detections))
    return detections


##====== Debug output ==========================================================

def write_detections_csv(detections, path):
    rows = [[d.frame_index, d.membrane_id, fmt_float(d.centroid[0]),
             fmt_float(d.centroid[1]), d.area_px, d.perimeter_px, int(d.merged)]
                for d in detections]
    return write_csv_table(path, ["frame", "membraneId", "cx", "cy", "area",
                                  "perimeter", "merged"], rows)


def dump_mask(mask, path):
    ''' Binary mask as 0/255 PGM '''
    return write_pgm(path, np.where(mask, 255, 0).astype(np.uint8))

''' Stateless pixel primitives shared by membrane detection and worm segmentation
Gradients, smoothing, summed-area tables, 8-connected blob statistics.
'''

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

_EIGHT_CONNECT = np.ones((3, 3), dtype = bool)
_FOUR_CONNECT = ndimage.generate_binary_structure(2, 1)


class VisionError(Exception):
    pass


def as_pixels(image):
    ''' Frame or array -> 2-D ndarray (no copy when possible)
    '''
    pixels = getattr(image, "pixels", image)
    pixels = np.asarray(pixels)
    if pixels.ndim != 2:
        raise VisionError("expected a 2-D image, got shape {}".format(pixels.shape))
    return pixels


##====== Gradients =============================================================

@dataclass
class GradientField:
    gx: np.ndarray
    gy: np.ndarray
    magnitude: np.ndarray


def sobel(image):
    ''' 3x3 Sobel with edge replication
    gx is the derivative along columns (x), gy along rows (y)
    '''
    pixels = as_pixels(image)
    if pixels.shape[0] < 3 or pixels.shape[1] < 3:
        raise VisionError("image {}x{} smaller than the 3x3 kernel".format(
                            pixels.shape[1], pixels.shape[0]))
    img = pixels.astype(np.float64)
    gx = ndimage.sobel(img, axis = 1, mode = "nearest")
    gy = ndimage.sobel(img, axis = 0, mode = "nearest")
    return GradientField(gx = gx, gy = gy, magnitude = np.hypot(gx, gy))


def gaussian_kernel(sigma):
    radius = int(math.ceil(3 * sigma))
    x = np.arange(-radius, radius + 1, dtype = np.float64)
    kern = np.exp(-0.5 * (x / sigma) ** 2)
    return kern / kern.sum()


def gaussian_blur(image, sigma):
    ''' Separable Gaussian, radius ceil(3 sigma), replicated borders
    sigma 0 returns the input unchanged (as float64)
    '''
    if sigma < 0:
        raise VisionError("negative sigma {}".format(sigma))
    img = as_pixels(image).astype(np.float64)
    if sigma == 0:
        return img
    kern = gaussian_kernel(sigma)
    out = ndimage.correlate1d(img, kern, axis = 0, mode = "nearest")
    return ndimage.correlate1d(out, kern, axis = 1, mode = "nearest")


def block_downscale(image, factor):
    ''' Block averaging by an integer factor; trailing partial blocks are dropped
    '''
    pixels = as_pixels(image).astype(np.float64)
    if factor < 1 or int(factor) != factor:
        raise VisionError("downscale factor must be an integer >= 1, got {}".format(factor))
    factor = int(factor)
    if factor == 1:
        return pixels
    h = pixels.shape[0] // factor
    w = pixels.shape[1] // factor
    if h < 1 or w < 1:
        raise VisionError("image {}x{} too small for downscale {}".format(
                            pixels.shape[1], pixels.shape[0], factor))
    blocks = pixels[:h * factor, :w * factor].reshape(h, factor, w, factor)
    return blocks.mean(axis = (1, 3))


##====== Integral image ========================================================

class IntegralImage():
    ''' Summed-area table with a zero top row / left column, int64 accumulators
    '''
    def __init__(self, image):
        pixels = as_pixels(image)
        self.height, self.width = pixels.shape
        self.table = np.zeros((self.height + 1, self.width + 1), dtype = np.int64)
        np.cumsum(np.cumsum(pixels.astype(np.int64), axis = 0), axis = 1,
                    out = self.table[1:, 1:])

    def _clamp(self, x0, y0, x1, y1):
        x0 = max(0, x0); y0 = max(0, y0)
        x1 = min(self.width - 1, x1); y1 = min(self.height - 1, y1)
        return x0, y0, x1, y1

    def rect_sum(self, x0, y0, x1, y1):
        ''' Inclusive window sum, clamped to the image
        '''
        x0, y0, x1, y1 = self._clamp(x0, y0, x1, y1)
        if x1 < x0 or y1 < y0:
            return 0
        t = self.table
        return int(t[y1 + 1, x1 + 1] - t[y0, x1 + 1] - t[y1 + 1, x0] + t[y0, x0])

    def window_sums(self, window_w, window_h):
        ''' Sum and in-bounds count of the window centred on every pixel
        Window spans x - w//2 .. x + (w-1)//2 (same for y), clamped.
        '''
        ys = np.arange(self.height)
        xs = np.arange(self.width)
        y0 = np.clip(ys - window_h // 2, 0, self.height - 1)
        y1 = np.clip(ys + (window_h - 1) // 2, 0, self.height - 1) + 1
        x0 = np.clip(xs - window_w // 2, 0, self.width - 1)
        x1 = np.clip(xs + (window_w - 1) // 2, 0, self.width - 1) + 1
        t = self.table
        sums = (t[np.ix_(y1, x1)] - t[np.ix_(y0, x1)]
                - t[np.ix_(y1, x0)] + t[np.ix_(y0, x0)])
        counts = np.outer(y1 - y0, x1 - x0).astype(np.int64)
        return sums, counts


def integral(image):
    return IntegralImage(image)


##====== Connected components ==================================================

@dataclass
class Blob:
    label: int
    area: int
    perimeter: int
    bbox: tuple        # (xmin, ymin, xmax, ymax), inclusive
    centroid: tuple    # bbox centre (x, y)

    @property
    def pa_ratio(self):
        return self.perimeter / self.area

    @property
    def bbox_area(self):
        xmin, ymin, xmax, ymax = self.bbox
        return (xmax - xmin + 1) * (ymax - ymin + 1)


def _edge_perimeters(labels, count):
    ''' Per label count of 4-neighbour pixel edges facing background or border
    '''
    padded = np.pad(labels, 1, mode = "constant", constant_values = 0)
    core = padded[1:-1, 1:-1]
    perim = np.zeros(count + 1, dtype = np.int64)
    for shifted in (padded[:-2, 1:-1], padded[2:, 1:-1],
                    padded[1:-1, :-2], padded[1:-1, 2:]):
        facing = core[(core > 0) & (shifted == 0)]
        perim += np.bincount(facing, minlength = count + 1)
    return perim


def label_mask(mask, connectivity = 8):
    if connectivity == 8:
        structure = _EIGHT_CONNECT
    elif connectivity == 4:
        structure = _FOUR_CONNECT
    else:
        raise VisionError("connectivity must be 4 or 8, got {}".format(connectivity))
    return ndimage.label(np.asarray(mask, dtype = bool), structure = structure)


def connected_components(mask, connectivity = 8, offset = (0, 0)):
    ''' Blobs of a binary mask with area, edge-count perimeter and bbox centre
    offset: (x, y) added to reported coordinates, for masks cut from a larger frame
    Labels follow raster order of each blob's first pixel.
    '''
    labels, count = label_mask(mask, connectivity)
    if count == 0:
        return []
    areas = np.bincount(labels.ravel(), minlength = count + 1)
    perims = _edge_perimeters(labels, count)
    ox, oy = offset
    blobs = []
    for lab, slc in enumerate(ndimage.find_objects(labels), start = 1):
        ys, xs = slc
        xmin = xs.start + ox; xmax = xs.stop - 1 + ox
        ymin = ys.start + oy; ymax = ys.stop - 1 + oy
        blobs.append(Blob(label = lab, area = int(areas[lab]),
                          perimeter = int(perims[lab]),
                          bbox = (xmin, ymin, xmax, ymax),
                          centroid = ((xmin + xmax) / 2.0, (ymin + ymax) / 2.0)))
    return blobs

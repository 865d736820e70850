"""Crop-and-zoom: displayed-space bbox -> original pixels -> margin -> clamp -> resize."""

from __future__ import annotations

import io
from dataclasses import dataclass

from PIL import Image, UnidentifiedImageError

from .grammar import DEFAULT_DISPLAYED_SPACE
from .trajectory import PageRef

DEFAULT_MARGIN_PX = 28
DEFAULT_LONG_SIDE = 1024
PAD_COLOR = (255, 255, 255)

Box = tuple[int, int, int, int]


class VisionError(Exception):
    pass


class DegenerateRegion(VisionError):
    pass


class DecodeFailure(VisionError):
    pass


class RegionOutOfBounds(VisionError):
    pass


@dataclass(frozen=True)
class CropRequest:
    page: PageRef
    bbox_displayed: Box
    displayed_space: tuple[int, int] = DEFAULT_DISPLAYED_SPACE
    margin_px: int = DEFAULT_MARGIN_PX
    output_size: tuple[int, int] | None = None

    def __post_init__(self) -> None:
        x1, y1, x2, y2 = self.bbox_displayed
        w, h = self.displayed_space
        if not (0 <= x1 < x2 <= w and 0 <= y1 < y2 <= h):
            raise ValueError(f"bbox {self.bbox_displayed} is not inside displayed space {self.displayed_space}")
        if self.margin_px < 0:
            raise ValueError("margin_px must be non-negative")


@dataclass(frozen=True)
class CropRegion:
    rect_original: Box


def _floor_div(a: int, b: int) -> int:
    return a // b


def _ceil_div(a: int, b: int) -> int:
    return -((-a) // b)


def scale_to_original(bbox: Box, displayed_space: tuple[int, int], page: PageRef) -> Box:
    """Exact rational scaling; the min corner rounds down and the max corner rounds up."""
    x1, y1, x2, y2 = bbox
    dw, dh = displayed_space
    W, H = page.width_px, page.height_px
    return (
        _floor_div(x1 * W, dw),
        _floor_div(y1 * H, dh),
        _ceil_div(x2 * W, dw),
        _ceil_div(y2 * H, dh),
    )


def clamp(rect: Box, width: int, height: int) -> Box:
    x1, y1, x2, y2 = rect
    return (min(max(x1, 0), width), min(max(y1, 0), height), min(max(x2, 0), width), min(max(y2, 0), height))


def map_and_expand(req: CropRequest) -> CropRegion:
    x1, y1, x2, y2 = scale_to_original(req.bbox_displayed, req.displayed_space, req.page)
    m = req.margin_px
    rect = clamp((x1 - m, y1 - m, x2 + m, y2 + m), req.page.width_px, req.page.height_px)
    if rect[0] >= rect[2] or rect[1] >= rect[3]:
        raise DegenerateRegion(f"region {rect} has zero area on page {req.page.page_id!r}")
    return CropRegion(rect)


def default_output_size(region: CropRegion, long_side: int = DEFAULT_LONG_SIDE) -> tuple[int, int]:
    x1, y1, x2, y2 = region.rect_original
    w, h = x2 - x1, y2 - y1
    scale = long_side / max(w, h)
    return max(1, round(w * scale)), max(1, round(h * scale))


def crop_image(
    image_bytes: bytes,
    region: CropRegion,
    output_size: tuple[int, int] | None = None,
    resample: int = Image.Resampling.LANCZOS,
) -> bytes:
    """Cut ``region`` out of the image and fit it into ``output_size``.

    Aspect ratio is kept; leftover area is padded white. Returns PNG bytes.
    """
    try:
        img = Image.open(io.BytesIO(image_bytes))
        img.load()
    except (UnidentifiedImageError, OSError) as e:
        raise DecodeFailure(str(e)) from e
    img = img.convert("RGB")
    x1, y1, x2, y2 = region.rect_original
    if not (0 <= x1 < x2 <= img.width and 0 <= y1 < y2 <= img.height):
        raise RegionOutOfBounds(f"region {region.rect_original} outside image {img.size}")
    if output_size is None:
        output_size = default_output_size(region)
    out_w, out_h = output_size
    sub = img.crop((x1, y1, x2, y2))
    scale = min(out_w / sub.width, out_h / sub.height)
    fit = (min(out_w, max(1, round(sub.width * scale))), min(out_h, max(1, round(sub.height * scale))))
    sub = sub.resize(fit, resample=resample)
    canvas = Image.new("RGB", (out_w, out_h), PAD_COLOR)
    canvas.paste(sub, ((out_w - fit[0]) // 2, (out_h - fit[1]) // 2))
    buf = io.BytesIO()
    canvas.save(buf, format="PNG")
    return buf.getvalue()

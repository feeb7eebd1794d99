import { DisplayBox, ImagePoint } from "./types.js";

/**
 * Convert a pointer position to continuous intrinsic-image coordinates.
 *
 * The mapping divides by the on-screen box size, so any uniform scaling
 * of the displayed image — CSS width, browser zoom, devicePixelRatio —
 * cancels out: the same spot on the picture gives the same intrinsic
 * coordinates at every zoom level. Results are clamped to the image so
 * drags that wander outside still produce usable corner points.
 */
export function clientToImage(
  clientX: number,
  clientY: number,
  box: DisplayBox,
  naturalWidth: number,
  naturalHeight: number,
): ImagePoint | null {
  if (box.width <= 0 || box.height <= 0) return null;
  if (naturalWidth <= 0 || naturalHeight <= 0) return null;
  const x = ((clientX - box.left) / box.width) * naturalWidth;
  const y = ((clientY - box.top) / box.height) * naturalHeight;
  return {
    x: Math.max(0, Math.min(naturalWidth, x)),
    y: Math.max(0, Math.min(naturalHeight, y)),
  };
}

/** Intrinsic-image rect corners back to on-screen (CSS) coordinates. */
export function imageToClient(
  point: ImagePoint,
  box: DisplayBox,
  naturalWidth: number,
  naturalHeight: number,
): { x: number; y: number } {
  return {
    x: box.left + (point.x / naturalWidth) * box.width,
    y: box.top + (point.y / naturalHeight) * box.height,
  };
}

import { CorrectionAction, ImagePoint, PixelRect } from "./types.js";

/**
 * Turn a drag gesture (two continuous image points) into a pixel rect.
 *
 * The rect is the half-open pixel window covering everything the drag
 * swept over: floor of the low edge, ceil of the high edge, clamped to
 * the image. A drag with no extent along either axis selects nothing
 * and returns null — a plain click never creates a rectangle.
 */
export function dragToRect(
  a: ImagePoint,
  b: ImagePoint,
  width: number,
  height: number,
  action: CorrectionAction,
): PixelRect | null {
  if (a.x === b.x || a.y === b.y) return null;
  const x0 = Math.max(0, Math.floor(Math.min(a.x, b.x)));
  const y0 = Math.max(0, Math.floor(Math.min(a.y, b.y)));
  const x1 = Math.min(width, Math.ceil(Math.max(a.x, b.x)));
  const y1 = Math.min(height, Math.ceil(Math.max(a.y, b.y)));
  if (x1 <= x0 || y1 <= y0) return null;
  return { x0, y0, x1, y1, action };
}

/** True when the rect contains the pixel (x, y). */
export function rectContains(rect: PixelRect, x: number, y: number): boolean {
  return x >= rect.x0 && x < rect.x1 && y >= rect.y0 && y < rect.y1;
}

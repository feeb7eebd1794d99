/** Shared shapes for the label-correction UI. */

/** One row of GET /api/scans. */
export interface ScanSummary {
  id: string;
  corrected: boolean;
  workpiece: string | null;
  bin: string | null;
}

/** Decoded form of GET /api/scans/{id}/labels. */
export interface LabelsDoc {
  width: number;
  height: number;
  /** Row-major label raster, 0 = background, 1 = workpiece. */
  labels: Uint8Array;
  revision: number;
}

export type CorrectionAction = "to_non_workpiece" | "to_workpiece";

/** Half-open pixel rectangle [x0, x1) x [y0, y1) in image coordinates. */
export interface PixelRect {
  x0: number;
  y0: number;
  x1: number;
  y1: number;
  action: CorrectionAction;
}

/** A point in continuous intrinsic-image coordinates (pixels, unfloored). */
export interface ImagePoint {
  x: number;
  y: number;
}

/** Where and how large the image is drawn on screen right now. */
export interface DisplayBox {
  left: number;
  top: number;
  width: number;
  height: number;
}

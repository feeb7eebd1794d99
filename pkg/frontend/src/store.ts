import { StaleRevisionError } from "./api.js";
import { dragToRect } from "./rects.js";
import {
  CorrectionAction,
  ImagePoint,
  LabelsDoc,
  PixelRect,
  ScanSummary,
} from "./types.js";

/** The slice of ApiClient the session logic needs; fakes implement this. */
export interface ScanApi {
  listScans(): Promise<ScanSummary[]>;
  getLabels(scanId: string): Promise<LabelsDoc>;
  submitCorrections(
    scanId: string,
    revision: number,
    rects: PixelRect[],
  ): Promise<number>;
  commit(scanId: string): Promise<void>;
}

/**
 * UI state machine, kept free of DOM so the correction flows are
 * testable. Label data is server-authoritative: `labels` is only ever
 * assigned from API responses, never edited in place — after a submit
 * the raster is re-fetched rather than patched locally.
 */
export class Session {
  scans: ScanSummary[] = [];
  apiDown = false;
  currentId: string | null = null;
  labels: LabelsDoc | null = null;
  pending: PixelRect[] = [];
  dragStart: ImagePoint | null = null;
  dragPoint: ImagePoint | null = null;
  toast: string | null = null;
  action: CorrectionAction = "to_non_workpiece";
  onChange: () => void = () => {};

  constructor(private readonly api: ScanApi) {}

  private changed(): void {
    this.onChange();
  }

  async refreshScans(): Promise<void> {
    try {
      this.scans = await this.api.listScans();
      this.apiDown = false;
    } catch {
      this.apiDown = true;
    }
    this.changed();
  }

  async openScan(scanId: string): Promise<void> {
    try {
      this.labels = await this.api.getLabels(scanId);
      this.currentId = scanId;
      this.pending = [];
      this.dragStart = this.dragPoint = null;
    } catch (err) {
      this.toast = `could not load ${scanId}: ${(err as Error).message}`;
    }
    this.changed();
  }

  beginDrag(point: ImagePoint): void {
    this.dragStart = this.dragPoint = point;
    this.changed();
  }

  moveDrag(point: ImagePoint): void {
    if (!this.dragStart) return;
    this.dragPoint = point;
    this.changed();
  }

  /** Finish the drag; zero-extent gestures create nothing. */
  endDrag(point: ImagePoint): void {
    if (!this.dragStart || !this.labels) {
      this.dragStart = this.dragPoint = null;
      return;
    }
    const rect = dragToRect(
      this.dragStart,
      point,
      this.labels.width,
      this.labels.height,
      this.action,
    );
    if (rect) this.pending.push(rect);
    this.dragStart = this.dragPoint = null;
    this.changed();
  }

  /** Escape: drop the in-progress drag, keep already-previewed rects. */
  cancelDrag(): void {
    this.dragStart = this.dragPoint = null;
    this.changed();
  }

  removePending(index: number): void {
    this.pending.splice(index, 1);
    this.changed();
  }

  /**
   * POST pending rects at the current revision, then re-fetch labels so
   * the display reflects exactly what the server stored. On a stale
   * revision the labels are reloaded and the pending rects stay as
   * previews — the user confirms them against the fresh state by
   * submitting again.
   */
  async submitPending(): Promise<void> {
    if (!this.currentId || !this.labels || this.pending.length === 0) return;
    const scanId = this.currentId;
    try {
      await this.api.submitCorrections(scanId, this.labels.revision, this.pending);
      this.pending = [];
      this.labels = await this.api.getLabels(scanId);
    } catch (err) {
      if (err instanceof StaleRevisionError) {
        this.labels = await this.api.getLabels(scanId);
        this.toast =
          "labels changed elsewhere; reloaded — confirm the pending rectangles";
      } else {
        this.toast = `submit failed: ${(err as Error).message}`;
      }
    }
    this.changed();
  }

  /**
   * Persist the scan. On success the scan is badged corrected and the
   * view advances to the next uncorrected scan; on failure nothing
   * changes beyond a toast.
   */
  async commitScan(): Promise<void> {
    if (!this.currentId) return;
    const scanId = this.currentId;
    try {
      await this.api.commit(scanId);
    } catch (err) {
      this.toast = `commit failed: ${(err as Error).message}`;
      this.changed();
      return;
    }
    const entry = this.scans.find((s) => s.id === scanId);
    if (entry) entry.corrected = true;
    const next = this.nextUncorrected(scanId);
    if (next) {
      await this.openScan(next);
    } else {
      this.toast = "all scans corrected";
      this.changed();
    }
  }

  /** Next uncorrected scan after the given one, wrapping around. */
  nextUncorrected(after: string): string | null {
    const ids = this.scans.map((s) => s.id);
    const start = ids.indexOf(after);
    for (let step = 1; step <= ids.length; step++) {
      const candidate = this.scans[(start + step) % ids.length];
      if (candidate && !candidate.corrected) return candidate.id;
    }
    return null;
  }

  setAction(action: CorrectionAction): void {
    this.action = action;
    this.changed();
  }

  clearToast(): void {
    this.toast = null;
    this.changed();
  }
}

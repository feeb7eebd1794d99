import { ApiClient } from "./api.js";
import { clientToImage } from "./coords.js";
import { Session } from "./store.js";
import { DisplayBox, ImagePoint, PixelRect } from "./types.js";

const api = new ApiClient();
const session = new Session(api);

const banner = document.getElementById("banner") as HTMLDivElement;
const retryButton = document.getElementById("retry") as HTMLButtonElement;
const toast = document.getElementById("toast") as HTMLDivElement;
const scanList = document.getElementById("scan-list") as HTMLUListElement;
const render = document.getElementById("render") as HTMLImageElement;
const overlay = document.getElementById("overlay") as HTMLCanvasElement;
const actionToggle = document.getElementById("action-toggle") as HTMLInputElement;
const submitButton = document.getElementById("submit") as HTMLButtonElement;
const commitButton = document.getElementById("commit") as HTMLButtonElement;
const scanTitle = document.getElementById("scan-title") as HTMLElement;

let shownRenderUrl = "";
let toastTimer: number | undefined;

function displayBox(): DisplayBox {
  const rect = render.getBoundingClientRect();
  return { left: rect.left, top: rect.top, width: rect.width, height: rect.height };
}

function pointerToImage(event: PointerEvent): ImagePoint | null {
  if (!session.labels) return null;
  return clientToImage(
    event.clientX,
    event.clientY,
    displayBox(),
    session.labels.width,
    session.labels.height,
  );
}

function drawRect(ctx: CanvasRenderingContext2D, rect: PixelRect): void {
  if (!session.labels) return;
  const sx = overlay.width / session.labels.width;
  const sy = overlay.height / session.labels.height;
  ctx.strokeStyle = "#00c853";
  ctx.lineWidth = 2;
  ctx.strokeRect(
    rect.x0 * sx,
    rect.y0 * sy,
    (rect.x1 - rect.x0) * sx,
    (rect.y1 - rect.y0) * sy,
  );
}

function drawOverlay(): void {
  overlay.width = render.clientWidth;
  overlay.height = render.clientHeight;
  const ctx = overlay.getContext("2d");
  if (!ctx || !session.labels) return;
  ctx.clearRect(0, 0, overlay.width, overlay.height);
  for (const rect of session.pending) drawRect(ctx, rect);
  if (session.dragStart && session.dragPoint) {
    const sx = overlay.width / session.labels.width;
    const sy = overlay.height / session.labels.height;
    const x = Math.min(session.dragStart.x, session.dragPoint.x) * sx;
    const y = Math.min(session.dragStart.y, session.dragPoint.y) * sy;
    const w = Math.abs(session.dragPoint.x - session.dragStart.x) * sx;
    const h = Math.abs(session.dragPoint.y - session.dragStart.y) * sy;
    ctx.strokeStyle = "#00c853";
    ctx.setLineDash([6, 4]);
    ctx.strokeRect(x, y, w, h);
    ctx.setLineDash([]);
  }
}

function drawScanList(): void {
  scanList.replaceChildren();
  if (session.scans.length === 0) {
    const empty = document.createElement("li");
    empty.className = "empty";
    empty.textContent = "no scans in this dataset";
    scanList.append(empty);
    return;
  }
  for (const scan of session.scans) {
    const item = document.createElement("li");
    const button = document.createElement("button");
    button.textContent = scan.id;
    button.classList.toggle("active", scan.id === session.currentId);
    button.addEventListener("click", () => void session.openScan(scan.id));
    item.append(button);
    if (scan.corrected) {
      const badge = document.createElement("span");
      badge.className = "badge";
      badge.textContent = "corrected";
      item.append(badge);
    }
    scanList.append(item);
  }
}

function draw(): void {
  banner.hidden = !session.apiDown;

  if (session.toast) {
    toast.textContent = session.toast;
    toast.hidden = false;
    window.clearTimeout(toastTimer);
    toastTimer = window.setTimeout(() => session.clearToast(), 4000);
  } else {
    toast.hidden = true;
  }

  drawScanList();

  const scan = session.currentId;
  scanTitle.textContent = scan ?? "select a scan";
  submitButton.disabled = session.pending.length === 0;
  commitButton.disabled = scan === null;

  if (scan && session.labels) {
    const url = api.renderUrl(scan, session.labels.revision);
    if (url !== shownRenderUrl) {
      shownRenderUrl = url;
      render.src = url;
    }
    drawOverlay();
  }
}

session.onChange = draw;

render.addEventListener("load", drawOverlay);

overlay.addEventListener("pointerdown", (event) => {
  const point = pointerToImage(event);
  if (!point) return;
  overlay.setPointerCapture(event.pointerId);
  session.beginDrag(point);
});

overlay.addEventListener("pointermove", (event) => {
  const point = pointerToImage(event);
  if (point) session.moveDrag(point);
});

overlay.addEventListener("pointerup", (event) => {
  const point = pointerToImage(event);
  if (point) session.endDrag(point);
  else session.cancelDrag();
});

window.addEventListener("keydown", (event) => {
  if (event.key === "Escape") session.cancelDrag();
});

actionToggle.addEventListener("change", () => {
  session.setAction(actionToggle.checked ? "to_workpiece" : "to_non_workpiece");
});

submitButton.addEventListener("click", () => void session.submitPending());
commitButton.addEventListener("click", () => void session.commitScan());
retryButton.addEventListener("click", () => void session.refreshScans());
toast.addEventListener("click", () => session.clearToast());

void (async () => {
  await session.refreshScans();
  const first = session.scans.find((s) => !s.corrected) ?? session.scans[0];
  if (first) await session.openScan(first.id);
})();

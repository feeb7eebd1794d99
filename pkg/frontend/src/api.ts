import { LabelsDoc, PixelRect, ScanSummary } from "./types.js";

/** Non-2xx response other than a stale-revision conflict. */
export class ApiError extends Error {
  constructor(
    message: string,
    public readonly status: number,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

/** 409 from the corrections endpoint; carries the server's revision. */
export class StaleRevisionError extends Error {
  constructor(public readonly currentRevision: number) {
    super(`revision is stale (current ${currentRevision})`);
    this.name = "StaleRevisionError";
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

function decodeBase64(data: string): Uint8Array {
  const binary = atob(data);
  const out = new Uint8Array(binary.length);
  for (let i = 0; i < binary.length; i++) out[i] = binary.charCodeAt(i);
  return out;
}

async function errorDetail(response: Response): Promise<string> {
  try {
    const body = await response.json();
    if (body && typeof body.detail === "string") return body.detail;
  } catch {
    // non-JSON error body; fall through to the status line
  }
  return `request failed with status ${response.status}`;
}

/** Thin typed wrapper over the correction service HTTP API. */
export class ApiClient {
  constructor(
    private readonly base: string = "",
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  async listScans(): Promise<ScanSummary[]> {
    const response = await this.fetchFn(`${this.base}/api/scans`);
    if (!response.ok) throw new ApiError(await errorDetail(response), response.status);
    return (await response.json()) as ScanSummary[];
  }

  async getLabels(scanId: string): Promise<LabelsDoc> {
    const response = await this.fetchFn(`${this.base}/api/scans/${scanId}/labels`);
    if (!response.ok) throw new ApiError(await errorDetail(response), response.status);
    const doc = await response.json();
    return {
      width: doc.width,
      height: doc.height,
      labels: decodeBase64(doc.labels),
      revision: doc.revision,
    };
  }

  /** Image URL for the scan's rendering; revision busts stale caches. */
  renderUrl(scanId: string, revision: number): string {
    return `${this.base}/api/scans/${scanId}/render.png?rev=${revision}`;
  }

  async submitCorrections(
    scanId: string,
    revision: number,
    rects: PixelRect[],
  ): Promise<number> {
    const response = await this.fetchFn(
      `${this.base}/api/scans/${scanId}/corrections`,
      {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ revision, rects }),
      },
    );
    if (response.status === 409) {
      const body = await response.json();
      throw new StaleRevisionError(body.revision as number);
    }
    if (!response.ok) throw new ApiError(await errorDetail(response), response.status);
    const body = await response.json();
    return body.revision as number;
  }

  async commit(scanId: string): Promise<void> {
    const response = await this.fetchFn(`${this.base}/api/scans/${scanId}/commit`, {
      method: "POST",
    });
    if (!response.ok) throw new ApiError(await errorDetail(response), response.status);
  }
}

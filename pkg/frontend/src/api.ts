/** Thin typed client for the dispatch service.  Every mutation the console
 * performs goes through these documented endpoints; there is no hidden
 * state on the client side. */
import type {
  AssetKind,
  FeatureCollection,
  OrderDoc,
  PingDoc,
  PlanResponse,
  RevisionDoc,
} from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

/** Non-2xx responses carry the server's body verbatim so the notification
 * pane can show exactly what the service said. */
export class ApiError extends Error {
  constructor(
    public status: number,
    public body: unknown,
    public path: string,
  ) {
    super(`${status} from ${path}: ${JSON.stringify(body)}`);
    this.name = "ApiError";
  }
}

export class ApiClient {
  constructor(
    private baseUrl: string,
    private token: string | null = null,
    private fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  setToken(token: string | null): void {
    this.token = token;
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const headers: Record<string, string> = { "Content-Type": "application/json" };
    if (this.token) headers["Authorization"] = `Bearer ${this.token}`;
    const res = await this.fetchFn(this.baseUrl + path, {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    let parsed: unknown = null;
    const text = await res.text();
    if (text) {
      try {
        parsed = JSON.parse(text);
      } catch {
        parsed = text;
      }
    }
    if (!res.ok) throw new ApiError(res.status, parsed, path);
    return parsed as T;
  }

  health(): Promise<{ status: string }> {
    return this.request("GET", "/api/v1/healthz");
  }

  uploadOrders(orders: OrderDoc[]): Promise<{ stored: string[] }> {
    return this.request("POST", "/api/v1/orders", orders);
  }

  listOrders(): Promise<OrderDoc[]> {
    return this.request("GET", "/api/v1/orders");
  }

  listAssets<T>(kind: AssetKind): Promise<T[]> {
    return this.request("GET", `/api/v1/assets/${kind}`);
  }

  saveAsset(kind: AssetKind, doc: unknown): Promise<{ stored: string[] }> {
    return this.request("POST", `/api/v1/assets/${kind}`, doc);
  }

  requestPlan(body: Record<string, unknown>): Promise<{ plan_id: string }> {
    return this.request("POST", "/api/v1/plans", body);
  }

  getPlan(planId: string): Promise<PlanResponse> {
    return this.request("GET", `/api/v1/plans/${planId}`);
  }

  getRevisions(planId: string): Promise<RevisionDoc[]> {
    return this.request("GET", `/api/v1/plans/${planId}/revisions`);
  }

  postEvent(body: Record<string, unknown>): Promise<Record<string, unknown>> {
    return this.request("POST", "/api/v1/events", body);
  }

  track(vehicleId: string, since = 0): Promise<{ vehicle_id: string; pings: PingDoc[] }> {
    return this.request("GET", `/api/v1/vehicles/${vehicleId}/track?since=${since}`);
  }

  geojsonOf(plan: PlanResponse): FeatureCollection {
    return plan.geojson ?? { type: "FeatureCollection", features: [] };
  }
}

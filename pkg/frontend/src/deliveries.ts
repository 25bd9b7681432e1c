/** Deliveries tab: upload orders, trigger planning, render routes, inject
 * live events and watch replans arrive through the poll loop. */
import { ApiClient, ApiError } from "./api.js";
import { buildLayers, changedVehicles, MapLayers } from "./mapview.js";
import { parseOrderFile } from "./validation.js";
import type { PlanDoc, PlanResponse } from "./types.js";

export interface Notification {
  level: "info" | "error";
  text: string;
}

export interface DeliveriesView {
  planId: string | null;
  planStatus: "idle" | "solving" | "ready" | "failed";
  layers: MapLayers | null;
  unassigned: string[];
  notifications: Notification[];
}

const MAX_NOTIFICATIONS = 50;

export class DeliveriesController {
  readonly view: DeliveriesView = {
    planId: null,
    planStatus: "idle",
    layers: null,
    unassigned: [],
    notifications: [],
  };
  private lastPlan: PlanDoc | null = null;
  private polling = false;
  onRender: (view: DeliveriesView) => void = () => {};

  constructor(
    private api: ApiClient,
    public pollIntervalMs = 2000,
  ) {}

  private notify(level: Notification["level"], text: string): void {
    this.view.notifications.unshift({ level, text });
    this.view.notifications.splice(MAX_NOTIFICATIONS);
  }

  private report(exc: unknown): void {
    // Server bodies are surfaced verbatim; anything else becomes a banner.
    if (exc instanceof ApiError) {
      this.notify("error", `${exc.status} ${exc.path}: ${JSON.stringify(exc.body)}`);
    } else {
      this.notify("error", `service unreachable: ${exc}`);
    }
    this.onRender(this.view);
  }

  async uploadOrders(fileText: string): Promise<number> {
    const { orders, problems } = parseOrderFile(fileText);
    for (const p of problems) this.notify("error", p);
    if (orders.length === 0) {
      this.onRender(this.view);
      return 0;
    }
    try {
      const res = await this.api.uploadOrders(orders);
      this.notify("info", `stored ${res.stored.length} orders`);
      this.onRender(this.view);
      return res.stored.length;
    } catch (exc) {
      this.report(exc);
      return 0;
    }
  }

  async plan(departTime = 0): Promise<string | null> {
    try {
      const res = await this.api.requestPlan({ depart_time: departTime });
      this.view.planId = res.plan_id;
      this.view.planStatus = "solving";
      this.lastPlan = null;
      this.notify("info", `plan ${res.plan_id} solving`);
      this.onRender(this.view);
      return res.plan_id;
    } catch (exc) {
      this.report(exc);
      return null;
    }
  }

  /** One poll step; the render always uses a single response so routes,
   * points and the revision badge never mix revisions. */
  async poll(): Promise<void> {
    if (this.view.planId === null || this.polling) return;
    this.polling = true;
    try {
      const res: PlanResponse = await this.api.getPlan(this.view.planId);
      if (res.status === "failed") {
        this.view.planStatus = "failed";
        this.notify("error", `plan failed: ${res.error}`);
      } else if (res.status === "ready" && res.plan && res.geojson) {
        const highlight = changedVehicles(this.lastPlan, res.plan);
        const isNewRevision =
          this.lastPlan === null || res.plan.revision !== this.lastPlan.revision;
        this.view.planStatus = "ready";
        this.view.unassigned = res.plan.unassigned;
        if (isNewRevision) {
          this.view.layers = buildLayers(res.plan, res.geojson, highlight);
          if (this.lastPlan !== null) {
            this.notify(
              "info",
              `revision ${res.plan.revision}: ${highlight.size} route(s) changed`,
            );
          }
          this.lastPlan = res.plan;
        }
      }
      this.onRender(this.view);
    } catch (exc) {
      this.report(exc);
    } finally {
      this.polling = false;
    }
  }

  /** Event injection from the map popup / toolbar. */
  async injectEvent(kind: string, payload: Record<string, unknown>): Promise<boolean> {
    if (this.view.planId === null) {
      this.notify("error", "no active plan to send events to");
      this.onRender(this.view);
      return false;
    }
    try {
      await this.api.postEvent({ plan_id: this.view.planId, kind, payload });
      this.notify("info", `${kind} accepted`);
      this.onRender(this.view);
      return true;
    } catch (exc) {
      this.report(exc);
      return false;
    }
  }

  cancelOrder(orderId: string): Promise<boolean> {
    return this.injectEvent("order_cancel", { order_id: orderId });
  }

  changeWindow(orderId: string, earliest: number, latest: number): Promise<boolean> {
    return this.injectEvent("time_window_change", {
      order_id: orderId,
      time_window: { earliest, latest },
    });
  }

  reportBreakdown(vehicleId: string): Promise<boolean> {
    return this.injectEvent("vehicle_breakdown", { vehicle_id: vehicleId });
  }

  reportTraffic(edgeId: string, liveSpeed: number): Promise<boolean> {
    return this.injectEvent("traffic_update", { edge_id: edgeId, live_speed: liveSpeed });
  }

  /** Drive the poll loop with an injectable timer (tests use fake timers). */
  startPolling(setIntervalFn: typeof setInterval = setInterval): ReturnType<typeof setInterval> {
    return setIntervalFn(() => void this.poll(), this.pollIntervalMs);
  }
}

/** Single-page wiring: tabs, token entry, notification pane and the poll
 * loops.  All rendering goes through the controllers so the DOM always shows
 * one consistent plan revision. */
import { ApiClient } from "./api.js";
import { AssetsController } from "./assets.js";
import { DeliveriesController } from "./deliveries.js";
import { layersToSvg } from "./mapview.js";
import { TrackingController } from "./tracking.js";

export type Tab = "deliveries" | "assets";

export interface ViewState {
  activeTab: Tab;
  planId: string | null;
  lastRevisionSeen: number;
}

export class ConsoleApp {
  readonly state: ViewState = { activeTab: "deliveries", planId: null, lastRevisionSeen: -1 };
  readonly deliveries: DeliveriesController;
  readonly assets: AssetsController;
  readonly tracking: TrackingController;

  constructor(readonly api: ApiClient) {
    this.deliveries = new DeliveriesController(api);
    this.assets = new AssetsController(api);
    this.tracking = new TrackingController(api);
    this.deliveries.onRender = (view) => {
      this.state.planId = view.planId;
      if (view.layers) this.state.lastRevisionSeen = view.layers.revision;
    };
  }

  switchTab(tab: Tab): void {
    this.state.activeTab = tab;
    if (tab === "assets") void this.assets.refresh();
  }
}

function byId<T extends HTMLElement>(id: string): T {
  return document.getElementById(id) as T;
}

function mountDom(app: ConsoleApp): void {
  const mapPane = byId<HTMLDivElement>("map");
  const noticePane = byId<HTMLUListElement>("notifications");
  const statusBadge = byId<HTMLSpanElement>("plan-status");

  app.deliveries.onRender = (view) => {
    app.state.planId = view.planId;
    statusBadge.textContent =
      view.layers === null
        ? view.planStatus
        : `${view.planStatus} (revision ${view.layers.revision})`;
    if (view.layers) {
      app.state.lastRevisionSeen = view.layers.revision;
      mapPane.innerHTML = layersToSvg(view.layers);
      for (const circle of Array.from(mapPane.querySelectorAll("circle[data-order]"))) {
        circle.addEventListener("click", () => {
          const oid = (circle as SVGCircleElement).dataset["order"]!;
          if (confirm(`Cancel order ${oid}?`)) void app.deliveries.cancelOrder(oid);
        });
      }
    }
    noticePane.innerHTML = view.notifications
      .map((n) => `<li class="${n.level}">${n.text}</li>`)
      .join("");
  };

  byId<HTMLButtonElement>("tab-deliveries").addEventListener("click", () =>
    app.switchTab("deliveries"),
  );
  byId<HTMLButtonElement>("tab-assets").addEventListener("click", () => app.switchTab("assets"));
  byId<HTMLButtonElement>("plan-button").addEventListener("click", () =>
    void app.deliveries.plan(),
  );
  byId<HTMLInputElement>("order-file").addEventListener("change", async (ev) => {
    const input = ev.target as HTMLInputElement;
    const file = input.files?.[0];
    if (file) await app.deliveries.uploadOrders(await file.text());
  });
  byId<HTMLInputElement>("token").addEventListener("change", (ev) => {
    app.api.setToken((ev.target as HTMLInputElement).value || null);
  });

  app.deliveries.startPolling();
}

if (typeof document !== "undefined" && document.getElementById("map") !== null) {
  const api = new ApiClient("");
  const app = new ConsoleApp(api);
  mountDom(app);
}

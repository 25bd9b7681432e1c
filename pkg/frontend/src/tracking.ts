/** Live tracking: poll each vehicle's ping stream and move its marker along
 * the route geometry.  A failed poll flips a stale-data indicator instead of
 * clearing the map. */
import { ApiClient } from "./api.js";
import { fitProjection } from "./mapview.js";
import type { FeatureCollection, PingDoc, PlanDoc } from "./types.js";

export interface VehicleMarker {
  vehicleId: string;
  x: number;
  y: number;
  lastPing: number;
  latenessSeconds: number;
}

export interface TrackingView {
  markers: Map<string, VehicleMarker>;
  stale: boolean;
}

export class TrackingController {
  readonly view: TrackingView = { markers: new Map(), stale: false };
  private cursors: Map<string, number> = new Map(); // vehicle -> last ping timestamp
  onRender: (view: TrackingView) => void = () => {};

  constructor(
    private api: ApiClient,
    public pollIntervalMs = 2000,
  ) {}

  /** Predicted lateness per vehicle from the plan's own timings: the worst
   * margin by which a stop's service start exceeds its window close is
   * computed server-side into the stop times, so here we only surface the
   * maximum wait-free slack violation recorded on the route. */
  static latenessByVehicle(plan: PlanDoc, windowClose: Map<string, number>): Map<string, number> {
    const out = new Map<string, number>();
    for (const route of plan.routes) {
      let worst = 0;
      for (const stop of route.stops) {
        if (stop.order_id === null) continue;
        const close = windowClose.get(stop.order_id);
        if (close !== undefined) worst = Math.max(worst, stop.service_start - close);
      }
      out.set(route.vehicle_id, worst);
    }
    return out;
  }

  async pollVehicle(
    vehicleId: string,
    geojson: FeatureCollection,
    lateness: Map<string, number>,
  ): Promise<void> {
    const since = this.cursors.get(vehicleId) ?? 0;
    let pings: PingDoc[];
    try {
      const res = await this.api.track(vehicleId, since);
      pings = res.pings;
      this.view.stale = false;
    } catch {
      this.view.stale = true;
      this.onRender(this.view);
      return;
    }
    if (pings.length > 0) {
      const last = pings[pings.length - 1];
      this.cursors.set(vehicleId, last.timestamp);
      const proj = fitProjection(geojson);
      const [x, y] = proj.toXY(last.lon, last.lat);
      this.view.markers.set(vehicleId, {
        vehicleId,
        x,
        y,
        lastPing: last.timestamp,
        latenessSeconds: lateness.get(vehicleId) ?? 0,
      });
    }
    this.onRender(this.view);
  }
}

import { describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { TrackingController } from "../src/tracking.js";
import { seededService } from "./fakeService.js";
import type { FeatureCollection, PlanDoc } from "../src/types.js";

const geojson: FeatureCollection = {
  type: "FeatureCollection",
  features: [
    {
      type: "Feature",
      geometry: { type: "LineString", coordinates: [[0, 0], [0.04, 0.04]] },
      properties: { vehicle_id: "v0", stops: [], departure_time: 0 },
    },
  ],
};

describe("live tracking", () => {
  it("moves the marker to the newest ping and advances the cursor", async () => {
    const svc = seededService();
    svc.pings.set("v0", [
      { vehicle_id: "v0", lon: 0.0, lat: 0.0, timestamp: 30 },
      { vehicle_id: "v0", lon: 0.02, lat: 0.02, timestamp: 60 },
    ]);
    const ctl = new TrackingController(new ApiClient("http://svc", null, svc.fetch));
    await ctl.pollVehicle("v0", geojson, new Map());
    const first = ctl.view.markers.get("v0")!;
    expect(first.lastPing).toBe(60);

    // Nothing new: marker stays where it was (sim paused -> frozen).
    await ctl.pollVehicle("v0", geojson, new Map());
    expect(ctl.view.markers.get("v0")).toEqual(first);

    svc.pings.get("v0")!.push({ vehicle_id: "v0", lon: 0.04, lat: 0.04, timestamp: 90 });
    await ctl.pollVehicle("v0", geojson, new Map());
    const moved = ctl.view.markers.get("v0")!;
    expect(moved.lastPing).toBe(90);
    expect(moved.x).not.toBe(first.x);
  });

  it("flags stale data when a poll fails, keeping the last marker", async () => {
    const svc = seededService();
    svc.pings.set("v0", [{ vehicle_id: "v0", lon: 0.01, lat: 0.01, timestamp: 30 }]);
    let broken = false;
    const flaky = async (url: string, init?: RequestInit) => {
      if (broken) throw new TypeError("fetch failed");
      return svc.fetch(url, init);
    };
    const ctl = new TrackingController(new ApiClient("http://svc", null, flaky));
    await ctl.pollVehicle("v0", geojson, new Map());
    expect(ctl.view.stale).toBe(false);
    broken = true;
    await ctl.pollVehicle("v0", geojson, new Map());
    expect(ctl.view.stale).toBe(true);
    expect(ctl.view.markers.has("v0")).toBe(true);
  });

  it("computes the lateness badge from plan timings", () => {
    const plan: PlanDoc = {
      id: "p",
      routes: [
        {
          vehicle_id: "v0",
          driver_id: null,
          departure_time: 0,
          stops: [
            { order_id: "o1", arrival_time: 900, wait_time: 0, service_start: 900, departure_time: 960, execution_status: "pending" },
            { order_id: "o2", arrival_time: 1500, wait_time: 0, service_start: 1500, departure_time: 1560, execution_status: "pending" },
          ],
        },
      ],
      unassigned: [],
      total_cost: 0,
      revision: 0,
      created_at: 0,
      kind: "static",
    };
    const close = new Map([
      ["o1", 1000],
      ["o2", 1200], // 300 s late
    ]);
    const lateness = TrackingController.latenessByVehicle(plan, close);
    expect(lateness.get("v0")).toBe(300);
  });
});

/** The console round-trip: upload fixture orders, plan, cancel an order from
 * the map, and observe revision 1 — without the order, with redrawn
 * polylines — within one poll interval.  Assets survive a page reload. */
import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { ApiClient } from "../src/api.js";
import { AssetsController } from "../src/assets.js";
import { ConsoleApp } from "../src/app.js";
import { fixtureOrders, seededService } from "./fakeService.js";

describe("console round trip", () => {
  beforeEach(() => {
    vi.useFakeTimers();
  });
  afterEach(() => {
    vi.useRealTimers();
  });

  it("upload -> plan -> cancel from map -> revision 1 within one poll", async () => {
    const svc = seededService();
    const app = new ConsoleApp(new ApiClient("http://svc", null, svc.fetch));
    const deliveries = app.deliveries;

    expect(await deliveries.uploadOrders(JSON.stringify(fixtureOrders(6)))).toBe(6);
    await deliveries.plan();
    deliveries.startPolling();
    await vi.advanceTimersByTimeAsync(deliveries.pollIntervalMs);

    expect(deliveries.view.planStatus).toBe("ready");
    expect(app.state.lastRevisionSeen).toBe(0);
    const before = deliveries.view.layers!;
    expect(before.markers.map((m) => m.orderId)).toContain("o3");
    const polylinesBefore = before.routes.map((r) => r.points).join("|");

    // The map popup fires a cancel for a routed order.
    expect(await deliveries.cancelOrder("o3")).toBe(true);

    // Within one poll interval the console must show revision 1.
    await vi.advanceTimersByTimeAsync(deliveries.pollIntervalMs);
    const after = deliveries.view.layers!;
    expect(after.revision).toBe(1);
    expect(app.state.lastRevisionSeen).toBe(1);
    expect(after.markers.map((m) => m.orderId)).not.toContain("o3");
    expect(after.routes.map((r) => r.points).join("|")).not.toBe(polylinesBefore);
    expect(after.routes.some((r) => r.changed)).toBe(true);

    // Revision consistency: the server agrees that's the latest revision.
    const revisions = await app.api.getRevisions(deliveries.view.planId!);
    expect(revisions[revisions.length - 1].revision).toBe(1);
    const routed = revisions[revisions.length - 1].plan.routes.flatMap((r) =>
      r.stops.map((s) => s.order_id),
    );
    expect(routed).not.toContain("o3");
  });

  it("asset CRUD persists across a reload into a fresh console", async () => {
    const svc = seededService();
    const app = new ConsoleApp(new ApiClient("http://svc", null, svc.fetch));
    app.switchTab("assets");
    await vi.runAllTimersAsync();
    expect(await app.assets.save("depots", { id: "hub-2", location: "n4_4" })).toBe(true);
    expect(
      await app.assets.save("vehicles", { id: "van-7", depot_id: "hub-2", capacity: 12 }),
    ).toBe(true);

    const reloaded = new AssetsController(new ApiClient("http://svc", null, svc.fetch));
    await reloaded.refresh();
    expect(reloaded.view.depots.map((d) => d.id)).toContain("hub-2");
    const van = reloaded.view.vehicles.find((v) => v.id === "van-7");
    expect(van).toBeDefined();
    expect(van!.capacity).toBe(12);
  });
});

/** Pure map-building helpers: the service's GeoJSON goes in, renderable
 * layers (and an SVG string) come out.  No client-side routing — the
 * polylines are exactly the geometry the service computed. */
import type { FeatureCollection, LineStringFeature, PlanDoc, PointFeature } from "./types.js";

export interface RouteLayer {
  vehicleId: string;
  points: string; // SVG polyline points attribute
  color: string;
  changed: boolean;
  stops: string[];
}

export interface Marker {
  orderId: string;
  x: number;
  y: number;
}

export interface MapLayers {
  revision: number;
  routes: RouteLayer[];
  markers: Marker[];
  width: number;
  height: number;
}

const PALETTE = ["#2563eb", "#dc2626", "#059669", "#d97706", "#7c3aed", "#0891b2"];

export interface Projection {
  toXY(lon: number, lat: number): [number, number];
  width: number;
  height: number;
}

/** Fit all coordinates into a fixed viewport, preserving aspect ratio. */
export function fitProjection(geojson: FeatureCollection, width = 800, height = 600): Projection {
  let minLon = Infinity, maxLon = -Infinity, minLat = Infinity, maxLat = -Infinity;
  const visit = (lon: number, lat: number) => {
    minLon = Math.min(minLon, lon);
    maxLon = Math.max(maxLon, lon);
    minLat = Math.min(minLat, lat);
    maxLat = Math.max(maxLat, lat);
  };
  for (const f of geojson.features) {
    if (f.geometry.type === "Point") {
      const [lon, lat] = f.geometry.coordinates;
      visit(lon, lat);
    } else {
      for (const [lon, lat] of f.geometry.coordinates) visit(lon, lat);
    }
  }
  if (!isFinite(minLon)) {
    minLon = 0; maxLon = 1; minLat = 0; maxLat = 1;
  }
  const spanLon = Math.max(maxLon - minLon, 1e-9);
  const spanLat = Math.max(maxLat - minLat, 1e-9);
  const scale = Math.min((width - 40) / spanLon, (height - 40) / spanLat);
  return {
    width,
    height,
    toXY(lon: number, lat: number): [number, number] {
      // Screen y grows downward; latitude grows upward.
      const x = 20 + (lon - minLon) * scale;
      const y = height - 20 - (lat - minLat) * scale;
      return [Math.round(x * 100) / 100, Math.round(y * 100) / 100];
    },
  };
}

export function colorFor(index: number): string {
  return PALETTE[index % PALETTE.length];
}

/** Which vehicles' pending tails differ between two plan revisions. */
export function changedVehicles(prev: PlanDoc | null, next: PlanDoc): Set<string> {
  const changed = new Set<string>();
  if (prev === null) return changed;
  const tail = (plan: PlanDoc, vid: string) =>
    JSON.stringify(
      plan.routes
        .filter((r) => r.vehicle_id === vid)
        .flatMap((r) => r.stops.filter((s) => s.order_id !== null))
        .map((s) => [s.order_id, s.service_start]),
    );
  const vids = new Set([
    ...prev.routes.map((r) => r.vehicle_id),
    ...next.routes.map((r) => r.vehicle_id),
  ]);
  for (const vid of vids) {
    if (tail(prev, vid) !== tail(next, vid)) changed.add(vid);
  }
  return changed;
}

/** Derive all map layers from one (plan, geojson) pair so everything drawn
 * together belongs to a single revision. */
export function buildLayers(
  plan: PlanDoc,
  geojson: FeatureCollection,
  highlight: Set<string> = new Set(),
  width = 800,
  height = 600,
): MapLayers {
  const proj = fitProjection(geojson, width, height);
  const routes: RouteLayer[] = [];
  const markers: Marker[] = [];
  let colorIdx = 0;
  for (const f of geojson.features) {
    if (f.geometry.type === "LineString") {
      const line = f as LineStringFeature;
      const pts = line.geometry.coordinates
        .map(([lon, lat]) => proj.toXY(lon, lat).join(","))
        .join(" ");
      routes.push({
        vehicleId: line.properties.vehicle_id,
        points: pts,
        color: colorFor(colorIdx++),
        changed: highlight.has(line.properties.vehicle_id),
        stops: line.properties.stops,
      });
    } else {
      const point = f as PointFeature;
      const [x, y] = proj.toXY(point.geometry.coordinates[0], point.geometry.coordinates[1]);
      markers.push({ orderId: point.properties.order_id, x, y });
    }
  }
  return { revision: plan.revision, routes, markers, width, height };
}

/** Render layers to an SVG document string. */
export function layersToSvg(layers: MapLayers): string {
  const parts: string[] = [
    `<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 ${layers.width} ${layers.height}" data-revision="${layers.revision}">`,
  ];
  for (const r of layers.routes) {
    const width = r.changed ? 4 : 2;
    const dash = r.changed ? ` stroke-dasharray="6 3"` : "";
    parts.push(
      `<polyline points="${r.points}" fill="none" stroke="${r.color}" stroke-width="${width}"` +
        `${dash} data-vehicle="${r.vehicleId}"/>`,
    );
  }
  for (const m of layers.markers) {
    parts.push(
      `<circle cx="${m.x}" cy="${m.y}" r="5" fill="#111827" data-order="${m.orderId}"/>`,
    );
  }
  parts.push("</svg>");
  return parts.join("\n");
}

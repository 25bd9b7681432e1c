/** Documents exchanged with the dispatch service (`/api/v1/...`). */

export interface TimeWindowDoc {
  earliest: number;
  latest: number;
}

export interface OrderDoc {
  id: string;
  customer_name: string;
  demand: number;
  location: string;
  time_window: TimeWindowDoc;
  service_duration?: number;
  status?: string;
  metadata?: Record<string, unknown>;
}

export interface DepotDoc {
  id: string;
  location: string;
}

export interface VehicleDoc {
  id: string;
  depot_id: string;
  capacity: number;
  fixed_cost?: number;
  cost_per_meter?: number;
  status?: string;
}

export interface DriverDoc {
  id: string;
  name: string;
  shift: TimeWindowDoc;
  assigned_vehicle_id?: string | null;
}

export interface StopDoc {
  order_id: string | null;
  arrival_time: number;
  wait_time: number;
  service_start: number;
  departure_time: number;
  execution_status: string;
}

export interface RouteDoc {
  vehicle_id: string;
  driver_id: string | null;
  departure_time: number;
  stops: StopDoc[];
}

export interface PlanDoc {
  id: string;
  routes: RouteDoc[];
  unassigned: string[];
  total_cost: number;
  revision: number;
  created_at: number;
  kind: string;
}

export interface LineStringFeature {
  type: "Feature";
  geometry: { type: "LineString"; coordinates: [number, number][] };
  properties: { vehicle_id: string; stops: string[]; departure_time: number };
}

export interface PointFeature {
  type: "Feature";
  geometry: { type: "Point"; coordinates: [number, number] };
  properties: { order_id: string; [k: string]: unknown };
}

export type PlanFeature = LineStringFeature | PointFeature;

export interface FeatureCollection {
  type: "FeatureCollection";
  features: PlanFeature[];
}

export interface PlanResponse {
  plan_id: string;
  status: "solving" | "ready" | "failed";
  plan?: PlanDoc;
  geojson?: FeatureCollection;
  error?: string;
}

export interface RevisionDoc {
  revision: number;
  trigger: string | null;
  diff: { moved: Record<string, string>; removed: string[]; added: Record<string, string> };
  plan: PlanDoc;
}

export interface PingDoc {
  vehicle_id: string;
  lon: number;
  lat: number;
  timestamp: number;
}

export type AssetKind = "depots" | "vehicles" | "drivers";

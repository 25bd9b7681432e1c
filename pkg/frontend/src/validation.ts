/** Client-side asset validation.  Mirrors the server's document invariants so
 * obviously broken forms never leave the browser; the server remains the
 * authority and its 422 details are still rendered per field. */
import type { DepotDoc, DriverDoc, OrderDoc, VehicleDoc } from "./types.js";

export type FieldErrors = Record<string, string>;

function requireId(doc: { id?: unknown }, errors: FieldErrors): void {
  if (typeof doc.id !== "string" || doc.id.trim() === "") {
    errors["id"] = "id must be a non-empty string";
  }
}

function checkWindow(tw: { earliest?: unknown; latest?: unknown } | undefined,
                     field: string, errors: FieldErrors): void {
  if (!tw || typeof tw.earliest !== "number" || typeof tw.latest !== "number") {
    errors[field] = "window needs numeric earliest and latest";
    return;
  }
  if (tw.earliest < 0) errors[field] = "earliest must be >= 0";
  else if (tw.latest <= tw.earliest) errors[field] = "latest must be after earliest";
}

export function validateDepot(doc: Partial<DepotDoc>): FieldErrors {
  const errors: FieldErrors = {};
  requireId(doc, errors);
  if (typeof doc.location !== "string" || doc.location === "") {
    errors["location"] = "location must name a road network node";
  }
  return errors;
}

export function validateVehicle(doc: Partial<VehicleDoc>): FieldErrors {
  const errors: FieldErrors = {};
  requireId(doc, errors);
  if (typeof doc.depot_id !== "string" || doc.depot_id === "") {
    errors["depot_id"] = "depot_id must reference a depot";
  }
  if (typeof doc.capacity !== "number" || doc.capacity <= 0) {
    errors["capacity"] = "capacity must be > 0";
  }
  if (doc.fixed_cost !== undefined && doc.fixed_cost < 0) {
    errors["fixed_cost"] = "fixed_cost must be >= 0";
  }
  if (doc.cost_per_meter !== undefined && doc.cost_per_meter < 0) {
    errors["cost_per_meter"] = "cost_per_meter must be >= 0";
  }
  return errors;
}

export function validateDriver(doc: Partial<DriverDoc>): FieldErrors {
  const errors: FieldErrors = {};
  requireId(doc, errors);
  checkWindow(doc.shift, "shift", errors);
  return errors;
}

export function validateOrder(doc: Partial<OrderDoc>): FieldErrors {
  const errors: FieldErrors = {};
  requireId(doc, errors);
  if (typeof doc.demand !== "number" || doc.demand <= 0) {
    errors["demand"] = "demand must be > 0";
  }
  if (typeof doc.location !== "string" || doc.location === "") {
    errors["location"] = "location must name a road network node";
  }
  if (doc.service_duration !== undefined && doc.service_duration < 0) {
    errors["service_duration"] = "service_duration must be >= 0";
  }
  checkWindow(doc.time_window, "time_window", errors);
  return errors;
}

/** Parse an uploaded order file (JSON array or NDJSON) and report problems
 * per line before anything is sent to the service. */
export function parseOrderFile(text: string): { orders: OrderDoc[]; problems: string[] } {
  const problems: string[] = [];
  let docs: unknown[] = [];
  const trimmed = text.trim();
  if (trimmed === "") return { orders: [], problems: ["file is empty"] };
  if (trimmed.startsWith("[")) {
    try {
      docs = JSON.parse(trimmed);
    } catch (exc) {
      return { orders: [], problems: [`not valid JSON: ${exc}`] };
    }
  } else {
    trimmed.split("\n").forEach((line, i) => {
      if (!line.trim()) return;
      try {
        docs.push(JSON.parse(line));
      } catch {
        problems.push(`line ${i + 1}: not valid JSON`);
      }
    });
  }
  const orders: OrderDoc[] = [];
  docs.forEach((doc, i) => {
    const errors = validateOrder(doc as Partial<OrderDoc>);
    if (Object.keys(errors).length > 0) {
      const what = Object.entries(errors).map(([f, m]) => `${f}: ${m}`).join("; ");
      problems.push(`order ${i + 1}: ${what}`);
    } else {
      orders.push(doc as OrderDoc);
    }
  });
  return { orders, problems };
}

/** Assets tab: CRUD forms for depots, vehicles and drivers.  All state lives
 * on the server; a page reload simply refetches the lists. */
import { ApiClient, ApiError } from "./api.js";
import {
  FieldErrors,
  validateDepot,
  validateDriver,
  validateVehicle,
} from "./validation.js";
import type { AssetKind, DepotDoc, DriverDoc, VehicleDoc } from "./types.js";

const VALIDATORS: Record<AssetKind, (doc: never) => FieldErrors> = {
  depots: validateDepot,
  vehicles: validateVehicle,
  drivers: validateDriver,
};

export interface AssetsView {
  depots: DepotDoc[];
  vehicles: VehicleDoc[];
  drivers: DriverDoc[];
  fieldErrors: FieldErrors;
  banner: string | null;
}

export class AssetsController {
  readonly view: AssetsView = {
    depots: [],
    vehicles: [],
    drivers: [],
    fieldErrors: {},
    banner: null,
  };
  onRender: (view: AssetsView) => void = () => {};

  constructor(private api: ApiClient) {}

  /** Refetch everything; called on tab open and after every page load. */
  async refresh(): Promise<void> {
    try {
      const [depots, vehicles, drivers] = await Promise.all([
        this.api.listAssets<DepotDoc>("depots"),
        this.api.listAssets<VehicleDoc>("vehicles"),
        this.api.listAssets<DriverDoc>("drivers"),
      ]);
      this.view.depots = depots;
      this.view.vehicles = vehicles;
      this.view.drivers = drivers;
      this.view.banner = null;
    } catch (exc) {
      this.view.banner = `failed to load assets: ${exc}`;
    }
    this.onRender(this.view);
  }

  /** Validate client-side first; on server 422 map violations back to
   * fields.  Returns true when the asset was stored. */
  async save(kind: AssetKind, doc: Record<string, unknown>): Promise<boolean> {
    const errors = VALIDATORS[kind](doc as never);
    if (Object.keys(errors).length > 0) {
      this.view.fieldErrors = errors;
      this.onRender(this.view);
      return false;
    }
    this.view.fieldErrors = {};
    try {
      await this.api.saveAsset(kind, doc);
      await this.refresh();
      return true;
    } catch (exc) {
      if (exc instanceof ApiError && exc.status === 422 && Array.isArray(exc.body)) {
        for (const item of exc.body as { rule?: string; message?: string }[]) {
          this.view.fieldErrors[item.rule ?? "form"] = item.message ?? "invalid";
        }
      } else if (
        exc instanceof ApiError &&
        exc.status === 422 &&
        typeof exc.body === "object" &&
        exc.body !== null &&
        Array.isArray((exc.body as { detail?: unknown }).detail)
      ) {
        for (const item of (exc.body as { detail: { rule?: string; message?: string }[] }).detail) {
          this.view.fieldErrors[item.rule ?? "form"] = item.message ?? "invalid";
        }
      } else {
        this.view.banner = `save failed: ${exc}`;
      }
      this.onRender(this.view);
      return false;
    }
  }

  /** Depots available in the deliveries tab's planning dropdown. */
  depotChoices(): string[] {
    return this.view.depots.map((d) => d.id);
  }
}

/** Bootstrap: read connection settings from the URL, load page one.
 *
 * Query parameters: ?job=BATCH_JOB_ID&api=http://host:port&token=...
 * &reviewer=name&seed_set=name
 */

import { ApiClient } from "./api.js";
import { QueueModel } from "./queue.js";
import { App } from "./render.js";

export function bootstrap(win: Window & typeof globalThis): void {
  const params = new URLSearchParams(win.location.search);
  const jobId = params.get("job") ?? "";
  const api = new ApiClient(
    params.get("api") ?? "",
    params.get("token") ?? "",
  );
  const model = new QueueModel(api, {
    jobId,
    reviewer: params.get("reviewer") ?? "reviewer",
    seedSet: params.get("seed_set") ?? undefined,
    pageSize: Number(params.get("page_size") ?? "50"),
  });
  const root = win.document.getElementById("app");
  if (!root) throw new Error("missing #app element");
  const app = new App(root, api, model);
  app.bindKeyboard(win.document);
  app.render();
  if (jobId) void model.load(1);
}

declare global {
  interface Window {
    __pixelmodBooted?: boolean;
  }
}

if (typeof window !== "undefined" && typeof document !== "undefined" &&
    !window.__pixelmodBooted) {
  window.__pixelmodBooted = true;
  bootstrap(window);
}

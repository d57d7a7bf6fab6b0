/** Browser entry point: wire the controller to the page. */

import { GatewayApi } from "./api.js";
import { SessionController } from "./state.js";
import { render } from "./render.js";

export function mount(root: HTMLElement, gatewayUrl: string, sceneSeed?: number): SessionController {
  const api = new GatewayApi(gatewayUrl);
  const controller = new SessionController(api);
  controller.onChange(() => render(controller, root));
  void controller.start(sceneSeed);
  return controller;
}

declare global {
  interface Window {
    semcomMount: typeof mount;
  }
}

if (typeof window !== "undefined" && typeof document !== "undefined") {
  window.semcomMount = mount;
  const root = document.getElementById("semcom-root");
  if (root) {
    const params = new URLSearchParams(window.location.search);
    const gateway = params.get("gateway") ?? "http://127.0.0.1:8787";
    const seedParam = params.get("seed");
    mount(root, gateway, seedParam === null ? undefined : Number(seedParam));
  }
}

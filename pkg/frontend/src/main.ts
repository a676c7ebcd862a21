import { RenderClient } from "./api.js";
import { mountPanel } from "./ui.js";

async function boot(): Promise<void> {
  const root = document.getElementById("app");
  if (!root) {
    throw new Error("missing #app container");
  }
  // served from /ui the API is same-origin; override with ?service=...
  const service = new URLSearchParams(window.location.search).get("service") ?? "";
  const client = new RenderClient(service);
  if (!(await client.health())) {
    root.textContent = `render service unreachable at ${service || "this origin"}`;
    return;
  }
  await mountPanel(root, client);
}

void boot();

import { ApiClient } from "./api.js";
import { App } from "./app.js";

const app = new App(new ApiClient(""), {
  setup: document.getElementById("setup")!,
  conversation: document.getElementById("conversation")!,
  widget: document.getElementById("widget")!,
  panels: document.getElementById("panels")!,
});

void app.loadDirectory();

// expose for manual poking from the console
(window as unknown as { app: App }).app = app;

import { ApiClient } from "./api";
import { clear, h } from "./dom";
import { createDetectionWorkbench } from "./views/detection";
import { createSelectionExplorer } from "./views/selection";
import { createTrainingConsole } from "./views/training";

export function mountApp(root: HTMLElement, api = new ApiClient()): void {
  const training = createTrainingConsole(api);
  const selection = createSelectionExplorer(api);
  const detection = createDetectionWorkbench(api);
  const views: Record<string, HTMLElement> = {
    train: training.root,
    select: selection.root,
    detect: detection.root,
  };

  const banner = h("div", { class: "error-banner", id: "service-banner" });
  const content = h("main", { id: "content" });
  const tabs = h("nav", { class: "tabs" },
    ...Object.keys(views).map((name) =>
      h("button", { class: "tab", "data-tab": name, onClick: () => show(name) }, name)));

  function show(name: string): void {
    clear(content);
    const view = views[name];
    if (view) content.append(view);
    for (const el of tabs.querySelectorAll(".tab")) {
      el.classList.toggle("active", el.getAttribute("data-tab") === name);
    }
  }

  async function checkService(): Promise<void> {
    try {
      const health = await api.health();
      banner.textContent = "";
      banner.style.display = "none";
      root.setAttribute("data-service-version", health.version);
    } catch {
      banner.style.display = "";
      clear(banner);
      banner.append(
        "service unreachable ",
        h("button", { id: "retry-health", onClick: () => void checkService() }, "retry"));
    }
  }

  clear(root);
  root.append(h("header", {}, h("h1", {}, "detector selection dashboard"), tabs), banner, content);
  show("train");
  void checkService();
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  mountApp(document.getElementById("app") as HTMLElement);
}

import { beforeEach, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api";
import { createTrainingConsole } from "../src/views/training";
import type { TrainEventWire } from "../src/types";
import { cannedFetch, fixtureText } from "./helpers";

const NDJSON = fixtureText("events.ndjson");
const ALL_EVENTS = NDJSON.trim().split("\n").map((l) => JSON.parse(l) as TrainEventWire);
const N_BATCH = ALL_EVENTS.filter((e) => e.kind === "batch").length;
const N_EPOCH = ALL_EVENTS.filter((e) => e.kind === "epoch").length;

describe("training console", () => {
  beforeEach(() => {
    document.body.innerHTML = "";
  });

  function mountWithFixture() {
    const api = new ApiClient("/api", cannedFetch({}));
    const console_ = createTrainingConsole(api);
    document.body.append(console_.root);
    console_.buffer.addNdjson(NDJSON);
    console_.refresh("running");
    return console_;
  }

  it("renders all four loss curves from the recorded stream", () => {
    mountWithFixture();
    const curves = document.querySelectorAll("#loss-chart .loss-curve");
    const names = [...curves].map((c) => c.getAttribute("data-series"));
    expect(names).toEqual(["loss_ce", "loss_soft", "loss_align", "loss_total"]);
    for (const curve of curves) {
      expect(Number(curve.getAttribute("data-points"))).toBe(N_BATCH);
    }
  });

  it("renders prune stats per epoch from the recorded stream", () => {
    mountWithFixture();
    const keptBars = document.querySelectorAll("#prune-chart rect[data-part='kept']");
    expect(keptBars.length).toBe(N_EPOCH);
    const epochEvents = ALL_EVENTS.filter((e) => e.kind === "epoch");
    keptBars.forEach((bar, i) => {
      expect(Number(bar.getAttribute("data-value"))).toBe(epochEvents[i]!.n_kept);
    });
    const bucketBars = document.querySelectorAll("#prune-chart rect[data-part='pruned_bucket']");
    const totalBucketPruned = [...bucketBars]
      .reduce((acc, bar) => acc + Number(bar.getAttribute("data-value")), 0);
    const expected = epochEvents.reduce((acc, e) => acc + e.n_pruned_bucket, 0);
    expect(totalBucketPruned).toBe(expected);
  });

  it("replaying the stream adds no duplicate chart points", () => {
    const console_ = mountWithFixture();
    console_.buffer.addNdjson(NDJSON);
    console_.refresh("running");
    const curves = document.querySelectorAll("#loss-chart .loss-curve");
    for (const curve of curves) {
      expect(Number(curve.getAttribute("data-points"))).toBe(N_BATCH);
    }
  });

  it("hides the prune panel when pruning is off", () => {
    const console_ = mountWithFixture();
    const select = document.getElementById("pruning-mode") as HTMLSelectElement;
    select.value = "none";
    select.dispatchEvent(new Event("change"));
    const panel = document.getElementById("prune-panel") as HTMLElement;
    expect(panel.style.display).toBe("none");
    select.value = "bucketed";
    select.dispatchEvent(new Event("change"));
    expect(panel.style.display).toBe("");
    console_.stop();
  });

  it("launch posts the toggles as module flags", async () => {
    const log: { method: string; url: string; body?: unknown }[] = [];
    const api = new ApiClient("/api", cannedFetch({
      "POST /api/jobs/train": { job_id: "j1", state: "queued" },
      "GET /api/jobs/j1/events": { events: [], next_cursor: 0, state: "finished" },
    }, log));
    const console_ = createTrainingConsole(api);
    document.body.append(console_.root);
    (document.getElementById("corpus-id") as HTMLInputElement).value = "demo";
    (document.getElementById("toggle-soft") as HTMLInputElement).checked = true;
    (document.getElementById("pruning-mode") as HTMLSelectElement).value = "bucketed";
    await console_.launch();
    const post = log.find((entry) => entry.url.endsWith("/jobs/train"));
    expect(post).toBeDefined();
    const body = post!.body as { corpus_id: string; flags: Record<string, unknown> };
    expect(body.corpus_id).toBe("demo");
    expect(body.flags).toEqual({ soft_labels: true, metadata: false, pruning: "bucketed" });
    console_.stop();
  });

  it("cancel reflects the job state", async () => {
    const api = new ApiClient("/api", cannedFetch({
      "POST /api/jobs/train": { job_id: "j2", state: "queued" },
      "GET /api/jobs/j2/events": { events: [], next_cursor: 0, state: "running" },
      "POST /api/jobs/j2/cancel": { job_id: "j2", state: "running", cancel_requested: true },
    }));
    const console_ = createTrainingConsole(api);
    document.body.append(console_.root);
    (document.getElementById("corpus-id") as HTMLInputElement).value = "demo";
    await console_.launch();
    await console_.cancel();
    expect(document.getElementById("job-status")!.textContent).toContain("cancel requested");
    console_.stop();
  });

  it("shows a banner when the service is unreachable", async () => {
    const api = new ApiClient("/api", async () => {
      throw new Error("connection refused");
    });
    const console_ = createTrainingConsole(api);
    document.body.append(console_.root);
    await console_.launch();
    expect(document.getElementById("job-status")!.textContent).toContain("launch failed");
  });
});

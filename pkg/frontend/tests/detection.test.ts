import { beforeEach, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api";
import { createDetectionWorkbench } from "../src/views/detection";
import type { DetectionWire } from "../src/types";
import { cannedFetch, fixtureJson } from "./helpers";

const DETECTION = fixtureJson<DetectionWire>("detect.json");

function anomalyRuns(labels: number[]): number {
  let runs = 0;
  for (let i = 0; i < labels.length; i += 1) {
    if (labels[i] === 1 && (i === 0 || labels[i - 1] === 0)) runs += 1;
  }
  return runs;
}

describe("detection workbench", () => {
  beforeEach(() => {
    document.body.innerHTML = "";
  });

  function mountWithFixture() {
    const workbench = createDetectionWorkbench(new ApiClient("/api", cannedFetch({})));
    document.body.append(workbench.root);
    workbench.render(DETECTION);
    return workbench;
  }

  it("shows one overlay per detector in compare mode", () => {
    mountWithFixture();
    const overlays = document.querySelectorAll("#overlay-chart .score-trace");
    expect(overlays.length).toBe(Object.keys(DETECTION.scores ?? {}).length);
    expect(overlays.length).toBe(6);
    const n = DETECTION.point_labels.length;
    for (const overlay of overlays) {
      expect(Number(overlay.getAttribute("data-points"))).toBe(n);
    }
  });

  it("shows one metric chip per detector with the fixture's numbers", () => {
    mountWithFixture();
    const chips = document.querySelectorAll("#metric-chips .chip");
    expect(chips.length).toBe(6);
    for (const chip of chips) {
      const name = chip.getAttribute("data-detector")!;
      const value = DETECTION.metrics[name];
      if (value === null || value === undefined) {
        expect(chip.getAttribute("data-auc-pr")).toBe("skipped");
      } else {
        expect(Number(chip.getAttribute("data-auc-pr"))).toBeCloseTo(value, 12);
        expect(chip.textContent).toContain(value.toFixed(4));
      }
    }
  });

  it("highlights the chip of the selected detector", () => {
    mountWithFixture();
    const selected = document.querySelector("#metric-chips .selected-chip");
    expect(selected).not.toBeNull();
    expect(selected!.getAttribute("data-detector"))
      .toBe(DETECTION.selection!.selected.name);
  });

  it("shades every anomaly run of the series", () => {
    mountWithFixture();
    const shades = document.querySelectorAll("#overlay-chart .anomaly-shade");
    expect(shades.length).toBe(anomalyRuns(DETECTION.point_labels));
    const shadeTotal = [...shades]
      .reduce((acc, s) => acc + Number(s.getAttribute("data-length")), 0);
    const labelTotal = DETECTION.point_labels.reduce((a, b) => a + b, 0);
    expect(shadeTotal).toBe(labelTotal);
  });

  it("appends an alternative run's overlay without discarding the rest", () => {
    const workbench = createDetectionWorkbench(new ApiClient("/api", cannedFetch({})));
    document.body.append(workbench.root);
    const single: DetectionWire = {
      ...DETECTION,
      metrics: { HBOS: DETECTION.metrics["HBOS"] ?? 0.5 },
      scores: { HBOS: DETECTION.scores!["HBOS"]! },
      selection: DETECTION.selection,
    };
    workbench.render(single);
    expect(document.querySelectorAll("#overlay-chart .score-trace").length).toBe(1);
    // five "run" chips offered for the detectors not yet executed
    expect(document.querySelectorAll("#metric-chips .alternative").length).toBe(5);
    const alt: DetectionWire = {
      ...DETECTION,
      executed: "MP",
      metrics: { MP: DETECTION.metrics["MP"] ?? 0.4 },
      scores: { MP: DETECTION.scores!["MP"]! },
      selection: undefined,
    };
    workbench.addAlternative(alt);
    expect(document.querySelectorAll("#overlay-chart .score-trace").length).toBe(2);
    expect(document.querySelectorAll("#metric-chips .alternative").length).toBe(4);
  });

  it("run-alternative issues a detect call for the chosen detector", async () => {
    const log: { method: string; url: string; body?: unknown }[] = [];
    const routes = {
      "POST /api/detect": {
        ...DETECTION,
        executed: "PCA",
        metrics: { PCA: 0.25 },
        scores: { PCA: DETECTION.scores!["PCA"]! },
        selection: undefined,
      },
    };
    const workbench = createDetectionWorkbench(new ApiClient("/api", cannedFetch(routes, log)));
    document.body.append(workbench.root);
    const single: DetectionWire = {
      ...DETECTION,
      metrics: { HBOS: 0.9 },
      scores: { HBOS: DETECTION.scores!["HBOS"]! },
    };
    (document.getElementById("det-corpus-id") as HTMLInputElement).value = "fixture";
    workbench.render(single);
    await workbench.runAlternative("PCA");
    const call = log.find((entry) => entry.url.endsWith("/detect"));
    expect(call).toBeDefined();
    expect((call!.body as { detector: string }).detector).toBe("PCA");
    const chips = document.querySelectorAll("#metric-chips .chip[data-auc-pr]");
    expect([...chips].some((c) => c.getAttribute("data-detector") === "PCA")).toBe(true);
  });

  it("marks skipped detectors as disabled chips with a tooltip", () => {
    const workbench = createDetectionWorkbench(new ApiClient("/api", cannedFetch({})));
    document.body.append(workbench.root);
    workbench.render({
      ...DETECTION,
      metrics: { ...DETECTION.metrics, MP: null },
    });
    const chip = document.querySelector("#metric-chips .chip[data-detector='MP']")!;
    expect(chip.classList.contains("disabled-chip")).toBe(true);
    expect(chip.getAttribute("title")).toContain("skipped");
  });
});

/** Detection workbench: anomaly-shaded score overlays plus one metric chip
 * per detector, with a "run alternative" action that appends overlays from
 * fresh /detect calls -- the operator's what-if loop. */

import type { ApiClient } from "../api";
import { TRACE_COLORS, traceOverlayChart, type TraceOverlay } from "../charts";
import { clear, h } from "../dom";
import { DETECTOR_ORDER, type DetectionWire } from "../types";

export interface DetectionWorkbench {
  root: HTMLElement;
  render(detection: DetectionWire): void;
  /** merge an alternative run's traces/metrics into the current view */
  addAlternative(detection: DetectionWire): void;
  runSelected(selectorId: string, corpusId: string, seriesId: string, compare: boolean): Promise<void>;
  runAlternative(detector: string): Promise<void>;
}

interface ViewData {
  corpusId: string;
  seriesId: string;
  pointLabels: number[];
  executed: string;
  selectedName: string | null;
  metrics: Map<string, number | null>;
  scores: Map<string, number[]>;
}

export function createDetectionWorkbench(api: ApiClient): DetectionWorkbench {
  const selectorInput = h("input", { id: "det-selector-id", placeholder: "selector id" });
  const corpusInput = h("input", { id: "det-corpus-id", placeholder: "corpus id" });
  const seriesInput = h("input", { id: "det-series-id", placeholder: "series id" });
  const compareToggle = h("input", { id: "det-compare", type: "checkbox" });
  const chips = h("div", { class: "chips", id: "metric-chips" });
  const chartHost = h("div", { id: "overlay-chart" });
  const errorLine = h("div", { class: "error-banner", id: "detection-error" });
  let data: ViewData | null = null;

  const redraw = (): void => {
    if (!data) return;
    clear(chips);
    for (const name of DETECTOR_ORDER) {
      if (!data.metrics.has(name)) {
        // not run yet: offer it as an alternative
        chips.append(h("button", {
          class: "chip alternative",
          "data-detector": name,
          onClick: () => void workbench.runAlternative(name),
        }, `${name}: run`));
        continue;
      }
      const value = data.metrics.get(name) ?? null;
      const isSelected = name === data.selectedName;
      const classes = ["chip"];
      if (isSelected) classes.push("selected-chip");
      if (value === null) classes.push("disabled-chip");
      chips.append(h("span", {
        class: classes.join(" "),
        "data-detector": name,
        "data-auc-pr": value === null ? "skipped" : value,
        title: value === null ? "detector skipped on this series" : "AUC-PR from the service",
      }, value === null ? `${name}: skipped` : `${name}: ${value.toFixed(4)}`));
    }
    const overlays: TraceOverlay[] = [...data.scores.entries()].map(([name, scores], i) => ({
      name,
      scores,
      color: TRACE_COLORS[i % TRACE_COLORS.length] ?? "#000",
    }));
    clear(chartHost);
    chartHost.append(traceOverlayChart(data.pointLabels, overlays));
  };

  const ingest = (detection: DetectionWire, reset: boolean): void => {
    if (reset || !data) {
      data = {
        corpusId: corpusInput.value,
        seriesId: detection.series_id,
        pointLabels: detection.point_labels,
        executed: detection.executed,
        selectedName: detection.selection?.selected.name ?? detection.executed,
        metrics: new Map(),
        scores: new Map(),
      };
    }
    for (const [name, value] of Object.entries(detection.metrics)) {
      data.metrics.set(name, value);
    }
    for (const [name, scores] of Object.entries(detection.scores ?? {})) {
      data.scores.set(name, scores);
    }
    redraw();
  };

  const workbench: DetectionWorkbench = {
    root: h("section", { class: "detection-workbench" },
      h("h2", {}, "Anomaly detection"),
      h("div", { class: "form" },
        h("label", {}, "selector ", selectorInput),
        h("label", {}, "corpus ", corpusInput),
        h("label", {}, "series ", seriesInput),
        h("label", {}, "compare all ", compareToggle),
        h("button", {
          id: "run-detection",
          onClick: () => void workbench.runSelected(
            selectorInput.value, corpusInput.value, seriesInput.value, compareToggle.checked),
        }, "Detect")),
      errorLine,
      chips,
      chartHost),

    render(detection: DetectionWire) {
      ingest(detection, true);
    },

    addAlternative(detection: DetectionWire) {
      ingest(detection, false);
    },

    async runSelected(selectorId, corpusId, seriesId, compare) {
      try {
        errorLine.textContent = "";
        const detection = await api.detect({
          selector_id: selectorId, corpus_id: corpusId, series_id: seriesId,
          compare, include_scores: true,
        });
        ingest(detection, true);
      } catch (err) {
        errorLine.textContent = `detection failed: ${String(err)}`;
      }
    },

    async runAlternative(detector) {
      if (!data) return;
      try {
        const detection = await api.detect({
          detector, corpus_id: data.corpusId, series_id: data.seriesId,
          include_scores: true,
        });
        ingest(detection, false);
      } catch (err) {
        errorLine.textContent = `alternative run failed: ${String(err)}`;
      }
    },
  };
  return workbench;
}

/** Pure SVG chart builders. Inputs are server numbers; no metric math here
 * beyond coordinate scaling. Every datum lands in the DOM with data-*
 * attributes so tests can trace rendered values back to responses. */

import type { Point } from "./events";

const SVG_NS = "http://www.w3.org/2000/svg";

function svgEl<K extends keyof SVGElementTagNameMap>(
  tag: K,
  attrs: Record<string, string | number> = {},
): SVGElementTagNameMap[K] {
  const el = document.createElementNS(SVG_NS, tag);
  for (const [key, value] of Object.entries(attrs)) {
    el.setAttribute(key, String(value));
  }
  return el;
}

export interface LineSeries {
  key: string;
  label: string;
  color: string;
  points: Point[];
}

export interface ChartSize {
  width: number;
  height: number;
  pad: number;
}

const DEFAULT_SIZE: ChartSize = { width: 560, height: 220, pad: 28 };

export function lineChart(series: LineSeries[], size: ChartSize = DEFAULT_SIZE): SVGSVGElement {
  const { width, height, pad } = size;
  const svg = svgEl("svg", {
    width,
    height,
    viewBox: `0 0 ${width} ${height}`,
    class: "line-chart",
  });
  const allPoints = series.flatMap((s) => s.points);
  if (allPoints.length === 0) {
    svg.appendChild(svgEl("text", { x: width / 2, y: height / 2, "text-anchor": "middle" }))
      .textContent = "waiting for events";
    return svg;
  }
  const xMax = Math.max(1, ...allPoints.map((p) => p.x));
  const yMax = Math.max(1e-12, ...allPoints.map((p) => p.y));
  const sx = (x: number): number => pad + (x / xMax) * (width - 2 * pad);
  const sy = (y: number): number => height - pad - (y / yMax) * (height - 2 * pad);

  svg.appendChild(svgEl("line", {
    x1: pad, y1: height - pad, x2: width - pad, y2: height - pad, stroke: "#94a3b8",
  }));
  svg.appendChild(svgEl("line", {
    x1: pad, y1: pad, x2: pad, y2: height - pad, stroke: "#94a3b8",
  }));

  for (const s of series) {
    const path = s.points
      .map((p, i) => `${i === 0 ? "M" : "L"}${sx(p.x).toFixed(2)},${sy(p.y).toFixed(2)}`)
      .join(" ");
    const el = svgEl("path", {
      d: path,
      fill: "none",
      stroke: s.color,
      "stroke-width": 1.5,
      class: "loss-curve",
      "data-series": s.key,
      "data-points": s.points.length,
    });
    svg.appendChild(el);
  }
  return svg;
}

export interface Bar {
  label: string;
  value: number;
  highlight?: boolean;
  badge?: string;
}

export function barChart(bars: Bar[], size: ChartSize = DEFAULT_SIZE): SVGSVGElement {
  const { width, height, pad } = size;
  const svg = svgEl("svg", {
    width,
    height,
    viewBox: `0 0 ${width} ${height}`,
    class: "bar-chart",
  });
  if (bars.length === 0) return svg;
  const max = Math.max(1e-12, ...bars.map((b) => b.value));
  const slot = (width - 2 * pad) / bars.length;
  bars.forEach((bar, i) => {
    const h = (bar.value / max) * (height - 2 * pad);
    const rect = svgEl("rect", {
      x: pad + i * slot + slot * 0.15,
      y: height - pad - h,
      width: slot * 0.7,
      height: Math.max(h, 0),
      fill: bar.highlight ? "#dc2626" : "#2563eb",
      class: bar.highlight ? "bar highlighted" : "bar",
      "data-label": bar.label,
      "data-value": bar.value,
    });
    svg.appendChild(rect);
    const text = svgEl("text", {
      x: pad + i * slot + slot / 2,
      y: height - pad + 14,
      "text-anchor": "middle",
      "font-size": 10,
    });
    text.textContent = bar.badge ? `${bar.label} ${bar.badge}` : bar.label;
    svg.appendChild(text);
  });
  return svg;
}

export interface StackedBar {
  label: string;
  parts: { key: string; value: number; color: string }[];
}

export function stackedBarChart(bars: StackedBar[], size: ChartSize = DEFAULT_SIZE): SVGSVGElement {
  const { width, height, pad } = size;
  const svg = svgEl("svg", {
    width,
    height,
    viewBox: `0 0 ${width} ${height}`,
    class: "stacked-bar-chart",
  });
  if (bars.length === 0) return svg;
  const totals = bars.map((b) => b.parts.reduce((acc, p) => acc + p.value, 0));
  const max = Math.max(1, ...totals);
  const slot = (width - 2 * pad) / bars.length;
  bars.forEach((bar, i) => {
    let yCursor = height - pad;
    for (const part of bar.parts) {
      const h = (part.value / max) * (height - 2 * pad);
      yCursor -= h;
      svg.appendChild(svgEl("rect", {
        x: pad + i * slot + slot * 0.15,
        y: yCursor,
        width: slot * 0.7,
        height: Math.max(h, 0),
        fill: part.color,
        class: "stack-part",
        "data-bar": bar.label,
        "data-part": part.key,
        "data-value": part.value,
      }));
    }
  });
  return svg;
}

export interface TraceOverlay {
  name: string;
  scores: number[];
  color: string;
}

/** Score traces over the series timeline with anomaly-label shading. */
export function traceOverlayChart(
  pointLabels: number[],
  traces: TraceOverlay[],
  size: ChartSize = { width: 720, height: 260, pad: 28 },
): SVGSVGElement {
  const { width, height, pad } = size;
  const svg = svgEl("svg", {
    width,
    height,
    viewBox: `0 0 ${width} ${height}`,
    class: "trace-overlay",
  });
  const n = Math.max(pointLabels.length, ...traces.map((t) => t.scores.length), 1);
  const sx = (i: number): number => pad + (i / Math.max(n - 1, 1)) * (width - 2 * pad);

  // anomaly shading: one rect per maximal run of 1-labels
  let runStart: number | null = null;
  for (let i = 0; i <= pointLabels.length; i += 1) {
    const isAnom = i < pointLabels.length && pointLabels[i] === 1;
    if (isAnom && runStart === null) runStart = i;
    if (!isAnom && runStart !== null) {
      svg.appendChild(svgEl("rect", {
        x: sx(runStart),
        y: pad,
        width: Math.max(sx(i - 1) - sx(runStart), 2),
        height: height - 2 * pad,
        fill: "#fca5a5",
        opacity: 0.45,
        class: "anomaly-shade",
        "data-start": runStart,
        "data-length": i - runStart,
      }));
      runStart = null;
    }
  }

  for (const trace of traces) {
    const lo = Math.min(...trace.scores);
    const hi = Math.max(...trace.scores);
    const span = hi - lo || 1;
    const path = trace.scores
      .map((v, i) => {
        const y = height - pad - ((v - lo) / span) * (height - 2 * pad);
        return `${i === 0 ? "M" : "L"}${sx(i).toFixed(2)},${y.toFixed(2)}`;
      })
      .join(" ");
    svg.appendChild(svgEl("path", {
      d: path,
      fill: "none",
      stroke: trace.color,
      "stroke-width": 1.2,
      class: "score-trace",
      "data-detector": trace.name,
      "data-points": trace.scores.length,
    }));
  }
  return svg;
}

export const TRACE_COLORS = [
  "#2563eb", "#d97706", "#059669", "#dc2626", "#7c3aed", "#0891b2",
];

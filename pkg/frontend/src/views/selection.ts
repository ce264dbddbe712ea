/** Selection explorer: per-detector vote bars with the winner highlighted
 * and an explicit badge when the top votes tie (lowest index wins). */

import type { ApiClient } from "../api";
import { barChart } from "../charts";
import { clear, h } from "../dom";
import { DETECTOR_ORDER, type SelectionWire } from "../types";

export interface SelectionExplorer {
  root: HTMLElement;
  render(selection: SelectionWire): void;
  query(selectorId: string, corpusId: string, seriesId: string): Promise<void>;
}

export function createSelectionExplorer(api: ApiClient): SelectionExplorer {
  const selectorInput = h("input", { id: "sel-selector-id", placeholder: "selector id" });
  const corpusInput = h("input", { id: "sel-corpus-id", placeholder: "corpus id" });
  const seriesInput = h("input", { id: "sel-series-id", placeholder: "series id" });
  const chartHost = h("div", { id: "votes-chart" });
  const headline = h("div", { id: "selection-headline" });
  const errorLine = h("div", { class: "error-banner", id: "selection-error" });

  const explorer: SelectionExplorer = {
    root: h("section", { class: "selection-explorer" },
      h("h2", {}, "Model selection"),
      h("div", { class: "form" },
        h("label", {}, "selector ", selectorInput),
        h("label", {}, "corpus ", corpusInput),
        h("label", {}, "series ", seriesInput),
        h("button", {
          id: "run-selection",
          onClick: () => void explorer.query(selectorInput.value, corpusInput.value, seriesInput.value),
        }, "Select")),
      errorLine,
      headline,
      chartHost),

    render(selection: SelectionWire) {
      errorLine.textContent = "";
      const votes = selection.votes;
      const maxVotes = Math.max(...votes);
      const tied = votes.filter((v) => v === maxVotes).length > 1;
      clear(headline);
      headline.append(
        h("span", { class: "selected-name", "data-selected": selection.selected.name },
          `selected: ${selection.selected.name}`),
        tied ? h("span", { class: "tie-badge", title: "tie broken by lowest index" }, "tie") : "",
        selection.fallback
          ? h("span", { class: "fallback-badge", title: "series shorter than the window; defaulted" },
              "fallback")
          : "",
      );
      clear(chartHost);
      chartHost.append(barChart(votes.map((value, index) => ({
        label: DETECTOR_ORDER[index] ?? `#${index}`,
        value,
        highlight: index === selection.selected.index,
        badge: tied && index === selection.selected.index ? "(tie)" : undefined,
      }))));
    },

    async query(selectorId: string, corpusId: string, seriesId: string) {
      try {
        const selection = await api.select({
          selector_id: selectorId, corpus_id: corpusId, series_id: seriesId,
        });
        explorer.render(selection);
      } catch (err) {
        errorLine.textContent = `selection failed: ${String(err)}`;
      }
    },
  };
  return explorer;
}

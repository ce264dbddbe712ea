/** Training console: config form, launch/cancel, live loss curves and
 * prune-stat bars fed by the job event stream. */

import type { ApiClient } from "../api";
import { lineChart, stackedBarChart } from "../charts";
import { clear, h } from "../dom";
import { EventBuffer, subscribeEvents, type EventSubscription } from "../events";

export interface TrainingConsole {
  root: HTMLElement;
  buffer: EventBuffer;
  /** re-render charts from the current buffer (called by the subscription) */
  refresh(state?: string): void;
  launch(): Promise<void>;
  cancel(): Promise<void>;
  stop(): void;
}

export function createTrainingConsole(api: ApiClient): TrainingConsole {
  const buffer = new EventBuffer();
  let jobId: string | null = null;
  let subscription: EventSubscription | null = null;

  const corpusInput = h("input", { id: "corpus-id", placeholder: "corpus id", value: "" });
  const testCorpusInput = h("input", { id: "test-corpus-id", placeholder: "test corpus id (optional)", value: "" });
  const epochsInput = h("input", { id: "epochs", type: "number", value: "30" });
  const lrInput = h("input", { id: "learning-rate", value: "0.05" });
  const windowInput = h("input", { id: "window-len", type: "number", value: "64" });
  const encoderSelect = h("select", { id: "encoder" },
    h("option", { value: "mlp" }, "mlp"),
    h("option", { value: "temporal-conv" }, "temporal-conv"));
  const softToggle = h("input", { id: "toggle-soft", type: "checkbox" });
  const metadataToggle = h("input", { id: "toggle-metadata", type: "checkbox" });
  const pruningSelect = h("select", { id: "pruning-mode" },
    h("option", { value: "none" }, "none"),
    h("option", { value: "infobatch" }, "infobatch"),
    h("option", { value: "bucketed" }, "bucketed"));

  const statusLine = h("div", { class: "status", id: "job-status" }, "idle");
  const lossPanel = h("div", { class: "panel", id: "loss-panel" },
    h("h3", {}, "loss curves"));
  const lossChartHost = h("div", { id: "loss-chart" });
  lossPanel.append(lossChartHost);
  const prunePanel = h("div", { class: "panel", id: "prune-panel" },
    h("h3", {}, "pruning per epoch"));
  const pruneChartHost = h("div", { id: "prune-chart" });
  prunePanel.append(pruneChartHost);

  const launchButton = h("button", { id: "start-learning", onClick: () => void console_.launch() },
    "Start Learning");
  const cancelButton = h("button", { id: "cancel-job", disabled: true, onClick: () => void console_.cancel() },
    "Cancel");

  const updatePrunePanelVisibility = (): void => {
    prunePanel.style.display = pruningSelect.value === "none" ? "none" : "";
  };
  pruningSelect.addEventListener("change", updatePrunePanelVisibility);

  const root = h("section", { class: "training-console" },
    h("h2", {}, "Selector learning"),
    h("div", { class: "form" },
      h("label", {}, "corpus ", corpusInput),
      h("label", {}, "test corpus ", testCorpusInput),
      h("label", {}, "epochs ", epochsInput),
      h("label", {}, "learning rate ", lrInput),
      h("label", {}, "window ", windowInput),
      h("label", {}, "encoder ", encoderSelect),
      h("label", {}, "soft labels ", softToggle),
      h("label", {}, "metadata alignment ", metadataToggle),
      h("label", {}, "pruning ", pruningSelect),
      launchButton,
      cancelButton),
    statusLine,
    lossPanel,
    prunePanel);
  updatePrunePanelVisibility();

  const refresh = (state?: string): void => {
    clear(lossChartHost);
    lossChartHost.append(lineChart(buffer.lossSeries()));
    clear(pruneChartHost);
    pruneChartHost.append(stackedBarChart(buffer.pruneStats().map((s) => ({
      label: `epoch ${s.epoch}`,
      parts: [
        { key: "kept", value: s.kept, color: "#2563eb" },
        { key: "pruned_low", value: s.prunedLow, color: "#94a3b8" },
        { key: "pruned_bucket", value: s.prunedBucket, color: "#d97706" },
      ],
    }))));
    if (state) {
      statusLine.textContent = jobId ? `job ${jobId}: ${state}` : state;
      cancelButton.toggleAttribute("disabled",
        state === "finished" || state === "failed" || state === "cancelled");
    }
  };

  const console_: TrainingConsole = {
    root,
    buffer,
    refresh,
    async launch() {
      const flags = {
        soft_labels: softToggle.checked,
        metadata: metadataToggle.checked,
        pruning: pruningSelect.value,
      };
      const body = {
        corpus_id: corpusInput.value,
        test_corpus_id: testCorpusInput.value || undefined,
        config: {
          train: {
            epochs: Number(epochsInput.value),
            learning_rate: Number(lrInput.value),
            window_len: Number(windowInput.value),
            encoder: encoderSelect.value,
          },
        },
        flags,
      };
      try {
        const { job_id } = await api.submitTrain(body);
        jobId = job_id;
        statusLine.textContent = `job ${job_id}: queued`;
        cancelButton.removeAttribute("disabled");
        subscription?.stop();
        subscription = subscribeEvents(
          (after) => api.jobEvents(job_id, after),
          buffer,
          (_buf, state) => refresh(state),
        );
      } catch (err) {
        statusLine.textContent = `launch failed: ${String(err)}`;
        statusLine.classList.add("error-banner");
      }
    },
    async cancel() {
      if (!jobId) return;
      const result = await api.cancelJob(jobId);
      statusLine.textContent = `job ${jobId}: ${result.state} (cancel requested)`;
    },
    stop() {
      subscription?.stop();
    },
  };
  return console_;
}

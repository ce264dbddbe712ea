/** Thin typed client for the selector service. */

import type {
  DetectionWire,
  EvalReportWire,
  EventsPageWire,
  JobStatusWire,
  SelectionWire,
  SelectorRecordWire,
  TrainRequest,
} from "./types";

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
  }
}

export class ApiClient {
  constructor(
    private readonly baseUrl = "/api",
    private readonly fetchFn: typeof fetch = (...args) => fetch(...args),
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const response = await this.fetchFn(`${this.baseUrl}${path}`, {
      method,
      headers: body === undefined ? undefined : { "content-type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const text = await response.text();
    if (!response.ok) {
      throw new ApiError(response.status, text || response.statusText);
    }
    return JSON.parse(text) as T;
  }

  health(): Promise<{ status: string; version: string }> {
    return this.request("GET", "/health");
  }

  uploadCorpus(payload: {
    name?: string;
    csv_text: string;
    metadata?: Record<string, unknown>;
    request_id?: string;
  }): Promise<{ corpus_id: string; n_series: number }> {
    return this.request("POST", "/corpora", payload);
  }

  submitTrain(payload: TrainRequest): Promise<{ job_id: string; state: string }> {
    return this.request("POST", "/jobs/train", payload);
  }

  jobStatus(jobId: string): Promise<JobStatusWire> {
    return this.request("GET", `/jobs/${jobId}`);
  }

  jobEvents(jobId: string, after: number): Promise<EventsPageWire> {
    return this.request("GET", `/jobs/${jobId}/events?after=${after}`);
  }

  cancelJob(jobId: string): Promise<{ job_id: string; state: string }> {
    return this.request("POST", `/jobs/${jobId}/cancel`, {});
  }

  listSelectors(): Promise<{ selectors: SelectorRecordWire[] }> {
    return this.request("GET", "/selectors");
  }

  registerSelector(payload: {
    job_id: string;
    name: string;
    request_id?: string;
  }): Promise<SelectorRecordWire> {
    return this.request("POST", "/selectors", payload);
  }

  deleteSelector(selectorId: string): Promise<{ deleted: string }> {
    return this.request("DELETE", `/selectors/${selectorId}`);
  }

  select(payload: {
    selector_id: string;
    corpus_id?: string;
    series_id?: string;
    series?: unknown;
  }): Promise<SelectionWire> {
    return this.request("POST", "/select", payload);
  }

  detect(payload: {
    corpus_id?: string;
    series_id?: string;
    series?: unknown;
    selector_id?: string;
    detector?: string;
    compare?: boolean;
    include_scores?: boolean;
  }): Promise<DetectionWire> {
    return this.request("POST", "/detect", payload);
  }

  report(reportId: string): Promise<EvalReportWire> {
    return this.request("GET", `/reports/${reportId}`);
  }
}

/** Wire types mirroring the service's JSON responses. The dashboard never
 * computes metrics; every rendered number comes from one of these shapes. */

export interface TrainEventWire {
  kind: "batch" | "epoch";
  epoch: number;
  batch: number;
  loss_ce: number;
  loss_soft: number;
  loss_align: number;
  loss_total: number;
  n_total: number;
  n_kept: number;
  n_pruned_low: number;
  n_pruned_bucket: number;
  n_buckets_multi: number;
  wall_ms: number;
  samples_per_sec: number;
}

export interface JobStatusWire {
  job_id: string;
  state: "queued" | "running" | "finished" | "failed" | "cancelled";
  progress: { epoch: number; total_epochs: number };
  last_event: TrainEventWire | null;
  error: string | null;
  result: { model_available: boolean; report_id: string | null };
}

export interface EventsPageWire {
  events: TrainEventWire[];
  next_cursor: number;
  state: JobStatusWire["state"];
}

export interface DetectorRef {
  index: number;
  name: string;
}

export interface SelectionWire {
  series_id: string;
  window_predictions: number[];
  votes: number[];
  selected: DetectorRef;
  fallback: boolean;
}

export interface DetectionWire {
  series_id: string;
  requested: string;
  executed: string;
  fallback_used: boolean;
  metrics: Record<string, number | null>;
  scores?: Record<string, number[]>;
  selection?: SelectionWire;
  point_labels: number[];
}

export interface EvalRowWire {
  series_id: string;
  selected: string;
  selected_auc_pr: number;
  oracle: string;
  oracle_auc_pr: number;
  votes: number[];
  fallback: boolean;
  detector_auc_pr: Record<string, number | null>;
}

export interface EvalReportWire {
  n_series: number;
  n_fallback: number;
  n_unscored: number;
  avg_selected: number;
  avg_oracle: number;
  avg_by_detector: Record<string, number>;
  rows: EvalRowWire[];
}

export interface SelectorRecordWire {
  selector_id: string;
  name: string;
  created_at: string;
  model_path: string;
  config_echo: Record<string, unknown>;
  metrics: Record<string, number>;
}

export interface TrainRequest {
  corpus_id: string;
  test_corpus_id?: string;
  config?: Record<string, unknown>;
  flags?: { soft_labels?: boolean; metadata?: boolean; pruning?: string };
  request_id?: string;
}

/** Canonical layout order for detector chips; values always come from the
 * server response keyed by these names. */
export const DETECTOR_ORDER = ["IForest", "LOF", "HBOS", "MP", "PCA", "POLY"] as const;

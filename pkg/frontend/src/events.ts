/** Append-only event buffer with reconnect-safe deduplication.
 *
 * Events are identified by (kind, epoch, batch); a resumed subscription may
 * replay a suffix of the stream and duplicates are dropped, so chart series
 * never carry repeated points.
 */

import type { EventsPageWire, TrainEventWire } from "./types";

export type LossKey = "loss_ce" | "loss_soft" | "loss_align" | "loss_total";

export const LOSS_KEYS: { key: LossKey; label: string; color: string }[] = [
  { key: "loss_ce", label: "cross-entropy", color: "#2563eb" },
  { key: "loss_soft", label: "soft-label", color: "#d97706" },
  { key: "loss_align", label: "alignment", color: "#059669" },
  { key: "loss_total", label: "total", color: "#dc2626" },
];

export interface Point {
  x: number;
  y: number;
}

export class EventBuffer {
  readonly events: TrainEventWire[] = [];
  /** server-side cursor: how many raw stream entries have been consumed */
  cursor = 0;
  private seen = new Set<string>();

  private keyOf(event: TrainEventWire): string {
    return `${event.kind}:${event.epoch}:${event.batch}`;
  }

  /** Returns true when the event was new; duplicates are ignored. */
  add(event: TrainEventWire): boolean {
    this.cursor += 1;
    const key = this.keyOf(event);
    if (this.seen.has(key)) return false;
    this.seen.add(key);
    this.events.push(event);
    return true;
  }

  addPage(page: EventsPageWire): number {
    let added = 0;
    for (const event of page.events) {
      if (this.add(event)) added += 1;
    }
    this.cursor = page.next_cursor;
    return added;
  }

  addNdjson(text: string): number {
    let added = 0;
    for (const line of text.split("\n")) {
      const trimmed = line.trim();
      if (!trimmed) continue;
      if (this.add(JSON.parse(trimmed) as TrainEventWire)) added += 1;
    }
    return added;
  }

  get batchEvents(): TrainEventWire[] {
    return this.events.filter((e) => e.kind === "batch");
  }

  get epochEvents(): TrainEventWire[] {
    return this.events.filter((e) => e.kind === "epoch");
  }

  /** One curve per loss term; x is the running batch index. */
  lossSeries(): { key: LossKey; label: string; color: string; points: Point[] }[] {
    const batches = this.batchEvents;
    return LOSS_KEYS.map(({ key, label, color }) => ({
      key,
      label,
      color,
      points: batches.map((event, i) => ({ x: i, y: event[key] })),
    }));
  }

  /** Per-epoch kept/pruned counts straight from the epoch summary events. */
  pruneStats(): { epoch: number; kept: number; prunedLow: number; prunedBucket: number }[] {
    return this.epochEvents.map((event) => ({
      epoch: event.epoch,
      kept: event.n_kept,
      prunedLow: event.n_pruned_low,
      prunedBucket: event.n_pruned_bucket,
    }));
  }
}

export interface EventSubscription {
  stop(): void;
}

/** Poll the events endpoint, resuming from the buffer's cursor. Survives
 * dropped connections: the next poll re-requests from the last cursor and
 * the buffer drops any overlap. */
export function subscribeEvents(
  fetchPage: (after: number) => Promise<EventsPageWire>,
  buffer: EventBuffer,
  onUpdate: (buffer: EventBuffer, state: string) => void,
  intervalMs = 250,
): EventSubscription {
  let stopped = false;
  let timer: ReturnType<typeof setTimeout> | null = null;

  const tick = async (): Promise<void> => {
    if (stopped) return;
    try {
      const page = await fetchPage(buffer.cursor);
      buffer.addPage(page);
      onUpdate(buffer, page.state);
      if (page.state === "finished" || page.state === "failed" || page.state === "cancelled") {
        return;
      }
    } catch {
      // transient failure: keep the cursor, retry next tick
    }
    timer = setTimeout(() => void tick(), intervalMs);
  };

  void tick();
  return {
    stop() {
      stopped = true;
      if (timer !== null) clearTimeout(timer);
    },
  };
}

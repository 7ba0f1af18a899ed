/**
 * Gateway client: SSE subscription with reconnect-resume, and chat posting.
 *
 * The stream transport is injectable so tests can replay recorded fixtures
 * and simulate drops; resume always restarts from the last seen seq, and
 * the reducer's seq guard makes overlapping replays harmless.
 */

import { ingest, initialModel, type PaneModel } from "./reducer.js";
import type { TraceEvent, TurnResult } from "./types.js";

export type ConnectionState = "connecting" | "connected" | "reconnecting" | "closed";

export interface SseFrame {
  id: string;
  event: string;
  data: string;
}

/** Incremental parser for an SSE byte stream; emits complete frames. */
export class SseParser {
  private buffer = "";

  push(chunk: string): SseFrame[] {
    this.buffer += chunk;
    const frames: SseFrame[] = [];
    let cut;
    while ((cut = this.buffer.indexOf("\n\n")) !== -1) {
      const block = this.buffer.slice(0, cut);
      this.buffer = this.buffer.slice(cut + 2);
      const frame: SseFrame = { id: "", event: "message", data: "" };
      for (const line of block.split("\n")) {
        if (line.startsWith("id:")) frame.id = line.slice(3).trim();
        else if (line.startsWith("event:")) frame.event = line.slice(6).trim();
        else if (line.startsWith("data:")) frame.data += line.slice(5).trim();
      }
      if (frame.data) frames.push(frame);
    }
    return frames;
  }
}

/**
 * Stream transport contract: yield raw text chunks for one connection
 * attempt; throw (or end) to signal a drop. `fromSeq` carries the resume
 * point for each attempt.
 */
export type StreamTransport = (
  url: string,
  fromSeq: number,
  signal: AbortSignal
) => AsyncIterable<string>;

export const fetchTransport: StreamTransport = async function* (url, fromSeq, signal) {
  const response = await fetch(`${url}?from=${fromSeq}`, {
    headers: { accept: "text/event-stream" },
    signal,
  });
  if (!response.ok || !response.body) {
    throw new Error(`stream failed: HTTP ${response.status}`);
  }
  const reader = response.body.getReader();
  const decoder = new TextDecoder();
  while (true) {
    const { value, done } = await reader.read();
    if (done) return;
    yield decoder.decode(value, { stream: true });
  }
};

export interface ConnectOptions {
  baseUrl: string;
  sessionId: string;
  fromSeq?: number;
  onModel: (model: PaneModel) => void;
  onState?: (state: ConnectionState, detail?: string) => void;
  transport?: StreamTransport;
  /** Backoff schedule in ms; the last entry repeats. */
  backoffMs?: number[];
  maxAttempts?: number;
  sleep?: (ms: number) => Promise<void>;
}

export interface Connection {
  close(): void;
  done: Promise<PaneModel>;
}

const DEFAULT_BACKOFF = [250, 500, 1000, 2000, 5000];

/**
 * Subscribe to a session's event stream and fold it into a live PaneModel.
 * Drops trigger automatic retry with backoff, resuming from the last seen
 * seq so nothing is duplicated or lost.
 */
export function connect(options: ConnectOptions): Connection {
  const transport = options.transport ?? fetchTransport;
  const backoff = options.backoffMs ?? DEFAULT_BACKOFF;
  const sleep =
    options.sleep ?? ((ms: number) => new Promise<void>((r) => setTimeout(r, ms)));
  const url = `${options.baseUrl}/sessions/${options.sessionId}/events`;
  const controller = new AbortController();
  let model = initialModel();
  model.lastSeq = options.fromSeq ?? 0;
  let attempts = 0;

  const done = (async () => {
    options.onState?.("connecting");
    while (!controller.signal.aborted) {
      try {
        const parser = new SseParser();
        const stream = transport(url, model.lastSeq, controller.signal);
        let delivered = false;
        for await (const chunk of stream) {
          if (!delivered) {
            // Only a stream that actually delivers counts as connected.
            delivered = true;
            attempts = 0;
            options.onState?.("connected");
          }
          for (const frame of parser.push(chunk)) {
            const event = JSON.parse(frame.data) as TraceEvent;
            const next = ingest(model, event);
            if (next !== model) {
              model = next;
              options.onModel(model);
            }
          }
          if (controller.signal.aborted) break;
        }
        if (controller.signal.aborted) break;
        // Transport ended without an abort: treat as a drop and retry.
        throw new Error("stream ended");
      } catch (err) {
        if (controller.signal.aborted) break;
        attempts += 1;
        if (options.maxAttempts !== undefined && attempts > options.maxAttempts) {
          options.onState?.("closed", String(err));
          break;
        }
        const wait = backoff[Math.min(attempts - 1, backoff.length - 1)];
        options.onState?.("reconnecting", String(err));
        await sleep(wait);
      }
    }
    options.onState?.("closed");
    return model;
  })();

  return {
    close: () => controller.abort(),
    done,
  };
}

export interface ChatBoxState {
  value: string;
  pending: boolean;
  error: string | null;
}

export function initialChatBox(): ChatBoxState {
  return { value: "", pending: false, error: null };
}

/**
 * Post one chat turn. On success the input clears; on gateway errors the
 * typed text is preserved alongside an inline error message.
 */
export async function submitChat(
  state: ChatBoxState,
  baseUrl: string,
  sessionId: string,
  fetchImpl: typeof fetch = fetch
): Promise<{ state: ChatBoxState; result: TurnResult | null }> {
  const text = state.value.trim();
  if (!text) return { state, result: null };
  try {
    const response = await fetchImpl(
      `${baseUrl}/sessions/${sessionId}/messages`,
      {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({ text }),
      }
    );
    if (!response.ok) {
      throw new Error(`HTTP ${response.status}`);
    }
    const result = (await response.json()) as TurnResult;
    return { state: { value: "", pending: false, error: null }, result };
  } catch (err) {
    return {
      state: { value: state.value, pending: false, error: String(err) },
      result: null,
    };
  }
}

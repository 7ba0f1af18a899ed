/** Trace event as emitted by the gateway's SSE stream. */
export interface TraceEvent {
  event_id: string;
  session_id: string;
  turn_id: number;
  seq: number;
  agent: string;
  phase: string;
  timestamp_ms: number;
  latency_ms: number | null;
  parent_event_id: string | null;
  payload: Record<string, any>;
}

export interface ContextRef {
  chunk_id: string;
  index_name: string;
  similarity_rank: number;
}

export interface TurnResult {
  turn_id: number;
  final_answer: string;
  evaluator: {
    passed: boolean;
    avg_severity: number;
    max_severity: number;
  } | null;
  event_count: number;
}

export interface SessionDescriptor {
  session_id: string;
  created_at_ms: number;
  project: string;
  turn_count: number;
}

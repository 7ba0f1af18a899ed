/**
 * Event-sourced pane model: the four synchronized dashboard views are a
 * pure fold over the ordered trace event stream. Same events produce the
 * same model, which is what makes golden-snapshot testing and
 * reconnect-resume exact.
 */

import type { ContextRef, TraceEvent } from "./types.js";

/** One collapsible row in the coordinator execution pane. */
export interface Accordion {
  key: string; // event_id of the tool_call
  seq: number;
  phase: string;
  title: string;
  open: boolean;
  pending: boolean;
  error: boolean;
  detail: Record<string, any>;
}

/** Accordion group for one subtask or helper lineage. */
export interface ExecutionGroup {
  key: string; // event_id of subtask_start / helper_start
  seq: number;
  phase: string;
  label: string;
  accordions: Accordion[];
  rows: { seq: number; phase: string; text: string; error: boolean }[];
  failed: boolean;
}

export interface PlannerOutline {
  seq: number;
  phase: string;
  goalSummary: string;
  subtasks: {
    subtaskId: string;
    description: string;
    dependsOn: string[];
    capabilities: string[];
  }[];
}

export interface HistoryItem {
  seq: number;
  phase: string;
  turn: number;
  speaker: "user" | "assistant";
  text: string;
}

export interface ContextPanes {
  routing: { seq: number; phase: string; intent: string; route: string; rationale: string }[];
  retrieval: { seq: number; phase: string; ref: ContextRef }[];
  computations: { seq: number; phase: string; agent: string; label: string }[];
  flow: { seq: number; phase: string; from: string; to: string; condition: string }[];
  files: string[]; // distinct source paths seen in tool envelopes this turn
}

export interface EvaluatorReview {
  seq: number;
  phase: string;
  passed: boolean;
  avgSeverity: number;
  maxSeverity: number;
  critiques: { text: string; severity: number }[];
}

export interface Notice {
  seq: number;
  phase: string;
  agent: string;
  text: string;
  error: boolean;
}

export interface PaneModel {
  sessionId: string | null;
  lastSeq: number;
  currentTurn: number;
  plannerTrace: PlannerOutline | null;
  plannerNotices: Notice[];
  coordinatorExecution: ExecutionGroup[];
  synthesis: { seq: number; phase: string; draft: string } | null;
  contextPanes: ContextPanes;
  evaluatorReview: EvaluatorReview | null;
  evaluatorNotices: Notice[];
  history: HistoryItem[];
}

export function initialModel(): PaneModel {
  return {
    sessionId: null,
    lastSeq: 0,
    currentTurn: 0,
    plannerTrace: null,
    plannerNotices: [],
    coordinatorExecution: [],
    synthesis: null,
    contextPanes: emptyContext(),
    evaluatorReview: null,
    evaluatorNotices: [],
    history: [],
  };
}

function emptyContext(): ContextPanes {
  return { routing: [], retrieval: [], computations: [], flow: [], files: [] };
}

function clone(model: PaneModel): PaneModel {
  return structuredClone(model);
}

function summarize(value: unknown, max = 60): string {
  const text = typeof value === "string" ? value : JSON.stringify(value);
  if (text === undefined) return "";
  return text.length > max ? text.slice(0, max - 1) + "…" : text;
}

function resultSummary(payload: Record<string, any>): string {
  if (payload.status === "error") return `error: ${summarize(payload.error ?? "failed")}`;
  const context = payload.context as ContextRef[] | undefined;
  if (context && context.length) return `${context.length} match(es)`;
  const sources = payload.source_ids as string[] | undefined;
  if (sources && sources.length) return `${sources.length} source(s)`;
  return "ok";
}

function findGroup(model: PaneModel, event: TraceEvent): ExecutionGroup {
  const parent = event.parent_event_id;
  let group = parent
    ? model.coordinatorExecution.find((g) => g.key === parent)
    : undefined;
  if (!group) {
    group = model.coordinatorExecution.find((g) => g.key === "ungrouped");
    if (!group) {
      group = {
        key: "ungrouped",
        seq: event.seq,
        phase: "subtask_start",
        label: "(direct)",
        accordions: [],
        rows: [],
        failed: false,
      };
      model.coordinatorExecution.push(group);
    }
  }
  return group;
}

function pushRetrieval(model: PaneModel, event: TraceEvent): void {
  const refs = (event.payload.context ?? []) as ContextRef[];
  for (const ref of refs) {
    model.contextPanes.retrieval.push({ seq: event.seq, phase: event.phase, ref });
  }
}

/**
 * Fold one event into the model. Events at or below lastSeq are ignored,
 * so replays and reconnect overlaps never render duplicates.
 */
export function applyEvent(previous: PaneModel, event: TraceEvent): PaneModel {
  if (event.seq <= previous.lastSeq) return previous;
  const model = clone(previous);
  model.lastSeq = event.seq;
  model.sessionId = event.session_id;

  switch (event.phase) {
    case "turn_start": {
      // A new turn resets the live panes; history persists across turns.
      model.currentTurn = event.turn_id;
      model.plannerTrace = null;
      model.plannerNotices = [];
      model.coordinatorExecution = [];
      model.synthesis = null;
      model.contextPanes = emptyContext();
      model.evaluatorReview = null;
      model.evaluatorNotices = [];
      model.history.push({
        seq: event.seq,
        phase: event.phase,
        turn: event.turn_id,
        speaker: "user",
        text: String(event.payload.user_message ?? ""),
      });
      break;
    }
    case "turn_end": {
      model.history.push({
        seq: event.seq,
        phase: event.phase,
        turn: event.turn_id,
        speaker: "assistant",
        text: String(event.payload.final_answer ?? ""),
      });
      break;
    }
    case "route": {
      const decision = event.payload.decision ?? {};
      model.contextPanes.routing.push({
        seq: event.seq,
        phase: event.phase,
        intent: String(decision.intent ?? ""),
        route: String(decision.route ?? ""),
        rationale: String(decision.rationale ?? ""),
      });
      pushRetrieval(model, event);
      break;
    }
    case "plan": {
      const plan = event.payload.plan ?? {};
      model.plannerTrace = {
        seq: event.seq,
        phase: event.phase,
        goalSummary: String(plan.goal_summary ?? ""),
        subtasks: (plan.subtasks ?? []).map((st: Record<string, any>) => ({
          subtaskId: String(st.subtask_id ?? ""),
          description: String(st.description ?? ""),
          dependsOn: (st.depends_on ?? []).map(String),
          capabilities: (st.required_capabilities ?? []).map(String),
        })),
      };
      break;
    }
    case "plan_failure": {
      model.plannerNotices.unshift({
        seq: event.seq,
        phase: event.phase,
        agent: event.agent,
        text: String(event.payload.error ?? "planning failed"),
        error: true,
      });
      break;
    }
    case "subtask_start": {
      model.coordinatorExecution.push({
        key: event.event_id,
        seq: event.seq,
        phase: event.phase,
        label: `${event.payload.subtask_id}: ${event.payload.description ?? ""}`,
        accordions: [],
        rows: [],
        failed: false,
      });
      break;
    }
    case "helper_start": {
      model.coordinatorExecution.push({
        key: event.event_id,
        seq: event.seq,
        phase: event.phase,
        label: `${event.payload.helper}: ${summarize(event.payload.goal)}`,
        accordions: [],
        rows: [],
        failed: false,
      });
      break;
    }
    case "tool_call": {
      const group = findGroup(model, event);
      const failed = event.payload.status === "error";
      const accordion: Accordion = {
        key: event.event_id,
        seq: event.seq,
        phase: event.phase,
        title: String(event.payload.tool ?? "tool"),
        open: false,
        pending: true,
        error: failed,
        detail: event.payload,
      };
      // Error surfacing: failures are prioritized to the top of their pane.
      if (failed) {
        group.accordions.unshift(accordion);
      } else {
        group.accordions.push(accordion);
      }
      for (const source of (event.payload.source_ids ?? []) as string[]) {
        const path = String(source).split(":")[0];
        if (!model.contextPanes.files.includes(path)) {
          model.contextPanes.files.push(path);
        }
      }
      pushRetrieval(model, event);
      break;
    }
    case "subtask_result": {
      const group = findGroup(model, event);
      group.rows.push({
        seq: event.seq,
        phase: event.phase,
        text: String(event.payload.result_text ?? ""),
        error: false,
      });
      break;
    }
    case "subtask_failure": {
      const group = findGroup(model, event);
      group.failed = true;
      group.rows.unshift({
        seq: event.seq,
        phase: event.phase,
        text: String(event.payload.error ?? "subtask failed"),
        error: true,
      });
      // Failed lineages are hoisted to the top of the execution pane.
      model.coordinatorExecution = [
        group,
        ...model.coordinatorExecution.filter((g) => g !== group),
      ];
      break;
    }
    case "synthesis": {
      model.synthesis = {
        seq: event.seq,
        phase: event.phase,
        draft: String(event.payload.draft_answer ?? ""),
      };
      break;
    }
    case "evidence": {
      const group = findGroup(model, event);
      group.rows.push({
        seq: event.seq,
        phase: event.phase,
        text: `evidence items: ${event.payload.count ?? 0}`,
        error: false,
      });
      break;
    }
    case "evaluate": {
      const report = event.payload.report ?? {};
      model.evaluatorReview = {
        seq: event.seq,
        phase: event.phase,
        passed: Boolean(report.passed),
        avgSeverity: Number(report.avg_severity ?? 0),
        maxSeverity: Number(report.max_severity ?? 0),
        critiques: (report.critiques ?? []).map((c: Record<string, any>) => ({
          text: String(c.text ?? ""),
          severity: Number(c.severity ?? 0),
        })),
      };
      break;
    }
    case "model_call": {
      model.contextPanes.computations.push({
        seq: event.seq,
        phase: event.phase,
        agent: event.agent,
        label: `${event.agent} call #${event.payload.attempt ?? 1}`,
      });
      break;
    }
    case "transition": {
      model.contextPanes.flow.push({
        seq: event.seq,
        phase: event.phase,
        from: String(event.payload.from ?? ""),
        to: String(event.payload.to ?? ""),
        condition: String(event.payload.condition ?? ""),
      });
      break;
    }
    case "warning":
    case "error":
    case "custom_node": {
      const notice: Notice = {
        seq: event.seq,
        phase: event.phase,
        agent: event.agent,
        text: String(
          event.payload.message ?? event.payload.node ?? event.phase
        ),
        error: event.phase === "error",
      };
      // Evaluator alerts and failures float to the top of the review pane.
      if (notice.error) {
        model.evaluatorNotices.unshift(notice);
      } else {
        model.evaluatorNotices.push(notice);
      }
      break;
    }
    default: {
      model.evaluatorNotices.push({
        seq: event.seq,
        phase: event.phase,
        agent: event.agent,
        text: `unrecognized phase ${event.phase}`,
        error: false,
      });
    }
  }
  return model;
}

/**
 * Header update on tool completion: the pending accordion retitles to
 * "name — <arg summary> → <result summary>" without touching open state.
 */
export function retitleAccordion(previous: PaneModel, event: TraceEvent): PaneModel {
  const model = clone(previous);
  for (const group of model.coordinatorExecution) {
    for (const accordion of group.accordions) {
      if (accordion.key === event.event_id && accordion.pending) {
        const args = summarize(event.payload.args ?? {});
        accordion.title = `${event.payload.tool} — ${args} → ${resultSummary(event.payload)}`;
        accordion.pending = false;
      }
    }
  }
  return model;
}

/** User interaction: toggle a single accordion's disclosure state. */
export function toggleAccordion(previous: PaneModel, key: string): PaneModel {
  const model = clone(previous);
  for (const group of model.coordinatorExecution) {
    for (const accordion of group.accordions) {
      if (accordion.key === key) accordion.open = !accordion.open;
    }
  }
  return model;
}

/** Full pipeline for one incoming event (fold, then live retitle). */
export function ingest(model: PaneModel, event: TraceEvent): PaneModel {
  let next = applyEvent(model, event);
  if (event.phase === "tool_call" && next !== model) {
    next = retitleAccordion(next, event);
  }
  return next;
}

/**
 * Flat enumeration of the primary rendered elements with their phases.
 * Used to check the no-event-loss invariant: per-phase element counts
 * equal per-phase event counts for a single-turn stream.
 */
export function elementsOf(model: PaneModel): { seq: number; phase: string }[] {
  const out: { seq: number; phase: string }[] = [];
  for (const item of model.history) out.push({ seq: item.seq, phase: item.phase });
  if (model.plannerTrace) {
    out.push({ seq: model.plannerTrace.seq, phase: model.plannerTrace.phase });
  }
  for (const notice of model.plannerNotices) {
    out.push({ seq: notice.seq, phase: notice.phase });
  }
  for (const group of model.coordinatorExecution) {
    if (group.key !== "ungrouped") out.push({ seq: group.seq, phase: group.phase });
    for (const accordion of group.accordions) {
      out.push({ seq: accordion.seq, phase: accordion.phase });
    }
    for (const row of group.rows) out.push({ seq: row.seq, phase: row.phase });
  }
  if (model.synthesis) out.push({ seq: model.synthesis.seq, phase: model.synthesis.phase });
  for (const entry of model.contextPanes.routing) {
    out.push({ seq: entry.seq, phase: entry.phase });
  }
  for (const entry of model.contextPanes.computations) {
    out.push({ seq: entry.seq, phase: entry.phase });
  }
  for (const entry of model.contextPanes.flow) {
    out.push({ seq: entry.seq, phase: entry.phase });
  }
  if (model.evaluatorReview) {
    out.push({ seq: model.evaluatorReview.seq, phase: model.evaluatorReview.phase });
  }
  for (const notice of model.evaluatorNotices) {
    out.push({ seq: notice.seq, phase: notice.phase });
  }
  return out.sort((a, b) => a.seq - b.seq);
}

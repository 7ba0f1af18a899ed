/**
 * Minimal DOM renderer for the four synchronized panes. Rendering is a
 * projection of PaneModel; all state lives in the model, so a re-render
 * after every event is cheap and deterministic.
 */

import type { PaneModel } from "./reducer.js";

function el(tag: string, className: string, text?: string): HTMLElement {
  const node = document.createElement(tag);
  node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function renderPanes(
  root: HTMLElement,
  model: PaneModel,
  onToggle: (key: string) => void
): void {
  root.textContent = "";

  const planner = el("section", "pane planner");
  planner.appendChild(el("h2", "pane-title", "Planner Trace"));
  if (model.plannerTrace) {
    planner.appendChild(el("div", "goal", model.plannerTrace.goalSummary));
    const list = el("ul", "subtasks");
    for (const st of model.plannerTrace.subtasks) {
      const item = el("li", "subtask", `${st.subtaskId}: ${st.description}`);
      if (st.dependsOn.length) {
        item.appendChild(el("span", "deps", ` (after ${st.dependsOn.join(", ")})`));
      }
      list.appendChild(item);
    }
    planner.appendChild(list);
  }
  for (const notice of model.plannerNotices) {
    planner.appendChild(el("div", "notice error", notice.text));
  }

  const execution = el("section", "pane execution");
  execution.appendChild(el("h2", "pane-title", "Coordinator Execution"));
  for (const group of model.coordinatorExecution) {
    const box = el("div", group.failed ? "group failed" : "group");
    box.appendChild(el("h3", "group-label", group.label));
    for (const accordion of group.accordions) {
      const item = el("details", accordion.error ? "accordion error" : "accordion");
      if (accordion.open) item.setAttribute("open", "");
      const summary = el("summary", "accordion-title", accordion.title);
      if (accordion.error) summary.appendChild(el("span", "badge", "error"));
      summary.addEventListener("click", (evt) => {
        evt.preventDefault();
        onToggle(accordion.key);
      });
      item.appendChild(summary);
      item.appendChild(
        el("pre", "accordion-detail", JSON.stringify(accordion.detail, null, 2))
      );
      box.appendChild(item);
    }
    for (const row of group.rows) {
      box.appendChild(el("div", row.error ? "row error" : "row", row.text));
    }
    execution.appendChild(box);
  }
  if (model.synthesis) {
    execution.appendChild(el("div", "synthesis", model.synthesis.draft));
  }

  const context = el("section", "pane context");
  context.appendChild(el("h2", "pane-title", "Context"));
  const history = el("div", "history");
  for (const item of model.history) {
    history.appendChild(el("div", `turn ${item.speaker}`, `[${item.turn}] ${item.text}`));
  }
  context.appendChild(history);
  const retrieval = el("ul", "retrieval");
  for (const entry of model.contextPanes.retrieval) {
    retrieval.appendChild(
      el(
        "li",
        "chunk",
        `#${entry.ref.similarity_rank} ${entry.ref.chunk_id} (${entry.ref.index_name})`
      )
    );
  }
  context.appendChild(retrieval);
  const files = el("ul", "files");
  for (const path of model.contextPanes.files) {
    files.appendChild(el("li", "file", path));
  }
  context.appendChild(files);

  const review = el("section", "pane evaluator");
  review.appendChild(el("h2", "pane-title", "Evaluator Review"));
  for (const notice of model.evaluatorNotices) {
    review.appendChild(el("div", notice.error ? "notice error" : "notice", notice.text));
  }
  if (model.evaluatorReview) {
    const badge = model.evaluatorReview.passed ? "pass" : "fail";
    review.appendChild(el("div", `verdict ${badge}`, badge.toUpperCase()));
    review.appendChild(
      el(
        "div",
        "severity",
        `avg ${model.evaluatorReview.avgSeverity.toFixed(2)} / ` +
          `max ${model.evaluatorReview.maxSeverity.toFixed(2)}`
      )
    );
    for (const critique of model.evaluatorReview.critiques) {
      review.appendChild(
        el("div", "critique", `[${critique.severity.toFixed(2)}] ${critique.text}`)
      );
    }
  }

  root.appendChild(planner);
  root.appendChild(execution);
  root.appendChild(context);
  root.appendChild(review);
}

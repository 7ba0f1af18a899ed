/** Page bootstrap: create a session, attach the live stream, wire the input. */

import { connect, initialChatBox, submitChat, type ChatBoxState } from "./client.js";
import type { PaneModel } from "./reducer.js";
import { toggleAccordion } from "./reducer.js";
import { renderPanes } from "./render.js";
import type { SessionDescriptor } from "./types.js";

const BASE_URL = (window as any).GATEWAY_URL ?? "http://127.0.0.1:8080";

async function boot(): Promise<void> {
  const panes = document.getElementById("panes")!;
  const banner = document.getElementById("banner")!;
  const input = document.getElementById("chat-input") as HTMLInputElement;
  const send = document.getElementById("chat-send") as HTMLButtonElement;
  const inlineError = document.getElementById("chat-error")!;

  const created = await fetch(`${BASE_URL}/sessions`, { method: "POST" });
  const session = (await created.json()) as SessionDescriptor;

  let model: PaneModel | null = null;
  const draw = () => {
    if (model) {
      renderPanes(panes, model, (key) => {
        model = toggleAccordion(model!, key);
        draw();
      });
    }
  };

  connect({
    baseUrl: BASE_URL,
    sessionId: session.session_id,
    onModel: (next) => {
      model = next;
      draw();
    },
    onState: (state, detail) => {
      banner.textContent =
        state === "connected" ? "" : `stream ${state}${detail ? `: ${detail}` : ""}`;
      banner.className = state === "connected" ? "banner hidden" : "banner";
    },
  });

  let box: ChatBoxState = initialChatBox();
  const sync = () => {
    input.value = box.value;
    send.disabled = box.pending || !box.value.trim();
    inlineError.textContent = box.error ?? "";
  };
  input.addEventListener("input", () => {
    box = { ...box, value: input.value };
    sync();
  });
  send.addEventListener("click", async () => {
    box = { ...box, pending: true };
    sync();
    const { state } = await submitChat(box, BASE_URL, session.session_id);
    box = state;
    sync();
  });
  sync();
}

boot().catch((err) => {
  document.getElementById("banner")!.textContent = `failed to start: ${err}`;
});

/** Application wiring: session lifecycle against the service, keyboard-first
 * input, resume-on-reload via the URL hash (the only client-side state). */

import { ApiClient, HttpError } from "./api.js";
import {
  AppState, completed, failed, initialState, keyToAction, pendingResponse,
  startJudging, toggleOverlay, withConfidence, withJudgment, withNotice,
} from "./state.js";
import { render } from "./view.js";

export interface AppHandle {
  state(): AppState;
  /** resolves after the state machine settles and the DOM is rendered */
  settled(): Promise<void>;
}

export function initApp(root: Document, base = "", now: () => number = () => Date.now()): AppHandle {
  const api = new ApiClient(base);
  let state = initialState();
  let busy: Promise<void> = Promise.resolve();

  const win = root.defaultView;

  function set(next: AppState): void {
    state = next;
    render(root, state, api);
    root.dispatchEvent(new root.defaultView!.window.CustomEvent("app-rendered"));
  }

  function sessionIdFromHash(): string | null {
    const hash = win?.location.hash ?? "";
    return hash.length > 1 ? hash.slice(1) : null;
  }

  async function advance(sessionId: string): Promise<void> {
    const next = await api.nextItem(sessionId);
    if (next.status === "complete") {
      set(completed(sessionId, await api.results(sessionId)));
    } else {
      set(startJudging(sessionId, next, now()));
    }
  }

  async function submit(): Promise<void> {
    const payload = pendingResponse(state, now());
    if (!payload || !state.sessionId) {
      set(withNotice(state, "pick real/synthetic and a confidence level first"));
      return;
    }
    const sessionId = state.sessionId;
    try {
      await api.submitResponse(sessionId, payload);
    } catch (err) {
      if (err instanceof HttpError && err.status === 409) {
        // duplicate or stale item id: surface it and resync to the server state
        set(withNotice(state, `conflict: ${err.detail}; resyncing`));
      } else {
        set(failed(err instanceof Error ? err.message : String(err)));
        return;
      }
    }
    await advance(sessionId);
  }

  function enqueue(work: () => Promise<void>): void {
    busy = busy.then(work).catch((err) => {
      set(failed(err instanceof Error ? err.message : String(err)));
    });
  }

  root.addEventListener("keydown", (ev) => {
    const action = keyToAction((ev as KeyboardEvent).key);
    if (!action || state.phase !== "judging") return;
    if (action.kind === "judge") set(withJudgment(state, action.judgment));
    else if (action.kind === "confidence") set(withConfidence(state, action.level));
    else if (action.kind === "overlay") set(toggleOverlay(state));
    else if (action.kind === "submit") enqueue(submit);
  });

  wireButtons(root, {
    judge: (j) => set(withJudgment(state, j)),
    confidence: (level) => set(withConfidence(state, level)),
    overlay: () => set(toggleOverlay(state)),
    submit: () => enqueue(submit),
    create: (body) =>
      enqueue(async () => {
        const created = await api.createSession(body);
        if (win) win.location.hash = created.session_id;
        await advance(created.session_id);
      }),
  });

  const resumeId = sessionIdFromHash();
  if (resumeId) {
    enqueue(() => advance(resumeId));
  } else {
    set(initialState());
  }

  return {
    state: () => state,
    settled: () => busy,
  };
}

interface ButtonHooks {
  judge: (j: "real" | "synthetic") => void;
  confidence: (level: number) => void;
  overlay: () => void;
  submit: () => void;
  create: (body: {
    real_manifest: string;
    synth_manifest: string;
    n_per_class: number;
    seed: number;
    overlay?: boolean;
  }) => void;
}

function wireButtons(root: Document, hooks: ButtonHooks): void {
  root.getElementById("judge-real")?.addEventListener("click", () => hooks.judge("real"));
  root.getElementById("judge-synthetic")
    ?.addEventListener("click", () => hooks.judge("synthetic"));
  root.querySelectorAll("#confidence-row button").forEach((b, i) =>
    b.addEventListener("click", () => hooks.confidence(i)));
  root.getElementById("overlay-toggle")?.addEventListener("click", hooks.overlay);
  root.getElementById("submit-button")?.addEventListener("click", hooks.submit);
  root.getElementById("create-form")?.addEventListener("submit", (ev) => {
    ev.preventDefault();
    const value = (id: string) => (root.getElementById(id) as HTMLInputElement).value;
    hooks.create({
      real_manifest: value("real-manifest"),
      synth_manifest: value("synth-manifest"),
      n_per_class: Number(value("n-per-class")),
      seed: Number(value("seed")),
      overlay: (root.getElementById("with-overlay") as HTMLInputElement).checked,
    });
  });
}

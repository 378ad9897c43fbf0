/** Pure session-state core: the view is a function of the service's answers
 * plus the reader's pending input. Nothing here touches the DOM or network,
 * and no truth information ever exists client-side before completion. */

import type { NextActive, StudyResult } from "./api.js";

export const JUDGMENTS = ["real", "synthetic"] as const;
export type Judgment = (typeof JUDGMENTS)[number];

/** Five-level reader confidence, mapped onto [0, 1]. */
export const CONFIDENCE_LEVELS = [0.0, 0.25, 0.5, 0.75, 1.0] as const;
export const CONFIDENCE_LABELS = [
  "1 guess",
  "2 unsure",
  "3 moderate",
  "4 confident",
  "5 certain",
] as const;

export interface JudgingState {
  phase: "judging";
  sessionId: string;
  item: NextActive;
  judgment: Judgment | null;
  confidenceLevel: number | null; // index into CONFIDENCE_LEVELS
  shownAtMs: number;
  overlayVisible: boolean;
  notice: string | null;
}

export interface AppState {
  phase: "setup" | "loading" | "judging" | "complete" | "error";
  sessionId: string | null;
  judging: JudgingState | null;
  result: StudyResult | null;
  error: string | null;
}

export function initialState(): AppState {
  return { phase: "setup", sessionId: null, judging: null, result: null, error: null };
}

export function startJudging(
  sessionId: string,
  item: NextActive,
  nowMs: number,
  overlayVisible = true,
): AppState {
  return {
    phase: "judging",
    sessionId,
    judging: {
      phase: "judging",
      sessionId,
      item,
      judgment: null,
      confidenceLevel: null,
      shownAtMs: nowMs,
      overlayVisible,
      notice: null,
    },
    result: null,
    error: null,
  };
}

export function withJudgment(state: AppState, judgment: Judgment): AppState {
  if (state.phase !== "judging" || !state.judging) return state;
  return { ...state, judging: { ...state.judging, judgment, notice: null } };
}

export function withConfidence(state: AppState, level: number): AppState {
  if (state.phase !== "judging" || !state.judging) return state;
  if (level < 0 || level >= CONFIDENCE_LEVELS.length) return state;
  return { ...state, judging: { ...state.judging, confidenceLevel: level, notice: null } };
}

export function withNotice(state: AppState, notice: string): AppState {
  if (state.phase !== "judging" || !state.judging) return state;
  return { ...state, judging: { ...state.judging, notice } };
}

export function toggleOverlay(state: AppState): AppState {
  if (state.phase !== "judging" || !state.judging) return state;
  return {
    ...state,
    judging: { ...state.judging, overlayVisible: !state.judging.overlayVisible },
  };
}

export interface PendingResponse {
  item_id: string;
  judgment: Judgment;
  confidence: number;
  elapsed_ms: number;
}

/** The submission payload, or null while the reader's input is incomplete.
 * The optimistic lock is the item id: the service rejects a stale one. */
export function pendingResponse(state: AppState, nowMs: number): PendingResponse | null {
  const j = state.judging;
  if (state.phase !== "judging" || !j || j.judgment === null || j.confidenceLevel === null) {
    return null;
  }
  return {
    item_id: j.item.item_id,
    judgment: j.judgment,
    confidence: CONFIDENCE_LEVELS[j.confidenceLevel],
    elapsed_ms: Math.max(0, nowMs - j.shownAtMs),
  };
}

export function completed(sessionId: string, result: StudyResult): AppState {
  return { phase: "complete", sessionId, judging: null, result, error: null };
}

export function failed(message: string): AppState {
  return { phase: "error", sessionId: null, judging: null, result: null, error: message };
}

export function progressText(state: AppState): string {
  const j = state.judging;
  if (!j) return "";
  return `item ${j.item.index + 1} of ${j.item.total} (${j.item.answered} answered)`;
}

/** Keyboard map: r/s or arrows judge, 1..5 set confidence, Enter submits. */
export function keyToAction(key: string):
  | { kind: "judge"; judgment: Judgment }
  | { kind: "confidence"; level: number }
  | { kind: "submit" }
  | { kind: "overlay" }
  | null {
  if (key === "r" || key === "ArrowLeft") return { kind: "judge", judgment: "real" };
  if (key === "s" || key === "ArrowRight") return { kind: "judge", judgment: "synthetic" };
  if (/^[1-5]$/.test(key)) return { kind: "confidence", level: Number(key) - 1 };
  if (key === "Enter") return { kind: "submit" };
  if (key === "o") return { kind: "overlay" };
  return null;
}

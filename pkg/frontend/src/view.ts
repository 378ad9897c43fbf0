/** DOM rendering: projects AppState onto the static index.html skeleton. */

import type { ApiClient, StudyResult } from "./api.js";
import { formatAccuracy, formatAuc, rocGeometry } from "./roc.js";
import { AppState, progressText } from "./state.js";

function el<T extends HTMLElement>(root: Document, id: string): T {
  const node = root.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

export function render(root: Document, state: AppState, api: ApiClient): void {
  const setup = el(root, "setup-panel");
  const judging = el(root, "judging-panel");
  const results = el(root, "results-panel");
  const errorBox = el(root, "error-panel");
  setup.hidden = state.phase !== "setup";
  judging.hidden = state.phase !== "judging";
  results.hidden = state.phase !== "complete";
  errorBox.hidden = state.phase !== "error";

  if (state.phase === "error") {
    el(root, "error-message").textContent = state.error ?? "unknown failure";
    return;
  }

  if (state.phase === "judging" && state.judging) {
    const j = state.judging;
    el(root, "progress").textContent = progressText(state);
    const img = el<HTMLImageElement>(root, "slice-image");
    const overlayParam = j.item.overlay ? j.overlayVisible : null;
    const src = api.imageUrl(j.item.image_url, overlayParam);
    if (img.getAttribute("src") !== src) img.setAttribute("src", src);

    el(root, "judge-real").classList.toggle("selected", j.judgment === "real");
    el(root, "judge-synthetic").classList.toggle("selected", j.judgment === "synthetic");
    const conf = el(root, "confidence-row");
    conf.querySelectorAll("button").forEach((b, i) =>
      b.classList.toggle("selected", j.confidenceLevel === i));
    el(root, "overlay-toggle").hidden = !j.item.overlay;
    el(root, "notice").textContent =
      j.notice ?? "judge (R/S or arrows), confidence 1-5, Enter to submit";
  }

  if (state.phase === "complete" && state.result) {
    renderResults(root, state.result);
  }
}

function renderResults(root: Document, result: StudyResult): void {
  el(root, "result-accuracy").textContent = formatAccuracy(result.accuracy);
  el(root, "result-answered").textContent =
    `${result.n_answered} of ${result.n_items} items`;

  const table = el(root, "strata-table");
  const threshold = result.radius_threshold_mm;
  const rows = [
    [`small (< ${threshold} mm)`, result.stratified_accuracy.small],
    [`large (>= ${threshold} mm)`, result.stratified_accuracy.large],
  ] as const;
  table.innerHTML =
    "<tr><th>tumor size</th><th>items</th><th>correct</th><th>accuracy</th></tr>" +
    rows
      .map(([label, s]) =>
        `<tr><td>${label}</td><td>${s.n}</td><td>${s.correct}</td>` +
        `<td>${formatAccuracy(s.accuracy)}</td></tr>`)
      .join("");

  const aucNode = el(root, "result-auc");
  const svg = el(root, "roc-plot");
  if (result.roc) {
    aucNode.textContent = formatAuc(result.roc.auc);
    const geo = rocGeometry(result.roc.points);
    svg.setAttribute("viewBox", `0 0 ${geo.width} ${geo.height}`);
    svg.innerHTML =
      `<polyline points="${geo.diagonal}" class="roc-diagonal"></polyline>` +
      `<polyline points="${geo.polyline}" class="roc-curve"></polyline>`;
    svg.hidden = false;
  } else {
    aucNode.textContent = "n/a";
    svg.hidden = true;
  }
}

/** HTML renderers: pure string templates over model state. */

import { CanvasModel } from "./canvas.js";
import { DashboardState } from "./dashboard.js";
import { CONTROLS, PanelMode, controlEnabled } from "./permissions.js";

function esc(text: unknown): string {
  return String(text)
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function renderControls(mode: PanelMode, scope: "canvas" | "run"): string {
  const canvasControls = new Set(["save-workflow", "validate-workflow", "expand-factorial", "share-workflow"]);
  const relevant = CONTROLS.filter((c) =>
    scope === "canvas" ? canvasControls.has(c.id) : !canvasControls.has(c.id),
  );
  return relevant
    .map((control) => {
      const disabled = controlEnabled(control, mode) ? "" : " disabled";
      return `<button data-control="${control.id}"${disabled}>${esc(control.label)}</button>`;
    })
    .join("\n");
}

export function renderCanvas(model: CanvasModel, mode: PanelMode): string {
  const nodes = [...model.nodes.values()]
    .map((node) => {
      const cls = node.diagnostics.length ? "node invalid" : "node";
      const badge = node.group
        ? `<span class="group" style="background:${esc(node.color)}">${esc(node.group)}</span>`
        : "";
      const problems = node.diagnostics.map((d) => `<li class="violation">${esc(d)}</li>`).join("");
      return (
        `<div class="${cls}" data-node="${esc(node.id)}" ` +
        `style="left:${node.position.x}px;top:${node.position.y}px">` +
        `<strong>${esc(node.id)}</strong> <em>${esc(node.kind)}</em>${badge}` +
        (problems ? `<ul>${problems}</ul>` : "") +
        `</div>`
      );
    })
    .join("\n");
  const edges = model.edges
    .map(
      (edge) =>
        `<div class="edge${edge.flagged ? " flagged" : ""}" ` +
        `data-edge="${esc(edge.from)}->${esc(edge.to)}">${esc(edge.from)} &rarr; ${esc(edge.to)}</div>`,
    )
    .join("\n");
  return `<section class="canvas">\n${renderControls(mode, "canvas")}\n${nodes}\n${edges}\n</section>`;
}

export function renderDashboard(state: DashboardState, mode: PanelMode): string {
  const chips = `<span class="status-chip status-${esc(state.status)}">${esc(state.status)}</span>`;
  const cards = state.summaryCards
    .map((c) => `<div class="card"><span>${esc(c.label)}</span><strong>${esc(c.value)}</strong></div>`)
    .join("\n");
  const bars = state.blocks
    .map(
      (b) =>
        `<div class="block-bar" data-block="${esc(b.blockId)}">` +
        `${esc(b.blockId)}: <span class="bar ${esc(b.status)}">${esc(b.status)}</span></div>`,
    )
    .join("\n");
  const assignments = Object.entries(state.groupAssignments)
    .sort()
    .map(([g, n]) => `<li>${esc(g)}: ${n}</li>`)
    .join("");
  const countries = state.countryShares
    .slice(0, 10)
    .map(
      (slice) =>
        `<div class="country-row" data-country="${esc(slice.country)}">` +
        `${esc(slice.country)} <span style="width:${Math.round(slice.share * 300)}px"></span>` +
        `${(slice.share * 100).toFixed(1)}%</div>`,
    )
    .join("\n");
  const timeline = state.timeline
    .map(
      (t) =>
        `<li class="timeline-${esc(t.event)}">${esc(t.label)}${t.at ? ` <time>${esc(t.at)}</time>` : ""}</li>`,
    )
    .join("");
  const pending = state.pendingQuotaEdit
    ? `<div class="pending-quota">quota edit staged; applies at next checkpoint</div>`
    : "";
  const error = state.lastError
    ? `<div class="api-error" data-code="${esc(state.lastError.code)}">` +
      `${esc(state.lastError.code)}: ${esc(state.lastError.message)}</div>`
    : "";
  return (
    `<section class="dashboard" data-run="${esc(state.runId)}">\n` +
    `${chips}\n${renderControls(mode, "run")}\n` +
    `<div class="cards">${cards}</div>\n` +
    `<div class="blocks">${bars}</div>\n` +
    `<ul class="assignments">${assignments}</ul>\n` +
    `<div class="countries">${countries}</div>\n` +
    `<ol class="timeline">${timeline}</ol>\n${pending}\n${error}\n</section>`
  );
}

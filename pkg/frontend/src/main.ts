/**
 * Browser bootstrap. Owner sessions edit and operate; opening the page with
 * ?share=<token> loads the shared workflow read-only with every mutating
 * control disabled.
 */

import { ApiError, CrowdlabClient } from "./api.js";
import { CanvasModel } from "./canvas.js";
import { RunDashboard } from "./dashboard.js";
import { PanelMode } from "./permissions.js";
import { renderCanvas, renderDashboard } from "./render.js";

const POLL_INTERVAL_MS = 5000;

function el(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node;
}

async function boot(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const base = params.get("api") ?? "";
  const shareToken = params.get("share");
  const mode: PanelMode = shareToken ? "read-only" : "owner";
  const client = new CrowdlabClient(base);

  let canvas = new CanvasModel({ name: "untitled" });
  let workflowId: string | null = params.get("workflow");

  if (shareToken) {
    const shared = await client.sharedView(shareToken);
    canvas = CanvasModel.fromWorkflowDoc(shared.workflow);
  } else if (workflowId) {
    canvas = CanvasModel.fromWorkflowDoc(await client.getWorkflow(workflowId));
  }

  const canvasHost = el("canvas-host");
  const dashboardHost = el("dashboard-host");
  const notices = el("notices");

  const redrawCanvas = () => {
    canvasHost.innerHTML = renderCanvas(canvas, mode);
    bindCanvasControls();
  };

  const say = (text: string) => {
    notices.textContent = text;
  };

  function bindCanvasControls(): void {
    canvasHost.querySelector('[data-control="save-workflow"]')?.addEventListener("click", () => {
      void saveWorkflow();
    });
    canvasHost
      .querySelector('[data-control="validate-workflow"]')
      ?.addEventListener("click", () => void validateWorkflow());
    canvasHost
      .querySelector('[data-control="expand-factorial"]')
      ?.addEventListener("click", () => {
        const spec = window.prompt(
          "factors as name=level1|level2; one factor per ';'",
          "condition=baseline|h100;size=short|long",
        );
        if (!spec) return;
        const factors: [string, string[]][] = spec.split(";").map((part) => {
          const [name, levels] = part.split("=");
          return [name!.trim(), (levels ?? "").split("|").map((l) => l.trim())];
        });
        canvas.applyFactorial(factors);
        redrawCanvas();
      });
    canvasHost
      .querySelector('[data-control="share-workflow"]')
      ?.addEventListener("click", () => void shareWorkflow());
  }

  async function saveWorkflow(): Promise<void> {
    try {
      const doc = canvas.toWorkflowDoc();
      const ref = workflowId
        ? await client.putWorkflow(workflowId, doc)
        : await client.createWorkflow(doc);
      workflowId = ref.id;
      canvas.dirty = false;
      say(`saved ${ref.id} v${ref.version}`);
      await validateWorkflow();
    } catch (error) {
      if (error instanceof ApiError) say(`${error.code}: ${error.message}`);
      else throw error;
    }
  }

  async function validateWorkflow(): Promise<void> {
    if (!workflowId) return;
    const result = await client.validateWorkflow(workflowId);
    const global = canvas.applyViolations(result.violations);
    redrawCanvas();
    say(result.ok ? "workflow valid" : `violations: ${global.join("; ") || "see nodes"}`);
  }

  async function shareWorkflow(): Promise<void> {
    if (!workflowId) return;
    const grant = await client.shareWorkflow(workflowId);
    say(`read-only link: ${window.location.pathname}?share=${grant.token}`);
  }

  redrawCanvas();

  const runId = params.get("run");
  if (runId) {
    const dashboard = new RunDashboard(client, runId, POLL_INTERVAL_MS, (state) => {
      dashboardHost.innerHTML = renderDashboard(state, mode);
      if (mode === "owner") {
        dashboardHost
          .querySelector('[data-control="pause-run"]')
          ?.addEventListener("click", () => void dashboard.pause());
        dashboardHost
          .querySelector('[data-control="resume-run"]')
          ?.addEventListener("click", () => void dashboard.resume());
        dashboardHost
          .querySelector('[data-control="cancel-run"]')
          ?.addEventListener("click", () => void dashboard.cancel());
        dashboardHost
          .querySelector('[data-control="edit-quotas"]')
          ?.addEventListener("click", () => {
            const cap = window.prompt("max share per bucket (0..1)", "0.15");
            if (cap) void dashboard.editQuotas({ maxSharePerBucket: Number(cap) });
          });
      }
    });
    dashboard.start();
  }
}

if (typeof window !== "undefined" && typeof document !== "undefined") {
  void boot();
}

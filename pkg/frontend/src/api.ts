/**
 * Typed client for the crowdlab service API.
 *
 * Every request the panel can issue is declared in REQUEST_TABLE below and
 * built through one helper, so the UI structurally cannot talk to an
 * undocumented endpoint; the contract test checks the table against the
 * server's machine-readable API description.
 */

export interface RequestSpec {
  readonly method: "GET" | "POST" | "PUT" | "DELETE";
  readonly path: string; // template with {placeholders}
}

export const REQUEST_TABLE = {
  createWorkflow: { method: "POST", path: "/workflows" },
  getWorkflow: { method: "GET", path: "/workflows/{wf_id}" },
  putWorkflow: { method: "PUT", path: "/workflows/{wf_id}" },
  validateWorkflow: { method: "POST", path: "/workflows/{wf_id}/validate" },
  launchRun: { method: "POST", path: "/workflows/{wf_id}/runs" },
  shareWorkflow: { method: "POST", path: "/workflows/{wf_id}/share" },
  runStatus: { method: "GET", path: "/runs/{run_id}" },
  pauseRun: { method: "POST", path: "/runs/{run_id}/pause" },
  resumeRun: { method: "POST", path: "/runs/{run_id}/resume" },
  cancelRun: { method: "POST", path: "/runs/{run_id}/cancel" },
  runReport: { method: "GET", path: "/runs/{run_id}/report" },
  runAudit: { method: "GET", path: "/runs/{run_id}/audit" },
  scheduleState: { method: "GET", path: "/runs/{run_id}/schedule-state" },
  editQuotas: { method: "PUT", path: "/runs/{run_id}/quotas" },
  revokeShare: { method: "DELETE", path: "/share/{token}" },
  sharedView: { method: "GET", path: "/shared/{token}" },
} as const satisfies Record<string, RequestSpec>;

export type RequestName = keyof typeof REQUEST_TABLE;

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export interface WorkflowRef {
  id: string;
  version: number;
}

export interface ValidationResponse {
  ok: boolean;
  violations: string[];
}

export interface BlockProgress {
  status: string;
  attempts: number;
  published: boolean;
}

export interface RunStatus {
  runId: string;
  workflowId: string;
  workflowVersion: number;
  status: string;
  startedAt: string;
  finishedAt: string | null;
  blocks: Record<string, BlockProgress>;
  judgments: number;
  groupJudgments: Record<string, number>;
  groupAssignments: Record<string, number>;
  toggles: Record<string, boolean>;
}

export interface AuditEvent {
  seq: number;
  event: string;
  [key: string]: unknown;
}

export interface AuditPage {
  events: AuditEvent[];
  nextCursor: number;
}

export interface ShareGrant {
  token: string;
  url: string;
}

export interface ScheduleState {
  runId: string;
  status: string;
  pause: { source: string } | null;
  schedule: unknown;
  windowCounts: Record<string, number>;
  pendingQuotaEdit: Record<string, unknown> | null;
}

/** Bias report as produced by the service; consumed for display only. */
export interface BiasReport {
  report_version?: number;
  total_judgments: number;
  total_workers?: number;
  returning_worker_fraction?: number;
  crossover_worker_fraction?: number;
  country_dominance?: {
    per_country: Record<string, number>;
    top_k: { country: string; share: number }[];
    top_k_share: number;
  };
  cohort_sizes?: Record<string, number>;
  estimated_discard?: { fraction: number };
  [key: string]: unknown;
}

export interface QuotaEdit {
  maxSharePerBucket?: number;
  enforcement?: string;
  restMaxShare?: number;
  buckets?: { headCountry: string; members: string[] }[];
}

export class CrowdlabClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetcher: typeof fetch = fetch,
  ) {}

  private url(spec: RequestSpec, params: Record<string, string>): string {
    const path = spec.path.replace(/\{(\w+)\}/g, (_, name: string) => {
      const value = params[name];
      if (value === undefined) throw new Error(`missing path parameter ${name}`);
      return encodeURIComponent(value);
    });
    return this.baseUrl + path;
  }

  private async request<T>(
    name: RequestName,
    params: Record<string, string> = {},
    body?: unknown,
    query?: Record<string, string>,
  ): Promise<T> {
    const spec = REQUEST_TABLE[name];
    let url = this.url(spec, params);
    if (query && Object.keys(query).length > 0) {
      url += "?" + new URLSearchParams(query).toString();
    }
    const response = await this.fetcher(url, {
      method: spec.method,
      headers: body === undefined ? {} : { "content-type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const payload = await response.json().catch(() => ({}));
    if (!response.ok) {
      const err = (payload as { error?: { code?: string; message?: string } }).error;
      throw new ApiError(
        response.status,
        err?.code ?? `http-${response.status}`,
        err?.message ?? response.statusText,
      );
    }
    return payload as T;
  }

  createWorkflow(doc: unknown): Promise<WorkflowRef> {
    return this.request("createWorkflow", {}, doc);
  }

  getWorkflow(wfId: string, version?: number): Promise<Record<string, unknown>> {
    return this.request(
      "getWorkflow",
      { wf_id: wfId },
      undefined,
      version === undefined ? undefined : { version: String(version) },
    );
  }

  putWorkflow(wfId: string, doc: unknown): Promise<WorkflowRef> {
    return this.request("putWorkflow", { wf_id: wfId }, doc);
  }

  validateWorkflow(wfId: string, unitSchema?: string[]): Promise<ValidationResponse> {
    return this.request("validateWorkflow", { wf_id: wfId }, { unitSchema: unitSchema ?? null });
  }

  launchRun(
    wfId: string,
    options: {
      adapter: string;
      units?: unknown[];
      toggles?: Record<string, boolean>;
      seed?: number;
      horizonHours?: number;
    },
  ): Promise<{ runId: string }> {
    return this.request("launchRun", { wf_id: wfId }, { units: [], ...options });
  }

  shareWorkflow(wfId: string): Promise<ShareGrant> {
    return this.request("shareWorkflow", { wf_id: wfId });
  }

  sharedView(token: string): Promise<{ workflow: Record<string, unknown>; scope: string }> {
    return this.request("sharedView", { token });
  }

  revokeShare(token: string): Promise<{ revoked: boolean }> {
    return this.request("revokeShare", { token });
  }

  runStatus(runId: string): Promise<RunStatus> {
    return this.request("runStatus", { run_id: runId });
  }

  pauseRun(runId: string): Promise<{ status: string }> {
    return this.request("pauseRun", { run_id: runId });
  }

  resumeRun(runId: string): Promise<{ status: string }> {
    return this.request("resumeRun", { run_id: runId });
  }

  cancelRun(runId: string): Promise<{ status: string }> {
    return this.request("cancelRun", { run_id: runId });
  }

  runReport(runId: string): Promise<BiasReport> {
    return this.request("runReport", { run_id: runId });
  }

  runAudit(runId: string, after = 0, limit = 200): Promise<AuditPage> {
    return this.request("runAudit", { run_id: runId }, undefined, {
      after: String(after),
      limit: String(limit),
    });
  }

  scheduleState(runId: string): Promise<ScheduleState> {
    return this.request("scheduleState", { run_id: runId });
  }

  editQuotas(runId: string, edit: QuotaEdit): Promise<{ staged: unknown; appliesAt: string }> {
    return this.request("editQuotas", { run_id: runId }, edit);
  }
}

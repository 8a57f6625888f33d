/**
 * Run dashboard state: everything shown is lifted verbatim from service
 * responses; the only client-side work is display formatting. Refresh is
 * polling-based (default 5 s) because hour-scale experiments tolerate that
 * staleness and it keeps the operational model simple.
 */

import {
  ApiError,
  AuditEvent,
  BiasReport,
  CrowdlabClient,
  QuotaEdit,
  RunStatus,
  ScheduleState,
} from "./api.js";

export interface BlockBar {
  blockId: string;
  status: string;
  published: boolean;
}

export interface CountrySlice {
  country: string;
  share: number;
}

export interface TimelineEntry {
  seq: number;
  event: string;
  label: string;
  at?: string;
}

export interface DashboardState {
  runId: string;
  status: string;
  blocks: BlockBar[];
  judgments: number;
  groupAssignments: Record<string, number>;
  groupJudgments: Record<string, number>;
  countryShares: CountrySlice[];
  summaryCards: { label: string; value: string }[];
  timeline: TimelineEntry[];
  pendingQuotaEdit: Record<string, unknown> | null;
  windowCounts: Record<string, number>;
  lastError: { code: string; message: string } | null;
  refreshedAt: number;
}

const TIMELINE_EVENTS = new Set([
  "run-started",
  "run-paused",
  "run-resumed",
  "run-completed",
  "run-failed",
  "run-cancelled",
  "checkpoint",
  "quota-edit-staged",
  "quota-edit-applied",
  "bucket-rotation",
  "task-published",
  "block-complete",
]);

function formatPercent(value: number | undefined): string {
  return value === undefined ? "n/a" : `${(value * 100).toFixed(1)}%`;
}

export function composeState(
  runId: string,
  status: RunStatus,
  report: BiasReport | null,
  schedule: ScheduleState | null,
  audit: AuditEvent[],
  refreshedAt: number,
): DashboardState {
  const blocks: BlockBar[] = Object.entries(status.blocks)
    .map(([blockId, b]) => ({ blockId, status: b.status, published: b.published }))
    .sort((a, b) => a.blockId.localeCompare(b.blockId));
  const countryShares: CountrySlice[] = report?.country_dominance
    ? Object.entries(report.country_dominance.per_country)
        .map(([country, share]) => ({ country, share }))
        .sort((a, b) => b.share - a.share)
    : [];
  const summaryCards = [
    { label: "judgments", value: String(report?.total_judgments ?? status.judgments) },
    { label: "workers", value: String(report?.total_workers ?? "n/a") },
    { label: "returning", value: formatPercent(report?.returning_worker_fraction) },
    { label: "crossover", value: formatPercent(report?.crossover_worker_fraction) },
    {
      label: "top countries",
      value: formatPercent(report?.country_dominance?.top_k_share),
    },
    {
      label: "cleanup would discard",
      value: formatPercent(report?.estimated_discard?.fraction),
    },
  ];
  const timeline: TimelineEntry[] = audit
    .filter((e) => TIMELINE_EVENTS.has(e.event))
    .map((e) => ({
      seq: e.seq,
      event: e.event,
      label: e.event.replace(/-/g, " "),
      at: typeof e.at === "string" ? e.at : undefined,
    }));
  return {
    runId,
    status: status.status,
    blocks,
    judgments: status.judgments,
    groupAssignments: status.groupAssignments,
    groupJudgments: status.groupJudgments,
    countryShares,
    summaryCards,
    timeline,
    pendingQuotaEdit: schedule?.pendingQuotaEdit ?? null,
    windowCounts: schedule?.windowCounts ?? {},
    lastError: null,
    refreshedAt,
  };
}

export class RunDashboard {
  state: DashboardState | null = null;
  private timer: ReturnType<typeof setInterval> | null = null;
  private auditCursor = 0;
  private auditLog: AuditEvent[] = [];

  constructor(
    private readonly client: CrowdlabClient,
    readonly runId: string,
    readonly pollIntervalMs = 5000,
    private readonly onChange: (state: DashboardState) => void = () => {},
  ) {}

  async refresh(): Promise<DashboardState> {
    try {
      const status = await this.client.runStatus(this.runId);
      const [report, schedule, audit] = await Promise.all([
        this.client.runReport(this.runId).catch(() => null),
        this.client.scheduleState(this.runId).catch(() => null),
        this.client.runAudit(this.runId, this.auditCursor),
      ]);
      if (audit.events.length > 0) {
        this.auditLog = this.auditLog.concat(audit.events);
        this.auditCursor = audit.nextCursor;
      }
      this.state = composeState(
        this.runId,
        status,
        report,
        schedule,
        this.auditLog,
        Date.now(),
      );
    } catch (error) {
      if (error instanceof ApiError && this.state) {
        // API errors render verbatim with their machine-readable code
        this.state = { ...this.state, lastError: { code: error.code, message: error.message } };
      } else {
        throw error;
      }
    }
    this.onChange(this.state!);
    return this.state!;
  }

  start(): void {
    if (this.timer !== null) return;
    void this.refresh();
    this.timer = setInterval(() => void this.refresh(), this.pollIntervalMs);
  }

  stop(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }

  // Controls map 1:1 to service endpoints; the next poll reflects the change.
  pause(): Promise<{ status: string }> {
    return this.client.pauseRun(this.runId);
  }

  resume(): Promise<{ status: string }> {
    return this.client.resumeRun(this.runId);
  }

  cancel(): Promise<{ status: string }> {
    return this.client.cancelRun(this.runId);
  }

  editQuotas(edit: QuotaEdit): Promise<{ staged: unknown; appliesAt: string }> {
    return this.client.editQuotas(this.runId, edit);
  }
}

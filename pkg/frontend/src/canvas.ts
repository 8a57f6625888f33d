/**
 * Canvas model behind the workflow editor.
 *
 * Nodes carry x/y layout hints that serialize into the workflow file's
 * optional display section, so a shared link reproduces the diagram.
 * The model is always serializable; structural problems are diagnosed by
 * the server's validate endpoint and mapped back onto nodes and edges.
 */

import { colorForGroup } from "./colors.js";

export type BlockKind = "Do" | "Lambda";

export interface Point {
  x: number;
  y: number;
}

export interface CanvasNode {
  id: string;
  kind: BlockKind;
  position: Point;
  group?: string;
  color?: string;
  /** Do payload (template etc.) or Lambda transform, carried verbatim. */
  config: Record<string, unknown>;
  diagnostics: string[];
}

export interface CanvasEdge {
  from: string;
  to: string;
  flagged: boolean;
}

export interface WorkflowMeta {
  name: string;
  version?: number;
  policy?: Record<string, unknown>;
  schedule?: Record<string, unknown> | null;
  quotas?: Record<string, unknown> | null;
}

const DEFAULT_TEMPLATE = {
  title: "Untitled task",
  instructions: "",
  elements: [
    { kind: "text", binding: "text", options: [], required: true },
    { kind: "single-choice", binding: "text", options: ["in", "out"], required: true },
  ],
  paging: { unitsPerPage: 3, goldPerPage: 1, firstPageAllGold: false, maxPages: 6 },
};

const DEFAULT_POLICY = {
  design: "between-subjects",
  recurrence: "block-all-repeats",
  crossover: "block",
  messageOnBlock: "You have already participated in this experiment. Thank you!",
};

export interface FactorialOptions {
  votesPerUnit?: number;
  origin?: Point;
  columns?: number;
  spacing?: Point;
}

export class CanvasModel {
  nodes = new Map<string, CanvasNode>();
  edges: CanvasEdge[] = [];
  selection: string | null = null;
  dirty = false;
  meta: WorkflowMeta;
  private groupOrder: string[] = [];
  private groupKinds = new Map<string, string>();

  constructor(meta?: Partial<WorkflowMeta>) {
    this.meta = { name: meta?.name ?? "untitled", ...meta };
  }

  groupColor(group: string): string {
    let index = this.groupOrder.indexOf(group);
    if (index === -1) {
      this.groupOrder.push(group);
      index = this.groupOrder.length - 1;
    }
    return colorForGroup(group, index);
  }

  addDoNode(id: string, group: string, position: Point, config?: Record<string, unknown>): CanvasNode {
    if (this.nodes.has(id)) throw new Error(`duplicate node id: ${id}`);
    const node: CanvasNode = {
      id,
      kind: "Do",
      position,
      group,
      color: this.groupColor(group),
      config: config ?? {
        template: structuredClone(DEFAULT_TEMPLATE),
        platform: "file",
        rewardMinorUnits: 0,
        votesPerUnit: 3,
      },
      diagnostics: [],
    };
    this.nodes.set(id, node);
    this.dirty = true;
    return node;
  }

  addLambdaNode(
    id: string,
    op: string,
    parameters: Record<string, unknown>,
    position: Point,
  ): CanvasNode {
    if (this.nodes.has(id)) throw new Error(`duplicate node id: ${id}`);
    const node: CanvasNode = {
      id,
      kind: "Lambda",
      position,
      config: { op, parameters },
      diagnostics: [],
    };
    this.nodes.set(id, node);
    this.dirty = true;
    return node;
  }

  connect(from: string, to: string): CanvasEdge {
    if (!this.nodes.has(from) || !this.nodes.has(to)) {
      throw new Error(`edge endpoints must exist: ${from} -> ${to}`);
    }
    const edge: CanvasEdge = { from, to, flagged: false };
    this.edges.push(edge);
    this.dirty = true;
    return edge;
  }

  assignGroup(nodeId: string, group: string): void {
    const node = this.nodes.get(nodeId);
    if (!node) throw new Error(`unknown node: ${nodeId}`);
    if (node.kind !== "Do") throw new Error("only Do nodes belong to a group");
    node.group = group;
    node.color = this.groupColor(group);
    this.dirty = true;
  }

  setGroupKind(group: string, kind: string): void {
    this.groupKinds.set(group, kind);
    this.dirty = true;
  }

  moveNode(nodeId: string, position: Point): void {
    const node = this.nodes.get(nodeId);
    if (!node) throw new Error(`unknown node: ${nodeId}`);
    node.position = position;
    this.dirty = true;
  }

  select(nodeId: string | null): void {
    this.selection = nodeId;
  }

  /** Expand a factorial design into one Do node per level combination,
   * laid out on a grid and colored by group. */
  applyFactorial(factors: [string, string[]][], options: FactorialOptions = {}): CanvasNode[] {
    if (factors.length === 0) throw new Error("no factors");
    const columns = options.columns ?? 6;
    const origin = options.origin ?? { x: 40, y: 40 };
    const spacing = options.spacing ?? { x: 170, y: 110 };
    let combos: string[][] = [[]];
    for (const [, levels] of factors) {
      if (levels.length === 0) throw new Error("factor with no levels");
      combos = combos.flatMap((combo) => levels.map((level) => [...combo, level]));
    }
    const created: CanvasNode[] = [];
    combos.forEach((combo, index) => {
      const group = combo.join("-");
      const position = {
        x: origin.x + (index % columns) * spacing.x,
        y: origin.y + Math.floor(index / columns) * spacing.y,
      };
      const node = this.addDoNode(`do-${group}`, group, position, {
        template: structuredClone(DEFAULT_TEMPLATE),
        platform: "file",
        rewardMinorUnits: 0,
        votesPerUnit: options.votesPerUnit ?? 3,
      });
      created.push(node);
    });
    return created;
  }

  toWorkflowDoc(): Record<string, unknown> {
    const blocks = [...this.nodes.values()].map((node) => {
      const block: Record<string, unknown> = {
        id: node.id,
        kind: node.kind,
        display: { x: node.position.x, y: node.position.y },
      };
      if (node.kind === "Do") {
        block.do = { ...node.config, group: node.group ?? "default" };
      } else {
        block.transform = node.config;
      }
      return block;
    });
    const groups = this.groupOrder
      .filter((g) => [...this.nodes.values()].some((n) => n.group === g))
      .map((g) => ({
        id: g,
        label: g,
        colorHint: this.groupColor(g),
        kind: this.groupKinds.get(g) ?? "",
      }));
    return {
      schemaVersion: 1,
      id: this.meta.name,
      name: this.meta.name,
      version: this.meta.version ?? 1,
      blocks,
      edges: this.edges.map((e) => ({ from: e.from, to: e.to })),
      groups,
      policy: this.meta.policy ?? { ...DEFAULT_POLICY },
      schedule: this.meta.schedule ?? null,
      quotas: this.meta.quotas ?? null,
    };
  }

  static fromWorkflowDoc(doc: Record<string, unknown>): CanvasModel {
    const model = new CanvasModel({
      name: String(doc.name ?? "untitled"),
      version: Number(doc.version ?? 1),
      policy: (doc.policy as Record<string, unknown>) ?? undefined,
      schedule: (doc.schedule as Record<string, unknown>) ?? null,
      quotas: (doc.quotas as Record<string, unknown>) ?? null,
    });
    for (const group of (doc.groups as { id: string; kind?: string }[]) ?? []) {
      model.groupColor(group.id);
      if (group.kind) model.groupKinds.set(group.id, group.kind);
    }
    let fallback = 0;
    for (const raw of (doc.blocks as Record<string, unknown>[]) ?? []) {
      const display = (raw.display as { x?: number; y?: number }) ?? {};
      const position = {
        x: display.x ?? 40 + (fallback % 6) * 170,
        y: display.y ?? 40 + Math.floor(fallback / 6) * 110,
      };
      fallback += 1;
      if (raw.kind === "Do") {
        const payload = { ...(raw.do as Record<string, unknown>) };
        const group = String(payload.group ?? "default");
        delete payload.group;
        model.addDoNode(String(raw.id), group, position, payload);
      } else {
        const transform = (raw.transform as { op: string; parameters: Record<string, unknown> }) ?? {
          op: "concat",
          parameters: {},
        };
        model.addLambdaNode(String(raw.id), transform.op, transform.parameters ?? {}, position);
        const node = model.nodes.get(String(raw.id))!;
        node.config = transform;
      }
    }
    for (const edge of (doc.edges as { from: string; to: string }[]) ?? []) {
      model.connect(edge.from, edge.to);
    }
    model.dirty = false;
    return model;
  }

  /** Map server-side validation violations onto nodes and edges:
   * "cycle: A,B" flags every edge among the listed nodes, and
   * "block X: ..." lands on node X. Unmatched messages stay global. */
  applyViolations(violations: string[]): string[] {
    for (const node of this.nodes.values()) node.diagnostics = [];
    for (const edge of this.edges) edge.flagged = false;
    const global: string[] = [];
    for (const violation of violations) {
      const cycle = violation.match(/^cycle: (.+)$/);
      if (cycle) {
        const members = new Set(cycle[1]!.split(",").map((s) => s.trim()));
        for (const edge of this.edges) {
          if (members.has(edge.from) && members.has(edge.to)) edge.flagged = true;
        }
        for (const id of members) this.nodes.get(id)?.diagnostics.push(violation);
        continue;
      }
      const nodeMatch = violation.match(/^block ([^:]+):/);
      if (nodeMatch && this.nodes.has(nodeMatch[1]!)) {
        this.nodes.get(nodeMatch[1]!)!.diagnostics.push(violation);
        continue;
      }
      const edgeMatch = violation.match(/^edge endpoint does not exist: (.+)$/);
      if (edgeMatch) {
        for (const edge of this.edges) {
          if (edge.from === edgeMatch[1] || edge.to === edgeMatch[1]) edge.flagged = true;
        }
      }
      global.push(violation);
    }
    return global;
  }

  /** Canonical structure for equality checks (ignores colors/selection). */
  structure(): unknown {
    return {
      blocks: [...this.nodes.values()]
        .map((n) => ({
          id: n.id,
          kind: n.kind,
          group: n.group ?? null,
          position: n.position,
          config: n.config,
        }))
        .sort((a, b) => a.id.localeCompare(b.id)),
      edges: [...this.edges]
        .map((e) => [e.from, e.to])
        .sort((a, b) => (a[0]! + a[1]!).localeCompare(b[0]! + b[1]!)),
      groups: [...this.groupOrder].sort(),
      policy: this.meta.policy ?? { ...DEFAULT_POLICY },
    };
  }
}

/**
 * Control/permission matrix. A session is either the requester ("owner")
 * or a read-only visitor following a share link; read-only mode renders
 * the identical dashboard with every mutating control disabled.
 */

export type PanelMode = "owner" | "read-only";

export interface ControlSpec {
  id: string;
  label: string;
  mutating: boolean;
}

export const CONTROLS: readonly ControlSpec[] = [
  { id: "save-workflow", label: "Save workflow", mutating: true },
  { id: "validate-workflow", label: "Validate", mutating: false },
  { id: "expand-factorial", label: "Factorial expansion", mutating: true },
  { id: "launch-run", label: "Launch run", mutating: true },
  { id: "pause-run", label: "Pause", mutating: true },
  { id: "resume-run", label: "Resume", mutating: true },
  { id: "cancel-run", label: "Cancel", mutating: true },
  { id: "edit-quotas", label: "Edit quotas", mutating: true },
  { id: "share-workflow", label: "Create share link", mutating: true },
  { id: "revoke-share", label: "Revoke share link", mutating: true },
  { id: "view-report", label: "View report", mutating: false },
  { id: "view-audit", label: "View audit trail", mutating: false },
  { id: "refresh", label: "Refresh", mutating: false },
] as const;

export function controlEnabled(control: ControlSpec, mode: PanelMode): boolean {
  return mode === "owner" || !control.mutating;
}

export function permissionMatrix(mode: PanelMode): Record<string, boolean> {
  return Object.fromEntries(CONTROLS.map((c) => [c.id, controlEnabled(c, mode)]));
}

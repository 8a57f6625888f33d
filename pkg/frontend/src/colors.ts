/** Stable group colors: same group id, same color, everywhere. */

const PALETTE = [
  "#4e79a7",
  "#f28e2b",
  "#59a14f",
  "#e15759",
  "#b07aa1",
  "#edc948",
  "#76b7b2",
  "#ff9da7",
  "#9c755f",
  "#bab0ac",
];

function hashCode(text: string): number {
  let hash = 0;
  for (let i = 0; i < text.length; i++) {
    hash = (hash * 31 + text.charCodeAt(i)) | 0;
  }
  return Math.abs(hash);
}

export function colorForGroup(group: string, index?: number): string {
  if (index !== undefined && index < PALETTE.length) {
    return PALETTE[index]!;
  }
  return PALETTE[hashCode(group) % PALETTE.length]!;
}

/** Stable per-track display colors: the same id always hashes to the
 * same hue, so a track keeps its color across frames, sessions and
 * reloads without any stored assignment. */

/** 32-bit FNV-1a over the UTF-16 code units of `s`. */
export function fnv1a(s: string): number {
  let h = 0x811c9dc5;
  for (let i = 0; i < s.length; i++) {
    h ^= s.charCodeAt(i);
    h = Math.imul(h, 0x01000193);
  }
  return h >>> 0;
}

/** CSS color for a track id. Saturation/lightness are fixed so adjacent
 * tracks differ by hue only and stay readable on a dark viewer. */
export function trackColor(trackId: string): string {
  const hue = fnv1a(trackId) % 360;
  return `hsl(${hue}, 70%, 55%)`;
}

/** Label overlays use fixed colors rather than hashed ones. */
export const LABEL_COLORS: Record<string, string> = {
  iPSC: "hsl(130, 65%, 45%)",
  DfC: "hsl(28, 85%, 55%)",
  conflict: "hsl(0, 85%, 55%)",
  unlabeled: "hsl(0, 0%, 60%)",
};

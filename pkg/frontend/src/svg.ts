/**
 * Shared SVG scaffolding: escaping, tick placement, number formatting,
 * and the axis frame every chart uses. All output is deterministic; no
 * timestamps, ids, or randomness go into the markup.
 */

export const SUBSET_COLORS: Record<string, string> = {
  id: "#4361ee",
  ood: "#e63946",
  all: "#2d6a4f",
};

export const LAMBDA_PALETTE = [
  "#4361ee", "#7b2cbf", "#e63946", "#f77f00", "#2d6a4f", "#555555",
];

export function esc(s: string): string {
  return s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");
}

/** Compact number label: trims trailing zeros, keeps at most 3 decimals. */
export function fmt(v: number): string {
  if (Number.isInteger(v)) return String(v);
  return v.toFixed(3).replace(/0+$/, "").replace(/\.$/, "");
}

/** Round-valued ticks covering [min, max] at a 1/2/5 step. */
export function niceTicks(min: number, max: number, count: number): number[] {
  const range = max - min || 1;
  const rough = range / count;
  const mag = Math.pow(10, Math.floor(Math.log10(rough)));
  const step = [1, 2, 5, 10].map((m) => m * mag).find((n) => n >= rough) ?? rough;
  const start = Math.ceil(min / step) * step;
  const ticks: number[] = [];
  for (let v = start; v <= max + step * 0.01; v += step) {
    ticks.push(Math.abs(v) < step * 1e-9 ? 0 : v);
  }
  return ticks;
}

export interface Frame {
  width: number;
  height: number;
  left: number;
  right: number;
  top: number;
  bottom: number;
}

export function plotWidth(f: Frame): number {
  return f.width - f.left - f.right;
}

export function plotHeight(f: Frame): number {
  return f.height - f.top - f.bottom;
}

export function openSvg(f: Frame): string {
  return (
    `<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 ${f.width} ${f.height}"` +
    ` font-family="Helvetica, Arial, sans-serif">\n` +
    `<rect width="${f.width}" height="${f.height}" fill="#fff"/>\n`
  );
}

export function title(f: Frame, text: string, subtitle?: string): string {
  let s = `<text x="${f.left}" y="14" font-size="11" font-weight="600" fill="#222">${esc(text)}</text>\n`;
  if (subtitle) {
    s += `<text x="${f.left}" y="25" font-size="7.5" fill="#888">${esc(subtitle)}</text>\n`;
  }
  return s;
}

/** Horizontal gridlines plus left-axis tick labels. */
export function yAxis(
  f: Frame, ticks: number[], yOf: (v: number) => number, label: string,
): string {
  let s = "";
  for (const v of ticks) {
    const y = yOf(v).toFixed(1);
    s += `<line x1="${f.left}" y1="${y}" x2="${f.width - f.right}" y2="${y}" stroke="#eee" stroke-width="0.5"/>\n`;
    s += `<line x1="${f.left - 3}" y1="${y}" x2="${f.left}" y2="${y}" stroke="#333" stroke-width="0.5"/>\n`;
    s += `<text x="${f.left - 5}" y="${(yOf(v) + 2.5).toFixed(1)}" text-anchor="end" font-size="7" fill="#444">${esc(fmt(v))}</text>\n`;
  }
  const cy = f.top + plotHeight(f) / 2;
  s += `<text x="12" y="${cy}" text-anchor="middle" font-size="8.5" fill="#444" transform="rotate(-90,12,${cy})">${esc(label)}</text>\n`;
  return s;
}

/** The L-shaped axis frame. */
export function frameLines(f: Frame): string {
  const x1 = f.left, y1 = f.top, y2 = f.height - f.bottom, x2 = f.width - f.right;
  return (
    `<line x1="${x1}" y1="${y1}" x2="${x1}" y2="${y2}" stroke="#333" stroke-width="0.7"/>\n` +
    `<line x1="${x1}" y1="${y2}" x2="${x2}" y2="${y2}" stroke="#333" stroke-width="0.7"/>\n`
  );
}

export function xLabel(f: Frame, text: string): string {
  return `<text x="${f.left + plotWidth(f) / 2}" y="${f.height - 5}" text-anchor="middle" font-size="8.5" fill="#444">${esc(text)}</text>\n`;
}

export interface LegendEntry {
  label: string;
  color: string;
  /** Grayed informational line without a swatch (e.g. an omitted subset). */
  note?: boolean;
}

/** Stacked legend anchored to the top-right corner of the plot area. */
export function legend(f: Frame, entries: LegendEntry[]): string {
  const x = f.width - f.right - 8;
  let s = "";
  entries.forEach((e, i) => {
    const y = f.top + 10 + i * 11;
    if (e.note) {
      s += `<text x="${x}" y="${y + 3}" text-anchor="end" font-size="7" font-style="italic" fill="#999">${esc(e.label)}</text>\n`;
      return;
    }
    s += `<rect x="${x - 8}" y="${y - 3}" width="8" height="8" fill="${e.color}" opacity="0.85"/>\n`;
    s += `<text x="${x - 12}" y="${y + 3}" text-anchor="end" font-size="7" fill="#333">${esc(e.label)}</text>\n`;
  });
  return s;
}

export function median(values: number[]): number {
  const sorted = [...values].sort((a, b) => a - b);
  const mid = sorted.length >> 1;
  return sorted.length % 2 === 1
    ? sorted[mid]!
    : (sorted[mid - 1]! + sorted[mid]!) / 2;
}

/**
 * The three figure kinds.
 *
 *   ar_curve      recall vs proposal budget, one line per subset
 *   lambda_sweep  grouped bars: AR at a fixed budget per subset per blend weight
 *   p_sweep       recall and harvested-label count vs pseudo-label budget
 *
 * Every renderer is a pure function from validated inputs to an SVG string.
 */

import type { Report, SubsetName, SweepRow } from "./schema.js";
import { SUBSETS } from "./schema.js";
import {
  Frame,
  LAMBDA_PALETTE,
  LegendEntry,
  SUBSET_COLORS,
  esc,
  fmt,
  frameLines,
  legend,
  median,
  niceTicks,
  openSvg,
  plotHeight,
  plotWidth,
  title,
  xLabel,
  yAxis,
} from "./svg.js";

function subsetOrder(names: Iterable<SubsetName>): SubsetName[] {
  const have = new Set(names);
  return SUBSETS.filter((s) => have.has(s));
}

/** Upper y bound with a little headroom, clamped to the AR range. */
function arCeiling(values: number[]): number {
  const top = Math.max(0.1, ...values) * 1.12;
  return Math.min(1.0, top);
}

// ---------------------------------------------------------------------------
// ar_curve
// ---------------------------------------------------------------------------

export function renderArCurve(report: Report, subsetFilter?: SubsetName[]): string {
  const wanted = subsetFilter && subsetFilter.length > 0 ? subsetFilter : [...SUBSETS];
  const drawn = subsetOrder(report.subsets.keys()).filter((s) => wanted.includes(s));
  const omitted = subsetOrder(wanted).filter((s) => !report.subsets.has(s));
  if (drawn.length === 0) {
    throw new Error(`none of the requested subsets (${wanted.join(", ")}) are in the report`);
  }

  const ks = [...new Set(drawn.flatMap((s) => [...report.subsets.get(s)!.ar.keys()]))]
    .sort((a, b) => a - b);
  const f: Frame = { width: 520, height: 300, left: 52, right: 16, top: 34, bottom: 44 };
  const logs = ks.map((k) => Math.log10(k));
  const lo = logs[0]!, hi = logs[logs.length - 1]!;
  const xOf = (k: number) =>
    f.left + ((Math.log10(k) - lo) / (hi - lo || 1)) * plotWidth(f);

  const allValues = drawn.flatMap((s) => [...report.subsets.get(s)!.ar.values()]);
  const yMax = arCeiling(allValues);
  const yOf = (v: number) => f.top + plotHeight(f) - (v / yMax) * plotHeight(f);

  const cfg = report.config;
  const bits: string[] = [];
  if (typeof cfg.lambda_infer === "number") bits.push(`lambda_infer=${fmt(cfg.lambda_infer)}`);
  if (typeof cfg.nms_iou === "number") bits.push(`nms_iou=${fmt(cfg.nms_iou)}`);
  const scenes = drawn.map((s) => report.subsets.get(s)!.numScenes);
  bits.push(`${Math.max(...scenes)} scenes`);

  let s = openSvg(f);
  s += title(f, "Average recall vs proposal budget", bits.join(" · "));
  s += yAxis(f, niceTicks(0, yMax, 5), yOf, "average recall");

  for (const name of drawn) {
    const metrics = report.subsets.get(name)!;
    const color = SUBSET_COLORS[name]!;
    const pts = ks
      .filter((k) => metrics.ar.has(k))
      .map((k) => `${xOf(k).toFixed(1)},${yOf(metrics.ar.get(k)!).toFixed(1)}`);
    s += `<polyline fill="none" stroke="${color}" stroke-width="1.4" points="${pts.join(" ")}"/>\n`;
    for (const k of ks) {
      const v = metrics.ar.get(k);
      if (v === undefined) continue;
      s += `<circle cx="${xOf(k).toFixed(1)}" cy="${yOf(v).toFixed(1)}" r="2" fill="${color}"/>\n`;
    }
  }

  s += frameLines(f);
  const baseline = f.height - f.bottom;
  for (const k of ks) {
    const x = xOf(k).toFixed(1);
    s += `<line x1="${x}" y1="${baseline}" x2="${x}" y2="${baseline + 3}" stroke="#333" stroke-width="0.5"/>\n`;
    s += `<text x="${x}" y="${baseline + 12}" text-anchor="middle" font-size="7" fill="#444">${k}</text>\n`;
  }
  s += xLabel(f, "proposals per scene k (log scale)");

  const entries: LegendEntry[] = drawn.map((name) => ({
    label: `${name} · AUC ${report.subsets.get(name)!.auc.toFixed(3)}`,
    color: SUBSET_COLORS[name]!,
  }));
  for (const name of omitted) {
    entries.push({ label: `${name}: no ground truth`, color: "", note: true });
  }
  s += legend(f, entries);
  return s + "</svg>\n";
}

// ---------------------------------------------------------------------------
// lambda_sweep
// ---------------------------------------------------------------------------

export function renderLambdaSweep(
  rows: SweepRow[], k = 100, subsetFilter?: SubsetName[],
): string {
  const atK = rows.filter((r) => r.k === k);
  if (atK.length === 0) {
    const ks = [...new Set(rows.map((r) => r.k))].sort((a, b) => a - b);
    throw new Error(`no rows at k=${k}; budgets present: ${ks.join(", ")}`);
  }
  const wanted = subsetFilter && subsetFilter.length > 0 ? subsetFilter : [...SUBSETS];
  const subsets = subsetOrder(atK.map((r) => r.subset)).filter((s) => wanted.includes(s));
  if (subsets.length === 0) {
    throw new Error(`none of the requested subsets (${wanted.join(", ")}) are in the CSV`);
  }
  const lambdas = [...new Set(atK.map((r) => r.lambda))].sort((a, b) => a - b);

  // Median over seeds (and over p when the sweep varied it).
  const bar = new Map<string, number>();
  for (const subset of subsets) {
    for (const lambda of lambdas) {
      const vals = atK
        .filter((r) => r.subset === subset && r.lambda === lambda)
        .map((r) => r.ar);
      if (vals.length > 0) bar.set(`${subset}|${lambda}`, median(vals));
    }
  }

  const f: Frame = { width: 520, height: 300, left: 52, right: 16, top: 34, bottom: 40 };
  const yMax = arCeiling([...bar.values()]);
  const yOf = (v: number) => f.top + plotHeight(f) - (v / yMax) * plotHeight(f);
  const seeds = new Set(atK.map((r) => r.seed)).size;

  let s = openSvg(f);
  s += title(
    f,
    `Blend-weight sweep · AR@${k}`,
    `bars are medians over ${seeds} seed${seeds === 1 ? "" : "s"}`,
  );
  s += yAxis(f, niceTicks(0, yMax, 5), yOf, `AR@${k}`);

  const groupWidth = plotWidth(f) / subsets.length;
  const slot = groupWidth / (lambdas.length + 1);
  const barWidth = Math.min(26, slot * 0.85);
  const baseline = f.height - f.bottom;

  subsets.forEach((subset, gi) => {
    const gx = f.left + gi * groupWidth;
    lambdas.forEach((lambda, li) => {
      const v = bar.get(`${subset}|${lambda}`);
      if (v === undefined) return;
      const cx = gx + slot * (li + 1);
      const x = cx - barWidth / 2;
      const y = yOf(v);
      const color = LAMBDA_PALETTE[li % LAMBDA_PALETTE.length]!;
      s += `<rect x="${x.toFixed(1)}" y="${y.toFixed(1)}" width="${barWidth.toFixed(1)}" height="${(baseline - y).toFixed(1)}" fill="${color}" opacity="0.85"/>\n`;
      s += `<text x="${cx.toFixed(1)}" y="${(y - 2).toFixed(1)}" text-anchor="middle" font-size="6" fill="#333">${v.toFixed(2)}</text>\n`;
    });
    s += `<text x="${(gx + groupWidth / 2).toFixed(1)}" y="${baseline + 12}" text-anchor="middle" font-size="8" fill="#444">${esc(subset)}</text>\n`;
  });

  s += frameLines(f);
  s += xLabel(f, "subset");
  s += legend(f, lambdas.map((lambda, li) => ({
    label: `λ=${fmt(lambda)}`,
    color: LAMBDA_PALETTE[li % LAMBDA_PALETTE.length]!,
  })));
  return s + "</svg>\n";
}

// ---------------------------------------------------------------------------
// p_sweep
// ---------------------------------------------------------------------------

export function renderPSweep(rows: SweepRow[], subset: SubsetName = "all", k = 100): string {
  const atK = rows.filter((r) => r.k === k && r.subset === subset);
  if (atK.length === 0) {
    throw new Error(`no rows for subset "${subset}" at k=${k}`);
  }
  const ps = [...new Set(atK.map((r) => r.p))].sort((a, b) => a - b);
  const ar = ps.map((p) => median(atK.filter((r) => r.p === p).map((r) => r.ar)));
  const pl = ps.map((p) => median(atK.filter((r) => r.p === p).map((r) => r.plCount)));

  const f: Frame = { width: 520, height: 300, left: 52, right: 56, top: 34, bottom: 44 };
  const xOf = (p: number) => {
    const lo = ps[0]!, hi = ps[ps.length - 1]!;
    return f.left + ((p - lo) / (hi - lo || 1)) * plotWidth(f);
  };
  const yMax = arCeiling(ar);
  const yOf = (v: number) => f.top + plotHeight(f) - (v / yMax) * plotHeight(f);
  const plMax = Math.max(1, ...pl) * 1.12;
  const rraw = (v: number) => f.top + plotHeight(f) - (v / plMax) * plotHeight(f);

  const seeds = new Set(atK.map((r) => r.seed)).size;
  const leftColor = SUBSET_COLORS[subset]!;
  const rightColor = "#f77f00";

  let s = openSvg(f);
  s += title(
    f,
    `Pseudo-label budget sweep · ${subset} AR@${k}`,
    `medians over ${seeds} seed${seeds === 1 ? "" : "s"}`,
  );
  s += yAxis(f, niceTicks(0, yMax, 5), yOf, `${subset} AR@${k}`);

  const linePts = (ys: number[], proj: (v: number) => number) =>
    ps.map((p, i) => `${xOf(p).toFixed(1)},${proj(ys[i]!).toFixed(1)}`).join(" ");

  s += `<polyline fill="none" stroke="${leftColor}" stroke-width="1.4" points="${linePts(ar, yOf)}"/>\n`;
  ps.forEach((p, i) => {
    s += `<circle cx="${xOf(p).toFixed(1)}" cy="${yOf(ar[i]!).toFixed(1)}" r="2.2" fill="${leftColor}"/>\n`;
  });
  s += `<polyline fill="none" stroke="${rightColor}" stroke-width="1.2" stroke-dasharray="5,3" points="${linePts(pl, rraw)}"/>\n`;
  ps.forEach((p, i) => {
    s += `<circle cx="${xOf(p).toFixed(1)}" cy="${rraw(pl[i]!).toFixed(1)}" r="2.2" fill="${rightColor}"/>\n`;
  });

  s += frameLines(f);
  const rightX = f.width - f.right;
  s += `<line x1="${rightX}" y1="${f.top}" x2="${rightX}" y2="${f.height - f.bottom}" stroke="#333" stroke-width="0.7"/>\n`;
  for (const v of niceTicks(0, plMax, 5)) {
    const y = rraw(v).toFixed(1);
    s += `<line x1="${rightX}" y1="${y}" x2="${rightX + 3}" y2="${y}" stroke="#333" stroke-width="0.5"/>\n`;
    s += `<text x="${rightX + 5}" y="${(rraw(v) + 2.5).toFixed(1)}" font-size="7" fill="${rightColor}">${esc(fmt(v))}</text>\n`;
  }
  const rcy = f.top + plotHeight(f) / 2;
  s += `<text x="${f.width - 8}" y="${rcy}" text-anchor="middle" font-size="8.5" fill="${rightColor}" transform="rotate(90,${f.width - 8},${rcy})">pseudo-labels harvested</text>\n`;

  const baseline = f.height - f.bottom;
  for (const p of ps) {
    const x = xOf(p).toFixed(1);
    s += `<line x1="${x}" y1="${baseline}" x2="${x}" y2="${baseline + 3}" stroke="#333" stroke-width="0.5"/>\n`;
    s += `<text x="${x}" y="${baseline + 12}" text-anchor="middle" font-size="7" fill="#444">${esc(fmt(p))}</text>\n`;
  }
  s += xLabel(f, "pseudo-label budget p (%)");
  s += legend(f, [
    { label: `${subset} AR@${k}`, color: leftColor },
    { label: "pseudo-labels harvested", color: rightColor },
  ]);
  return s + "</svg>\n";
}

import { describe, expect, it } from "vitest";

import { renderArCurve, renderLambdaSweep, renderPSweep } from "../src/charts.js";
import { parseReport, parseSweep } from "../src/schema.js";
import { SUBSET_COLORS } from "../src/svg.js";
import { reportDoc, reportText, sweepText } from "./fixtures.js";

function countOf(haystack: string, needle: string): number {
  return haystack.split(needle).length - 1;
}

describe("renderArCurve", () => {
  it("is deterministic and well formed", () => {
    const report = parseReport(reportText());
    const svg = renderArCurve(report);
    expect(svg).toBe(renderArCurve(report));
    expect(svg.startsWith("<svg")).toBe(true);
    expect(svg.trimEnd().endsWith("</svg>")).toBe(true);
    expect(svg).not.toContain("NaN");
  });

  it("draws one line per subset and quotes each AUC in the legend", () => {
    const svg = renderArCurve(parseReport(reportText()));
    for (const color of Object.values(SUBSET_COLORS)) {
      expect(countOf(svg, `<polyline fill="none" stroke="${color}"`)).toBe(1);
    }
    expect(svg).toContain("AUC 0.585");
    expect(svg).toContain("AUC 0.333");
    expect(svg).toContain("AUC 0.507");
  });

  it("labels the x axis with the budgets from the report", () => {
    const svg = renderArCurve(parseReport(reportText()));
    for (const k of ["10", "30", "100", "300"]) {
      expect(svg).toContain(`>${k}</text>`);
    }
  });

  it("notes an absent subset in the legend instead of drawing it", () => {
    const doc = reportDoc();
    delete doc.ood;
    const svg = renderArCurve(parseReport(JSON.stringify(doc)));
    expect(svg).toContain("ood: no ground truth");
    expect(svg).not.toContain(`stroke="${SUBSET_COLORS.ood}"`);
    expect(countOf(svg, "<polyline")).toBe(2);
  });

  it("honors a subset filter", () => {
    const svg = renderArCurve(parseReport(reportText()), ["id"]);
    expect(countOf(svg, "<polyline")).toBe(1);
    expect(svg).toContain(`stroke="${SUBSET_COLORS.id}"`);
  });

  it("refuses when the requested subsets are all absent", () => {
    const doc: Record<string, unknown> = { all: reportDoc().all };
    const report = parseReport(JSON.stringify(doc));
    expect(() => renderArCurve(report, ["id"])).toThrow(/none of the requested subsets/);
  });
});

describe("renderLambdaSweep", () => {
  it("draws one bar per subset per blend weight", () => {
    const svg = renderLambdaSweep(parseSweep(sweepText()));
    // background + 3 subsets x 3 weights + 3 legend swatches
    expect(countOf(svg, "<rect")).toBe(1 + 9 + 3);
    expect(svg).not.toContain("NaN");
    expect(svg).toBe(renderLambdaSweep(parseSweep(sweepText())));
  });

  it("labels bars with the median over seeds and budgets", () => {
    // id at lambda=0: seeds give 0.5+0.001p+0.01s; median over
    // p in {0,30,60} x s in {0,1,2} is 0.54.
    const svg = renderLambdaSweep(parseSweep(sweepText()));
    expect(svg).toContain(">0.54</text>");
  });

  it("names the blend weights in the legend", () => {
    const svg = renderLambdaSweep(parseSweep(sweepText()));
    for (const label of ["λ=0", "λ=0.5", "λ=1"]) {
      expect(svg).toContain(`>${label}</text>`);
    }
  });

  it("refuses a budget with no rows and lists those present", () => {
    expect(() => renderLambdaSweep(parseSweep(sweepText()), 50)).toThrow(
      /no rows at k=50; budgets present: 100/,
    );
  });

  it("honors a subset filter", () => {
    const svg = renderLambdaSweep(parseSweep(sweepText()), 100, ["ood"]);
    // background + 3 bars + 3 legend swatches
    expect(countOf(svg, "<rect")).toBe(1 + 3 + 3);
  });
});

describe("renderPSweep", () => {
  it("draws recall and harvest count against the budget", () => {
    const svg = renderPSweep(parseSweep(sweepText()), "all", 100);
    expect(countOf(svg, "<polyline")).toBe(2);
    expect(svg).toContain("pseudo-labels harvested");
    expect(svg).toContain("pseudo-label budget p (%)");
    expect(svg).not.toContain("NaN");
    expect(svg).toBe(renderPSweep(parseSweep(sweepText()), "all", 100));
  });

  it("places a tick at every budget value", () => {
    const svg = renderPSweep(parseSweep(sweepText()), "all", 100);
    for (const p of ["0", "30", "60"]) {
      expect(svg).toContain(`>${p}</text>`);
    }
  });

  it("refuses an absent subset", () => {
    const onlyId = sweepText()
      .split("\n")
      .filter((l) => !l.includes(",ood,") && !l.includes(",all,"))
      .join("\n");
    expect(() => renderPSweep(parseSweep(onlyId), "all", 100)).toThrow(
      /no rows for subset "all"/,
    );
  });
});

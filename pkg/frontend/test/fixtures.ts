/** Shared fixture builders: a well-formed report and sweep table. */

import { SWEEP_HEADER } from "../src/schema.js";

export function reportDoc(): Record<string, unknown> {
  return {
    id: {
      ar: { "10": 0.41, "30": 0.55, "100": 0.66, "300": 0.72 },
      auc: 0.585,
      num_gt: 120,
      num_scenes: 40,
    },
    ood: {
      ar: { "10": 0.18, "30": 0.29, "100": 0.44, "300": 0.52 },
      auc: 0.333,
      num_gt: 55,
      num_scenes: 38,
    },
    all: {
      ar: { "10": 0.34, "30": 0.47, "100": 0.59, "300": 0.66 },
      auc: 0.507,
      num_gt: 175,
      num_scenes: 40,
    },
    config: { lambda_infer: 0.25, nms_iou: 0.7, checkpoint: "run/checkpoint.npz" },
  };
}

export function reportText(): string {
  return JSON.stringify(reportDoc(), null, 2);
}

/**
 * Rows covering three blend weights, three budgets p, all subsets, three
 * seeds, all at k=100. Values are a deterministic formula so medians are
 * predictable in tests.
 */
export function sweepText(): string {
  const lambdas = [0.0, 0.5, 1.0];
  const ps = [0, 30, 60];
  const subsets = ["id", "ood", "all"] as const;
  const base = { id: 0.5, ood: 0.3, all: 0.4 };
  const lines = [SWEEP_HEADER];
  for (const lambda of lambdas) {
    for (const p of ps) {
      for (const subset of subsets) {
        for (const seed of [0, 1, 2]) {
          const ar = base[subset] + 0.08 * lambda + 0.001 * p + 0.01 * seed;
          const auc = ar - 0.05;
          const plCount = Math.round(p * 9.7) + seed;
          lines.push(
            `${lambda},${p},${subset},100,${ar.toFixed(4)},${auc.toFixed(4)},${seed},${plCount}`,
          );
        }
      }
    }
  }
  return lines.join("\n") + "\n";
}

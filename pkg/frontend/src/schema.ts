/**
 * Input schemas: the evaluation report JSON and the sweep CSV.
 *
 * Both formats are validated field by field before any rendering happens;
 * a violation raises `SchemaError` carrying one message per offending
 * field, so a bad file fails loudly and completely rather than producing
 * a half-drawn figure.
 */

export const SUBSETS = ["id", "ood", "all"] as const;
export type SubsetName = (typeof SUBSETS)[number];

export interface SubsetMetrics {
  /** Average recall keyed by proposal budget k, ascending. */
  ar: Map<number, number>;
  auc: number;
  numGt: number;
  numScenes: number;
}

export interface Report {
  subsets: Map<SubsetName, SubsetMetrics>;
  config: Record<string, unknown>;
}

export interface SweepRow {
  lambda: number;
  p: number;
  subset: SubsetName;
  k: number;
  ar: number;
  auc: number;
  seed: number;
  plCount: number;
}

export class SchemaError extends Error {
  constructor(public readonly problems: string[]) {
    super(`schema violation:\n  ${problems.join("\n  ")}`);
    this.name = "SchemaError";
  }
}

// ---------------------------------------------------------------------------
// Report JSON
// ---------------------------------------------------------------------------

function isRecord(v: unknown): v is Record<string, unknown> {
  return typeof v === "object" && v !== null && !Array.isArray(v);
}

function checkUnitInterval(v: unknown, field: string, problems: string[]): number {
  if (typeof v !== "number" || !Number.isFinite(v)) {
    problems.push(`${field}: expected a number, got ${JSON.stringify(v)}`);
    return 0;
  }
  if (v < 0 || v > 1) {
    problems.push(`${field}: ${v} outside [0, 1]`);
  }
  return v;
}

function checkCount(v: unknown, field: string, problems: string[]): number {
  if (typeof v !== "number" || !Number.isInteger(v) || v < 0) {
    problems.push(`${field}: expected a nonnegative integer, got ${JSON.stringify(v)}`);
    return 0;
  }
  return v;
}

/** Parse and validate an evaluation report. Unknown subset keys are ignored. */
export function parseReport(text: string): Report {
  let raw: unknown;
  try {
    raw = JSON.parse(text);
  } catch (e) {
    throw new SchemaError([`not valid JSON: ${(e as Error).message}`]);
  }
  if (!isRecord(raw)) {
    throw new SchemaError(["top level: expected an object"]);
  }

  const problems: string[] = [];
  const subsets = new Map<SubsetName, SubsetMetrics>();
  for (const name of SUBSETS) {
    const node = raw[name];
    if (node === undefined) continue;
    if (!isRecord(node)) {
      problems.push(`${name}: expected an object`);
      continue;
    }
    const ar = new Map<number, number>();
    if (!isRecord(node.ar) || Object.keys(node.ar).length === 0) {
      problems.push(`${name}.ar: expected a nonempty budget-to-recall object`);
    } else {
      for (const [key, value] of Object.entries(node.ar)) {
        const k = Number(key);
        if (!Number.isInteger(k) || k < 1) {
          problems.push(`${name}.ar["${key}"]: budget must be a positive integer`);
          continue;
        }
        ar.set(k, checkUnitInterval(value, `${name}.ar["${key}"]`, problems));
      }
    }
    subsets.set(name, {
      ar: new Map([...ar.entries()].sort((a, b) => a[0] - b[0])),
      auc: checkUnitInterval(node.auc, `${name}.auc`, problems),
      numGt: checkCount(node.num_gt, `${name}.num_gt`, problems),
      numScenes: checkCount(node.num_scenes, `${name}.num_scenes`, problems),
    });
  }
  if (subsets.size === 0) {
    problems.push("no recognized subsets (id, ood, all) present");
  }
  const config = isRecord(raw.config) ? raw.config : {};
  if (raw.config !== undefined && !isRecord(raw.config)) {
    problems.push("config: expected an object");
  }
  if (problems.length > 0) throw new SchemaError(problems);
  return { subsets, config };
}

// ---------------------------------------------------------------------------
// Sweep CSV
// ---------------------------------------------------------------------------

export const SWEEP_HEADER = "lambda,p,subset,k,AR,AUC,seed,pl_count";

function checkNumber(
  raw: string, field: string, line: number,
  lo: number, hi: number, integer: boolean, problems: string[],
): number {
  const v = Number(raw);
  if (raw.trim() === "" || !Number.isFinite(v)) {
    problems.push(`line ${line}: ${field} ${JSON.stringify(raw)} is not a number`);
    return 0;
  }
  if (integer && !Number.isInteger(v)) {
    problems.push(`line ${line}: ${field} ${raw} is not an integer`);
  }
  if (v < lo || v > hi) {
    problems.push(`line ${line}: ${field} ${raw} outside [${lo}, ${hi}]`);
  }
  return v;
}

/** Parse and validate a sweep CSV, preserving row order. */
export function parseSweep(text: string): SweepRow[] {
  const lines = text.split(/\r?\n/).filter((l) => l.length > 0);
  if (lines.length === 0 || lines[0] !== SWEEP_HEADER) {
    throw new SchemaError([
      `header: expected "${SWEEP_HEADER}", got ${JSON.stringify(lines[0] ?? "")}`,
    ]);
  }

  const problems: string[] = [];
  const rows: SweepRow[] = [];
  for (let i = 1; i < lines.length; i++) {
    const line = i + 1;
    const parts = lines[i]!.split(",");
    if (parts.length !== 8) {
      problems.push(`line ${line}: expected 8 fields, got ${parts.length}`);
      continue;
    }
    const [lambda, p, subset, k, ar, auc, seed, plCount] = parts as [
      string, string, string, string, string, string, string, string,
    ];
    if (!(SUBSETS as readonly string[]).includes(subset)) {
      problems.push(`line ${line}: subset ${JSON.stringify(subset)} not one of ${SUBSETS.join(", ")}`);
      continue;
    }
    rows.push({
      lambda: checkNumber(lambda, "lambda", line, 0, 1, false, problems),
      p: checkNumber(p, "p", line, 0, 100, false, problems),
      subset: subset as SubsetName,
      k: checkNumber(k, "k", line, 1, Infinity, true, problems),
      ar: checkNumber(ar, "AR", line, 0, 1, false, problems),
      auc: checkNumber(auc, "AUC", line, 0, 1, false, problems),
      seed: checkNumber(seed, "seed", line, -Infinity, Infinity, true, problems),
      plCount: checkNumber(plCount, "pl_count", line, 0, Infinity, true, problems),
    });
  }
  if (rows.length === 0) {
    problems.push("no data rows");
  }
  if (problems.length > 0) throw new SchemaError(problems);
  return rows;
}

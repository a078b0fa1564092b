#!/usr/bin/env node
/** Command line entry point: render evaluation artifacts to SVG. */

import { readFileSync, writeFileSync } from "node:fs";
import { pathToFileURL } from "node:url";

import { renderArCurve, renderLambdaSweep, renderPSweep } from "./charts.js";
import { SUBSETS, SchemaError, parseReport, parseSweep } from "./schema.js";
import type { SubsetName } from "./schema.js";

const KINDS = ["ar_curve", "lambda_sweep", "p_sweep"] as const;
type Kind = (typeof KINDS)[number];

const USAGE = `usage: hybridprop-plots render --kind <${KINDS.join("|")}> --in <file> --out <file> [--subset <${SUBSETS.join("|")}>] [--k <int>]

  ar_curve      reads an evaluation report (JSON), draws recall vs budget
  lambda_sweep  reads a sweep table (CSV), draws AR bars grouped by subset
  p_sweep       reads a sweep table (CSV), draws AR and label counts vs p

  --subset  restrict ar_curve / select the p_sweep series (default: all subsets / "all")
  --k       proposal budget for the sweep figures (default: 100)
`;

interface Args {
  kind: Kind;
  input: string;
  output: string;
  subset?: SubsetName;
  k: number;
}

class UsageError extends Error {}

function parseArgs(argv: string[]): Args {
  if (argv[0] !== "render") {
    throw new UsageError(argv.length === 0 ? "missing command" : `unknown command "${argv[0]}"`);
  }
  const opts = new Map<string, string>();
  for (let i = 1; i < argv.length; i += 2) {
    const flag = argv[i]!;
    const value = argv[i + 1];
    if (!flag.startsWith("--") || value === undefined) {
      throw new UsageError(`malformed option "${flag}"`);
    }
    opts.set(flag.slice(2), value);
  }
  const kind = opts.get("kind");
  if (kind === undefined || !KINDS.includes(kind as Kind)) {
    throw new UsageError(`--kind must be one of ${KINDS.join(", ")}`);
  }
  const input = opts.get("in");
  const output = opts.get("out");
  if (input === undefined || output === undefined) {
    throw new UsageError("--in and --out are required");
  }
  let subset: SubsetName | undefined;
  const rawSubset = opts.get("subset");
  if (rawSubset !== undefined) {
    if (!SUBSETS.includes(rawSubset as SubsetName)) {
      throw new UsageError(`--subset must be one of ${SUBSETS.join(", ")}`);
    }
    subset = rawSubset as SubsetName;
  }
  let k = 100;
  const rawK = opts.get("k");
  if (rawK !== undefined) {
    k = Number(rawK);
    if (!Number.isInteger(k) || k < 1) {
      throw new UsageError(`--k must be a positive integer, got "${rawK}"`);
    }
  }
  for (const key of opts.keys()) {
    if (!["kind", "in", "out", "subset", "k"].includes(key)) {
      throw new UsageError(`unknown option "--${key}"`);
    }
  }
  return { kind: kind as Kind, input, output, subset, k };
}

function render(args: Args, text: string): string {
  switch (args.kind) {
    case "ar_curve":
      return renderArCurve(parseReport(text), args.subset ? [args.subset] : undefined);
    case "lambda_sweep":
      return renderLambdaSweep(parseSweep(text), args.k, args.subset ? [args.subset] : undefined);
    case "p_sweep":
      return renderPSweep(parseSweep(text), args.subset ?? "all", args.k);
  }
}

export function runCli(argv: string[]): number {
  let args: Args;
  try {
    args = parseArgs(argv);
  } catch (err) {
    if (err instanceof UsageError) {
      process.stderr.write(`error: ${err.message}\n\n${USAGE}`);
      return 2;
    }
    throw err;
  }

  let text: string;
  try {
    text = readFileSync(args.input, "utf8");
  } catch (err) {
    process.stderr.write(`error: cannot read ${args.input}: ${(err as Error).message}\n`);
    return 2;
  }

  let svg: string;
  try {
    svg = render(args, text);
  } catch (err) {
    if (err instanceof SchemaError) {
      process.stderr.write(`${err.message}\n`);
      return 1;
    }
    process.stderr.write(`error: ${(err as Error).message}\n`);
    return 1;
  }

  writeFileSync(args.output, svg);
  process.stdout.write(`wrote ${args.output}\n`);
  return 0;
}

if (import.meta.url === pathToFileURL(process.argv[1] ?? "").href) {
  process.exit(runCli(process.argv.slice(2)));
}

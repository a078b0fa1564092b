export { SUBSETS, SchemaError, parseReport, parseSweep } from "./schema.js";
export type { Report, SubsetMetrics, SubsetName, SweepRow } from "./schema.js";
export { renderArCurve, renderLambdaSweep, renderPSweep } from "./charts.js";
export { runCli } from "./cli.js";

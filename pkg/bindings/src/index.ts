/**
 * Array-in/array-out access to persistence barcodes and the multi-class
 * topological loss. Inputs are caller-owned typed arrays in row-major
 * (z, y, x) layout; results come back as plain numbers plus a dense
 * gradient array ready for an autodiff framework's chain rule (see the
 * README for the custom-gradient recipe).
 */

import { readNpy, writeNpy, NumericArray } from "./npy.js";
import { CliConfig, run, runSync, workspace } from "./runner.js";

export { readNpy, writeNpy } from "./npy.js";
export type { NumericArray, NpyArray } from "./npy.js";
export { CliError } from "./runner.js";
export type { CliConfig } from "./runner.js";

export type Construction = "v" | "t";

export interface Bar {
  dim: number;
  birth: number;
  death: number;
  /** Flat grid indices of the critical points; death is null for the essential bar. */
  birthIndex: number;
  deathIndex: number | null;
}

export interface BarcodeOptions {
  construction?: Construction;
  maxDim?: number;
  cli?: CliConfig;
}

export interface BettiPriorDoc {
  dims: number;
  classes: string[];
  betti: Record<string, number[]>;
}

export interface TopoLossOptions {
  construction?: Construction;
  /** Adds lambda * mean-squared-difference against this stack. */
  reference?: Float32Array | Float64Array;
  lambda?: number;
  cli?: CliConfig;
}

export interface TopoLossResult {
  loss: number;
  topo: number;
  mse: number;
  grad: Float64Array;
  terms: Record<string, [number, number, number]>;
}

function checkField(values: NumericArray, shape: number[]) {
  const count = shape.reduce((a, b) => a * b, 1);
  if (count !== values.length) {
    throw new TypeError(`shape (${shape}) does not match array length ${values.length}`);
  }
  if (!(values instanceof Float32Array) && !(values instanceof Float64Array)) {
    throw new TypeError("field values must be Float32Array or Float64Array");
  }
}

function parseBarcodeCsv(text: string): Bar[] {
  const lines = text.trim().split("\n");
  const bars: Bar[] = [];
  for (const line of lines.slice(1)) {
    // cells are quoted tuples; split respecting quotes
    const cols: string[] = [];
    let cur = "";
    let quoted = false;
    for (const ch of line) {
      if (ch === '"') quoted = !quoted;
      else if (ch === "," && !quoted) {
        cols.push(cur);
        cur = "";
      } else cur += ch;
    }
    cols.push(cur);
    bars.push({
      dim: Number(cols[0]),
      birth: Number(cols[1]),
      death: Number(cols[2]),
      birthIndex: Number(cols[6]),
      deathIndex: cols[7] === "" ? null : Number(cols[7]),
    });
  }
  return bars;
}

function barcodeArgs(field: string, out: string, opts: BarcodeOptions): string[] {
  const args = ["barcode", field, "--out", out, "--points", "--construction", opts.construction ?? "v"];
  if (opts.maxDim !== undefined) args.push("--max-dim", String(opts.maxDim));
  return args;
}

/** Persistence barcode of a scalar field. */
export async function barcode(
  values: Float32Array | Float64Array,
  shape: number[],
  opts: BarcodeOptions = {},
): Promise<Bar[]> {
  checkField(values, shape);
  const ws = workspace();
  try {
    const field = ws.write("field.npy", writeNpy(values, shape));
    const out = ws.file("bars.csv");
    await run(barcodeArgs(field, out, opts), opts.cli);
    return parseBarcodeCsv(ws.read("bars.csv").toString("utf-8"));
  } finally {
    ws.dispose();
  }
}

/** Synchronous variant of {@link barcode}. */
export function barcodeSync(
  values: Float32Array | Float64Array,
  shape: number[],
  opts: BarcodeOptions = {},
): Bar[] {
  checkField(values, shape);
  const ws = workspace();
  try {
    const field = ws.write("field.npy", writeNpy(values, shape));
    const out = ws.file("bars.csv");
    runSync(barcodeArgs(field, out, opts), opts.cli);
    return parseBarcodeCsv(ws.read("bars.csv").toString("utf-8"));
  } finally {
    ws.dispose();
  }
}

function lossArgs(probs: string, prior: string, gradPath: string, jsonPath: string, ws: ReturnType<typeof workspace>, opts: TopoLossOptions, reference?: string): string[] {
  const args = [
    "loss", probs, "--prior", prior,
    "--out-grad", gradPath, "--out-json", jsonPath,
    "--construction", opts.construction ?? "v",
  ];
  if (reference) args.push("--reference", reference, "--lambda", String(opts.lambda ?? 0));
  return args;
}

function collectLoss(ws: ReturnType<typeof workspace>): TopoLossResult {
  const doc = JSON.parse(ws.read("loss.json").toString("utf-8"));
  const grad = readNpy(ws.read("grad.npy"));
  if (!(grad.data instanceof Float64Array)) throw new TypeError("gradient must be float64");
  return {
    loss: doc.L_TP,
    topo: doc.L_topo,
    mse: doc.L_mse,
    grad: grad.data,
    terms: doc.terms,
  };
}

/**
 * Multi-class topological loss and its gradient.
 *
 * ``probs`` is a (K, ...) stack flattened row-major; the gradient comes
 * back with the identical layout.
 */
export async function topoLoss(
  probs: Float32Array | Float64Array,
  shape: number[],
  prior: BettiPriorDoc,
  opts: TopoLossOptions = {},
): Promise<TopoLossResult> {
  checkField(probs, shape);
  const ws = workspace();
  try {
    const stack = ws.write("probs.npy", writeNpy(probs, shape));
    const priorPath = ws.write("prior.json", JSON.stringify(prior));
    let reference: string | undefined;
    if (opts.reference) {
      reference = ws.write("reference.npy", writeNpy(opts.reference, shape));
    }
    await run(lossArgs(stack, priorPath, ws.file("grad.npy"), ws.file("loss.json"), ws, opts, reference), opts.cli);
    return collectLoss(ws);
  } finally {
    ws.dispose();
  }
}

/** Synchronous variant of {@link topoLoss}. */
export function topoLossSync(
  probs: Float32Array | Float64Array,
  shape: number[],
  prior: BettiPriorDoc,
  opts: TopoLossOptions = {},
): TopoLossResult {
  checkField(probs, shape);
  const ws = workspace();
  try {
    const stack = ws.write("probs.npy", writeNpy(probs, shape));
    const priorPath = ws.write("prior.json", JSON.stringify(prior));
    let reference: string | undefined;
    if (opts.reference) {
      reference = ws.write("reference.npy", writeNpy(opts.reference, shape));
    }
    runSync(lossArgs(stack, priorPath, ws.file("grad.npy"), ws.file("loss.json"), ws, opts, reference), opts.cli);
    return collectLoss(ws);
  } finally {
    ws.dispose();
  }
}

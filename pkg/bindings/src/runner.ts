/**
 * Process bridge to the cubitopo CLI. The kernels stay in the library;
 * this side only serializes arrays, spawns the tool, and parses results,
 * adding no arithmetic of its own. Async variants keep the event loop
 * free during native compute.
 */

import { spawn, spawnSync } from "node:child_process";
import { mkdtempSync, readFileSync, rmSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

export interface CliConfig {
  /** Command used to invoke the tool; CUBITOPO_CLI overrides. */
  command?: string[];
}

export function cliCommand(config?: CliConfig): string[] {
  if (config?.command) return config.command;
  const env = process.env.CUBITOPO_CLI;
  if (env) return env.split(" ");
  return ["python3", "-m", "cubitopo.cli"];
}

export class CliError extends Error {
  constructor(
    message: string,
    public readonly exitCode: number | null,
    public readonly stderr: string,
  ) {
    super(message);
    this.name = "CliError";
  }
}

export interface RunResult {
  stdout: string;
}

export function runSync(args: string[], config?: CliConfig): RunResult {
  const [cmd, ...base] = cliCommand(config);
  const proc = spawnSync(cmd, [...base, ...args], { encoding: "utf-8", maxBuffer: 1 << 28 });
  if (proc.error) throw new CliError(String(proc.error), null, "");
  if (proc.status !== 0) {
    throw new CliError(`cubitopo ${args[0]} exited with ${proc.status}`, proc.status, proc.stderr ?? "");
  }
  return { stdout: proc.stdout ?? "" };
}

export function run(args: string[], config?: CliConfig): Promise<RunResult> {
  const [cmd, ...base] = cliCommand(config);
  return new Promise((resolve, reject) => {
    const proc = spawn(cmd, [...base, ...args]);
    let out = "";
    let err = "";
    proc.stdout.on("data", (d) => (out += d));
    proc.stderr.on("data", (d) => (err += d));
    proc.on("error", (e) => reject(new CliError(String(e), null, err)));
    proc.on("close", (code) => {
      if (code === 0) resolve({ stdout: out });
      else reject(new CliError(`cubitopo ${args[0]} exited with ${code}`, code, err));
    });
  });
}

export interface Workspace {
  dir: string;
  file(name: string): string;
  write(name: string, data: Buffer | string): string;
  read(name: string): Buffer;
  dispose(): void;
}

export function workspace(): Workspace {
  const dir = mkdtempSync(join(tmpdir(), "cubitopo-"));
  return {
    dir,
    file: (name) => join(dir, name),
    write(name, data) {
      const path = join(dir, name);
      writeFileSync(path, data);
      return path;
    },
    read: (name) => readFileSync(join(dir, name)),
    dispose: () => rmSync(dir, { recursive: true, force: true }),
  };
}

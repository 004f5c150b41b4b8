import { resolve } from "node:path";

// Default to the in-repo library when the tool is not installed.
if (!process.env.CUBITOPO_CLI) {
  process.env.CUBITOPO_CLI = "python3 -m cubitopo.cli";
  const src = resolve(__dirname, "../../src");
  process.env.PYTHONPATH = process.env.PYTHONPATH ? `${src}:${process.env.PYTHONPATH}` : src;
}

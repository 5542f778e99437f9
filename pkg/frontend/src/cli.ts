#!/usr/bin/env node
/**
 * hoi-extract — export a capture into the engine's sequence layout, or
 * validate an existing sequence directory.
 *
 *   hoi-extract --video <capture> --out <dir> [--stride 5]
 *   hoi-extract validate --dir <dir>
 *
 * Validation prints one diagnostic per line and exits 0 only when the
 * engine's sequence reader would accept the directory.
 */

import { parseArgs } from "node:util";

import { exportSequence, ModelUnavailable } from "./export.js";
import { validateLayout } from "./layout.js";

function usage(): number {
  process.stderr.write(
    "usage: hoi-extract --video <capture> --out <dir> [--stride N]\n" +
      "       hoi-extract validate --dir <dir>\n",
  );
  return 1;
}

export function main(argv: string[]): number {
  if (argv[0] === "validate") {
    const { values } = parseArgs({
      args: argv.slice(1),
      options: { dir: { type: "string" } },
    });
    if (!values.dir) return usage();
    const diagnostics = validateLayout(values.dir);
    for (const d of diagnostics) process.stdout.write(d + "\n");
    return diagnostics.length === 0 ? 0 : 2;
  }
  const { values } = parseArgs({
    args: argv,
    options: {
      video: { type: "string" },
      out: { type: "string" },
      stride: { type: "string", default: "1" },
    },
  });
  if (!values.video || !values.out) return usage();
  const stride = Number(values.stride);
  if (!Number.isInteger(stride) || stride < 1) {
    process.stderr.write(`bad --stride ${values.stride}\n`);
    return 1;
  }
  try {
    const manifest = exportSequence(values.video, values.out, { stride });
    process.stdout.write(
      `exported ${manifest.frames_exported} frames` +
        (manifest.dropped.length ? `, dropped ${manifest.dropped.length}` : "") +
        ` -> ${values.out}\n`,
    );
    return 0;
  } catch (exc) {
    if (exc instanceof ModelUnavailable) {
      process.stderr.write(`model unavailable: ${exc.message}\n`);
      return 2;
    }
    throw exc;
  }
}

// Run when invoked as an executable (not when imported by tests).
import { fileURLToPath } from "node:url";
if (process.argv[1] && fileURLToPath(import.meta.url) === process.argv[1]) {
  process.exit(main(process.argv.slice(2)));
}

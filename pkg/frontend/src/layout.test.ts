import { cpSync, mkdtempSync, readFileSync, rmSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { fileURLToPath } from "node:url";
import { beforeAll, describe, expect, it } from "vitest";

import { exportSequence } from "./export.js";
import { validateLayout } from "./layout.js";
import { encodeTensor, readTensor } from "./tensorfile.js";

const FIXTURES = fileURLToPath(new URL("../fixtures", import.meta.url));
const CAPTURE = join(FIXTURES, "capture3");

let seq: string;

beforeAll(() => {
  seq = join(mkdtempSync(join(tmpdir(), "layout-")), "seq");
  exportSequence(CAPTURE, seq);
});

function corruptCopy(mutate: (dir: string) => void): string[] {
  const dir = join(mkdtempSync(join(tmpdir(), "layout-")), "seq");
  cpSync(seq, dir, { recursive: true });
  mutate(dir);
  return validateLayout(dir);
}

describe("validateLayout", () => {
  it("accepts a freshly exported sequence with zero diagnostics", () => {
    expect(validateLayout(seq)).toEqual([]);
  });

  it("accepts the checked-in golden sequence with zero diagnostics", () => {
    expect(validateLayout(join(FIXTURES, "seq3"))).toEqual([]);
  });

  it("reports a wrong dtype naming the file and the expected dtype", () => {
    const diags = corruptCopy((dir) => {
      const p = join(dir, "frames", "000000", "mask_obj.tf");
      const t = readTensor(p);
      writeFileSync(
        p,
        encodeTensor({
          dtype: "f32",
          shape: t.shape,
          data: Float32Array.from(t.data),
        }),
      );
    });
    expect(diags).toHaveLength(1);
    expect(diags[0]).toContain("mask_obj.tf");
    expect(diags[0]).toContain("expected u8");
  });

  it("reports a shape mismatch with both shapes", () => {
    const diags = corruptCopy((dir) => {
      const p = join(dir, "frames", "000001", "depth.tf");
      writeFileSync(
        p,
        encodeTensor({ dtype: "f32", shape: [4, 4], data: new Float32Array(16) }),
      );
    });
    expect(diags).toHaveLength(1);
    expect(diags[0]).toContain("[4,4]");
    expect(diags[0]).toContain("[72,96]");
  });

  it("reports missing required files without throwing", () => {
    const diags = corruptCopy((dir) =>
      rmSync(join(dir, "frames", "000002", "hand_verts.tf")),
    );
    expect(diags).toHaveLength(1);
    expect(diags[0]).toContain("hand_verts.tf");
  });

  it("reports broken meta.json fields", () => {
    const diags = corruptCopy((dir) => {
      const meta = JSON.parse(readFileSync(join(dir, "meta.json"), "utf-8"));
      delete meta.fx;
      writeFileSync(join(dir, "meta.json"), JSON.stringify(meta));
    });
    expect(diags.some((d) => d.includes("'fx'"))).toBe(true);
  });

  it("reports a missing directory as a single diagnostic", () => {
    expect(validateLayout("/nonexistent/seq")).toHaveLength(1);
  });
});

/**
 * Turn a pre-extracted capture directory into the engine's sequence layout.
 *
 * The heavy perception models (segmentation, metric depth, hand regression,
 * dense features) run as external tools and drop their per-frame outputs in
 * a capture directory:
 *
 *   info.json                  intrinsics, frame_count, tool names/versions,
 *                              optional depth_unit_mm (default 1)
 *   object/canonical.obj       canonical object mesh, meters
 *   object/vert_feat.json      optional (N, C) per-vertex descriptors
 *   hand/faces.json            optional (F, 3) hand topology
 *   onset_pose.json            optional externally estimated onset pose
 *   frames/NNNNNN/depth.pgm    16-bit P5 metric depth (depth_unit_mm units)
 *   frames/NNNNNN/mask_hand.pgm / mask_obj.pgm   8-bit P5, nonzero = on
 *   frames/NNNNNN/hand.json    joints3d / joints2d / rotation_wxyz / verts
 *   frames/NNNNNN/feat.json    optional (hf, wf, C) feature grid
 *
 * This adapter converts everything into the bit-exact binary tensor layout,
 * harmonizes mask resolution to meta.json, and writes a manifest listing a
 * sha256 checksum for every emitted file. Frames with missing inputs are
 * dropped and recorded in the manifest rather than aborting the export.
 */

import { createHash } from "node:crypto";
import {
  copyFileSync,
  existsSync,
  mkdirSync,
  readFileSync,
  statSync,
  writeFileSync,
} from "node:fs";
import { join } from "node:path";

import { frameDirName } from "./layout.js";
import { PgmImage, readPgm } from "./pgm.js";
import { Tensor, encodeTensor } from "./tensorfile.js";

export class ModelUnavailable extends Error {}

export interface ToolInfo {
  name: string;
  version: string;
}

export interface ExportManifest {
  tools: Record<string, ToolInfo>;
  frame_range: [number, number];
  stride: number;
  frames_exported: number;
  dropped: { index: number; reason: string }[];
  modalities_absent: string[];
  /** Path (relative to the output directory) -> sha256 of file bytes. */
  files: Record<string, string>;
}

export interface ExportOptions {
  stride?: number;
}

interface CaptureInfo {
  width: number;
  height: number;
  fx: number;
  fy: number;
  cx: number;
  cy: number;
  frame_count: number;
  depth_unit_mm?: number;
  tools?: Record<string, ToolInfo>;
}

/** JSON with recursively sorted keys so re-exports are byte-identical. */
export function stableJson(value: unknown): string {
  const canon = (v: unknown): unknown => {
    if (Array.isArray(v)) return v.map(canon);
    if (v !== null && typeof v === "object") {
      const out: Record<string, unknown> = {};
      for (const k of Object.keys(v as object).sort()) {
        out[k] = canon((v as Record<string, unknown>)[k]);
      }
      return out;
    }
    return v;
  };
  return JSON.stringify(canon(value), null, 2) + "\n";
}

function sha256(buf: Buffer): string {
  return createHash("sha256").update(buf).digest("hex");
}

function flatten(value: unknown, out: number[]): number[] {
  if (Array.isArray(value)) {
    for (const v of value) flatten(v, out);
  } else if (typeof value === "number") {
    out.push(value);
  } else {
    throw new Error(`non-numeric value ${value} in nested array`);
  }
  return out;
}

function nestedShape(value: unknown): number[] {
  const shape: number[] = [];
  let v = value;
  while (Array.isArray(v)) {
    shape.push(v.length);
    v = v[0];
  }
  return shape;
}

function nestedToTensor(value: unknown, dtype: "f32" | "i32"): Tensor {
  const shape = nestedShape(value);
  const flat = flatten(value, []);
  const data = dtype === "f32" ? Float32Array.from(flat) : Int32Array.from(flat);
  return { dtype, shape, data };
}

/** Nearest-neighbor resample of a mask to the meta resolution. */
function resizeNearest(img: PgmImage, width: number, height: number): Uint16Array {
  if (img.width === width && img.height === height) return img.data;
  const out = new Uint16Array(width * height);
  for (let y = 0; y < height; y++) {
    const sy = Math.min(img.height - 1, Math.floor((y * img.height) / height));
    for (let x = 0; x < width; x++) {
      const sx = Math.min(img.width - 1, Math.floor((x * img.width) / width));
      out[y * width + x] = img.data[sy * img.width + sx]!;
    }
  }
  return out;
}

export function exportSequence(
  input: string,
  outDir: string,
  options: ExportOptions = {},
): ExportManifest {
  if (!existsSync(input)) {
    throw new ModelUnavailable(`${input}: no such capture`);
  }
  if (!statSync(input).isDirectory()) {
    // A raw video would need a decoder plus the model runtimes; neither is
    // bundled, so only pre-extracted capture directories are accepted.
    throw new ModelUnavailable(
      `${input}: raw video ingestion needs external model runtimes; ` +
        `pass a capture directory of per-frame tool outputs`,
    );
  }
  const infoPath = join(input, "info.json");
  if (!existsSync(infoPath)) {
    throw new ModelUnavailable(`${infoPath}: missing capture info`);
  }
  const info = JSON.parse(readFileSync(infoPath, "utf-8")) as CaptureInfo;
  const stride = options.stride ?? 1;
  const depthScale = (info.depth_unit_mm ?? 1) / 1000.0;
  const { width, height } = info;

  mkdirSync(join(outDir, "object"), { recursive: true });
  mkdirSync(join(outDir, "frames"), { recursive: true });

  const files: Record<string, string> = {};
  const emit = (rel: string, buf: Buffer) => {
    writeFileSync(join(outDir, rel), buf);
    files[rel] = sha256(buf);
  };
  const emitTensor = (rel: string, t: Tensor) => emit(rel, encodeTensor(t));

  const meshSrc = join(input, "object", "canonical.obj");
  if (!existsSync(meshSrc)) {
    throw new ModelUnavailable(`${meshSrc}: missing canonical mesh`);
  }
  emit("object/canonical.obj", readFileSync(meshSrc));

  const modalitiesAbsent: string[] = [];
  const vertFeatSrc = join(input, "object", "vert_feat.json");
  if (existsSync(vertFeatSrc)) {
    const raw = JSON.parse(readFileSync(vertFeatSrc, "utf-8"));
    emitTensor("object/vert_feat.tf", nestedToTensor(raw, "f32"));
  }
  const facesSrc = join(input, "hand", "faces.json");
  if (existsSync(facesSrc)) {
    mkdirSync(join(outDir, "hand"), { recursive: true });
    const raw = JSON.parse(readFileSync(facesSrc, "utf-8"));
    emitTensor("hand/faces.tf", nestedToTensor(raw, "i32"));
  }
  const onsetSrc = join(input, "onset_pose.json");
  if (existsSync(onsetSrc)) {
    emit("onset_pose.json", readFileSync(onsetSrc));
  }

  const dropped: { index: number; reason: string }[] = [];
  let exported = 0;
  let featSeen = false;
  let lastIndex = 0;
  for (let i = 0; i < info.frame_count; i += stride) {
    const src = join(input, "frames", frameDirName(i));
    const required = ["depth.pgm", "mask_hand.pgm", "mask_obj.pgm", "hand.json"];
    const missing = required.filter((name) => !existsSync(join(src, name)));
    if (missing.length) {
      dropped.push({ index: i, reason: `missing ${missing.join(", ")}` });
      continue;
    }
    const dstRel = join("frames", frameDirName(exported));
    mkdirSync(join(outDir, dstRel), { recursive: true });

    const depth = readPgm(join(src, "depth.pgm"));
    if (depth.width !== width || depth.height !== height) {
      dropped.push({
        index: i,
        reason: `depth ${depth.width}x${depth.height} vs meta ${width}x${height}`,
      });
      continue;
    }
    const meters = new Float32Array(width * height);
    for (let k = 0; k < meters.length; k++) {
      meters[k] = Math.fround(depth.data[k]! * depthScale);
    }
    emitTensor(join(dstRel, "depth.tf"), {
      dtype: "f32",
      shape: [height, width],
      data: meters,
    });

    for (const name of ["mask_hand", "mask_obj"] as const) {
      const img = readPgm(join(src, `${name}.pgm`));
      const samples = resizeNearest(img, width, height);
      const mask = new Uint8Array(samples.length);
      for (let k = 0; k < samples.length; k++) mask[k] = samples[k]! > 0 ? 1 : 0;
      emitTensor(join(dstRel, `${name}.tf`), {
        dtype: "u8",
        shape: [height, width],
        data: mask,
      });
    }

    const hand = JSON.parse(readFileSync(join(src, "hand.json"), "utf-8")) as Record<
      string,
      unknown
    >;
    const handMissing = ["joints3d", "joints2d", "rotation_wxyz", "verts"].filter(
      (k) => !(k in hand),
    );
    if (handMissing.length) {
      dropped.push({ index: i, reason: `hand.json missing ${handMissing.join(", ")}` });
      continue;
    }
    emitTensor(join(dstRel, "hand_verts.tf"), nestedToTensor(hand.verts, "f32"));
    emit(
      join(dstRel, "hand.json"),
      Buffer.from(
        stableJson({
          joints3d: hand.joints3d,
          joints2d: hand.joints2d,
          rotation_wxyz: hand.rotation_wxyz,
        }),
        "utf-8",
      ),
    );

    const featSrc = join(src, "feat.json");
    if (existsSync(featSrc)) {
      const raw = JSON.parse(readFileSync(featSrc, "utf-8"));
      emitTensor(join(dstRel, "feat.tf"), nestedToTensor(raw, "f32"));
      featSeen = true;
    }
    lastIndex = i;
    exported += 1;
  }
  if (!featSeen) {
    modalitiesAbsent.push("features");
  }

  emit(
    "meta.json",
    Buffer.from(
      stableJson({
        width,
        height,
        fx: info.fx,
        fy: info.fy,
        cx: info.cx,
        cy: info.cy,
        frame_count: exported,
        stride: 1,
      }),
      "utf-8",
    ),
  );

  const manifest: ExportManifest = {
    tools: info.tools ?? {},
    frame_range: [0, lastIndex],
    stride,
    frames_exported: exported,
    dropped,
    modalities_absent: modalitiesAbsent,
    files,
  };
  writeFileSync(join(outDir, "manifest.json"), stableJson(manifest));
  return manifest;
}

/**
 * Sequence directory layout shared with the tracking engine.
 *
 *   meta.json                   intrinsics, image size, frame count, stride
 *   object/canonical.obj        canonical mesh (meters)
 *   object/vert_feat.tf         optional f32 per-vertex unit descriptors
 *   hand/faces.tf               optional i32 (F, 3) hand model topology
 *   frames/NNNNNN/depth.tf      f32 (H, W) meters, 0 = invalid
 *   frames/NNNNNN/mask_hand.tf  u8 (H, W)
 *   frames/NNNNNN/mask_obj.tf   u8 (H, W)
 *   frames/NNNNNN/feat.tf       optional f32 (hf, wf, C)
 *   frames/NNNNNN/hand.json     joints3d / joints2d / rotation quaternion
 *   frames/NNNNNN/hand_verts.tf f32 (N, 3)
 *
 * `validateLayout` replays the reader-side schema checks from this side of
 * the language boundary: it reports diagnostics instead of throwing, and an
 * empty list means the engine's sequence reader will accept the directory.
 */

import { existsSync, readFileSync, statSync } from "node:fs";
import { join } from "node:path";

import { Dtype, peekTensorHeader, TensorFormatError } from "./tensorfile.js";

export const FRAME_DIR_DIGITS = 6;
export const META_KEYS = ["width", "height", "fx", "fy", "cx", "cy", "frame_count"] as const;
export const REQUIRED_FRAME_FILES = [
  "depth.tf",
  "mask_hand.tf",
  "mask_obj.tf",
  "hand.json",
  "hand_verts.tf",
] as const;

export function frameDirName(index: number): string {
  return String(index).padStart(FRAME_DIR_DIGITS, "0");
}

export interface SequenceMeta {
  width: number;
  height: number;
  fx: number;
  fy: number;
  cx: number;
  cy: number;
  frame_count: number;
  stride?: number;
  [key: string]: unknown;
}

function checkTensor(
  path: string,
  dtype: Dtype,
  shape: (number | null)[] | null,
  diagnostics: string[],
): void {
  let header;
  try {
    header = peekTensorHeader(path);
  } catch (exc) {
    if (exc instanceof TensorFormatError) {
      diagnostics.push(exc.message);
      return;
    }
    throw exc;
  }
  if (header.dtype !== dtype) {
    diagnostics.push(`${path}: dtype ${header.dtype}, expected ${dtype}`);
    return;
  }
  if (shape !== null) {
    const got = header.shape;
    const matches =
      got.length === shape.length &&
      shape.every((dim, i) => dim === null || got[i] === dim);
    if (!matches) {
      diagnostics.push(
        `${path}: shape [${got.join(",")}] vs expected [${shape
          .map((d) => (d === null ? "*" : d))
          .join(",")}]`,
      );
    }
  }
}

function readJson(path: string, diagnostics: string[]): unknown {
  try {
    return JSON.parse(readFileSync(path, "utf-8"));
  } catch (exc) {
    diagnostics.push(`${path}: ${exc}`);
    return null;
  }
}

/**
 * Validate a sequence directory; returns diagnostics (empty when valid).
 * Never throws on data problems.
 */
export function validateLayout(dir: string): string[] {
  const diagnostics: string[] = [];
  if (!existsSync(dir) || !statSync(dir).isDirectory()) {
    return [`${dir}: not a directory`];
  }
  const metaPath = join(dir, "meta.json");
  if (!existsSync(metaPath)) {
    return [`${metaPath}: missing`];
  }
  const meta = readJson(metaPath, diagnostics) as SequenceMeta | null;
  if (meta === null || typeof meta !== "object") {
    return diagnostics.length ? diagnostics : [`${metaPath}: not an object`];
  }
  for (const key of META_KEYS) {
    if (!(key in meta) || typeof meta[key] !== "number") {
      diagnostics.push(`${metaPath}: missing numeric field '${key}'`);
    }
  }
  if (diagnostics.length) {
    return diagnostics;
  }
  const h = meta.height;
  const w = meta.width;

  const meshPath = join(dir, "object", "canonical.obj");
  if (!existsSync(meshPath)) {
    diagnostics.push(`${meshPath}: missing`);
  }
  const vertFeat = join(dir, "object", "vert_feat.tf");
  if (existsSync(vertFeat)) {
    checkTensor(vertFeat, "f32", [null, null], diagnostics);
  }
  const handFaces = join(dir, "hand", "faces.tf");
  if (existsSync(handFaces)) {
    checkTensor(handFaces, "i32", [null, 3], diagnostics);
  }

  for (let i = 0; i < meta.frame_count; i++) {
    const fd = join(dir, "frames", frameDirName(i));
    if (!existsSync(fd)) {
      diagnostics.push(`${fd}: missing frame directory`);
      continue;
    }
    for (const name of REQUIRED_FRAME_FILES) {
      if (!existsSync(join(fd, name))) {
        diagnostics.push(`${join(fd, name)}: missing`);
      }
    }
    const depth = join(fd, "depth.tf");
    if (existsSync(depth)) checkTensor(depth, "f32", [h, w], diagnostics);
    for (const name of ["mask_hand.tf", "mask_obj.tf"]) {
      const p = join(fd, name);
      if (existsSync(p)) checkTensor(p, "u8", [h, w], diagnostics);
    }
    const verts = join(fd, "hand_verts.tf");
    if (existsSync(verts)) checkTensor(verts, "f32", [null, 3], diagnostics);
    const feat = join(fd, "feat.tf");
    if (existsSync(feat)) checkTensor(feat, "f32", [null, null, null], diagnostics);
    const handJson = join(fd, "hand.json");
    if (existsSync(handJson)) {
      const hand = readJson(handJson, diagnostics) as Record<string, unknown> | null;
      if (hand !== null) {
        for (const key of ["joints3d", "joints2d", "rotation_wxyz"]) {
          if (!(key in hand)) {
            diagnostics.push(`${handJson}: missing field '${key}'`);
          }
        }
      }
    }
  }
  return diagnostics;
}

import { EngineProcess } from "./engine.js";
import type { ArrayPayload, Pose } from "./protocol.js";

export { EngineProcess, type EngineOptions } from "./engine.js";
export {
  BadRequestError,
  EngineError,
  InternalEngineError,
  NoSuchHandleError,
  ShapeMismatchError,
  UseAfterCloseError,
  type ArrayPayload,
  type EngineErrorBody,
  type Pose,
} from "./protocol.js";

// -- array codecs -----------------------------------------------------------

function pack(view: Uint8Array, length: number, rows: number, cols: number): ArrayPayload {
  if (length !== rows * cols) {
    throw new RangeError(`${length} elements do not form shape [${rows}, ${cols}]`);
  }
  return {
    b64: Buffer.from(view.buffer, view.byteOffset, view.byteLength).toString("base64"),
    shape: [rows, cols],
  };
}

/** Row-major float64 frame (depth images). */
export function packF64(data: Float64Array, rows: number, cols: number): ArrayPayload {
  return pack(new Uint8Array(data.buffer, data.byteOffset, data.byteLength), data.length, rows, cols);
}

/** Row-major int32 frame (segmentation masks). */
export function packI32(data: Int32Array, rows: number, cols: number): ArrayPayload {
  return pack(new Uint8Array(data.buffer, data.byteOffset, data.byteLength), data.length, rows, cols);
}

export function unpackBytes(b64: string): Uint8Array {
  return new Uint8Array(Buffer.from(b64, "base64"));
}

// -- engine-wide operations ---------------------------------------------------

export interface EngineVersion {
  version: string;
  protocol: number;
}

export function version(engine: EngineProcess): Promise<EngineVersion> {
  return engine.request("version");
}

/** Maps free-form text to an action name, or null when nothing matches. */
export async function parseAction(engine: EngineProcess, text: string): Promise<string | null> {
  const result = await engine.request("parse", { text });
  return result.action;
}

export interface EpisodeRef {
  episodeId: string;
  instruction?: string;
  goal: [number, number];
  referencePath: [number, number][];
  maxSteps?: number;
}

export interface EvaluateOptions {
  collisions?: number;
  successRadius?: number;
}

export interface NavScores {
  episode_id: string;
  ne: number;
  os: number;
  sr: number;
  spl: number;
  ndtw: number;
  path_length: number;
  collisions: number;
}

export function evaluateMetrics(
  engine: EngineProcess,
  episode: EpisodeRef,
  poses: Pose[],
  stopped: boolean,
  opts: EvaluateOptions = {},
): Promise<NavScores> {
  return engine.request("evaluate", {
    episode: {
      episode_id: episode.episodeId,
      instruction: episode.instruction,
      goal: episode.goal,
      reference_path: episode.referencePath,
      max_steps: episode.maxSteps,
    },
    poses,
    stopped,
    collisions: opts.collisions,
    success_radius: opts.successRadius,
  });
}

// -- map building --------------------------------------------------------------

export interface IntrinsicsOptions {
  width: number;
  height: number;
  hfovDeg?: number;
  depthMin?: number;
  depthMax?: number;
}

export interface OpenOptions {
  widthCells: number;
  heightCells: number;
  resolution: number;
  originX?: number;
  originY?: number;
  categories?: string[];
  intrinsics?: IntrinsicsOptions;
  agentRadius?: number;
  obstacleBand?: [number, number];
}

export interface RenderOptions {
  tau?: number;
  renderScale?: number;
}

export interface LabelPlacement {
  text: string;
  anchor: [number, number];
  bbox: [number, number, number, number];
  visible: boolean;
  category: number;
}

export interface RenderResult {
  width: number;
  height: number;
  /** Packed RGB, row-major, 3 bytes per pixel. */
  data: Uint8Array;
  placements: LabelPlacement[];
}

export interface PngResult {
  png: Uint8Array;
  placements: LabelPlacement[];
}

/**
 * A semantic map living inside the engine process, addressed by handle.
 *
 * Feed it depth/mask/pose frames with update(), then render or snapshot.
 * Handles are independent; closing one never disturbs another.
 */
export class MapBuilder {
  private constructor(
    private readonly engine: EngineProcess,
    readonly handle: number,
    readonly channels: number,
    readonly categories: string[],
  ) {}

  static async open(engine: EngineProcess, opts: OpenOptions): Promise<MapBuilder> {
    const intr = opts.intrinsics;
    const result = await engine.request("open", {
      width_cells: opts.widthCells,
      height_cells: opts.heightCells,
      resolution: opts.resolution,
      origin_x: opts.originX,
      origin_y: opts.originY,
      categories: opts.categories,
      intrinsics: intr && {
        width: intr.width,
        height: intr.height,
        hfov_deg: intr.hfovDeg,
        depth_min: intr.depthMin,
        depth_max: intr.depthMax,
      },
      agent_radius: opts.agentRadius,
      obstacle_band: opts.obstacleBand,
    });
    return new MapBuilder(engine, result.handle, result.channels, result.categories);
  }

  /** Integrates one observation; resolves to the new step count. */
  async update(depth: ArrayPayload, mask: ArrayPayload, pose: Pose): Promise<number> {
    const result = await this.engine.request("update", {
      handle: this.handle,
      depth,
      mask,
      pose,
    });
    return result.step_count;
  }

  async render(opts: RenderOptions = {}): Promise<RenderResult> {
    const result = await this.engine.request("render", {
      handle: this.handle,
      tau: opts.tau,
      render_scale: opts.renderScale,
    });
    return {
      width: result.width,
      height: result.height,
      data: unpackBytes(result.data_b64),
      placements: result.placements,
    };
  }

  async renderPng(opts: RenderOptions = {}): Promise<PngResult> {
    const result = await this.engine.request("render_png", {
      handle: this.handle,
      tau: opts.tau,
      render_scale: opts.renderScale,
    });
    return { png: unpackBytes(result.png_b64), placements: result.placements };
  }

  /** Serialized map state; identical bytes mean identical maps. */
  async snapshot(): Promise<Uint8Array> {
    const result = await this.engine.request("snapshot", { handle: this.handle });
    return unpackBytes(result.data_b64);
  }

  async stateBytes(): Promise<number> {
    const result = await this.engine.request("state_bytes", { handle: this.handle });
    return result.bytes;
  }

  async close(): Promise<void> {
    await this.engine.request("close", { handle: this.handle });
  }
}

// Wire types for the JSON-lines engine protocol.
//
// Request:  {"id": <int>, "op": <str>, ...params}
// Response: {"id": <int>, "ok": true, "result": {...}}
//       or  {"id": <int>, "ok": false,
//            "error": {"kind": <str>, "message": <str>, "field": <str|null>}}

export type Pose = [x: number, y: number, yaw: number];

/** Base64 row-major array with an explicit [rows, cols] shape. */
export interface ArrayPayload {
  b64: string;
  shape: [number, number];
}

export interface EngineErrorBody {
  kind: string;
  message: string;
  field: string | null;
}

export interface EngineResponse {
  id: number | null;
  ok: boolean;
  result?: unknown;
  error?: EngineErrorBody;
}

export class EngineError extends Error {
  readonly kind: string;
  readonly field: string | null;

  constructor(body: EngineErrorBody) {
    super(body.message);
    this.name = new.target.name;
    this.kind = body.kind;
    this.field = body.field;
  }
}

/** A payload whose element count or shape disagrees with the intrinsics. */
export class ShapeMismatchError extends EngineError {}

/** The request itself was malformed (bad JSON, missing field, unknown op). */
export class BadRequestError extends EngineError {}

/** Operation on a handle that was already closed. */
export class UseAfterCloseError extends EngineError {}

/** Operation on a handle that was never opened. */
export class NoSuchHandleError extends EngineError {}

/** The server kept running but an operation failed unexpectedly. */
export class InternalEngineError extends EngineError {}

const ERROR_KINDS: Record<string, new (body: EngineErrorBody) => EngineError> = {
  "shape-mismatch": ShapeMismatchError,
  "bad-request": BadRequestError,
  "use-after-close": UseAfterCloseError,
  "no-such-handle": NoSuchHandleError,
  internal: InternalEngineError,
};

export function errorFromBody(body: EngineErrorBody): EngineError {
  const ctor = ERROR_KINDS[body.kind] ?? EngineError;
  return new ctor(body);
}

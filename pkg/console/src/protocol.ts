/**
 * Wire types and framing for the kernel control protocol.
 *
 * The transport is newline-delimited JSON over TCP: every line is one
 * object. Lines from the console are requests; lines from the kernel are
 * either responses (correlated by request_id) or pushed telemetry frames.
 * See docs/control_protocol.md in the repository root for the normative
 * description; the shapes here mirror it field for field.
 */

export type Role = "admin" | "viewer";

export interface ProgramObj {
  version: number;
  primary_goal: string;
  instructions: string[];
  base_log_weights: number[];
  routing_overrides: Record<string, string>;
  interrupt_threshold: number;
  temperature: number;
}

export interface ControlRequest {
  op: string;
  auth_token: string;
  request_id: number;
  body?: Record<string, unknown>;
}

export type ResponseStatus =
  | "ok"
  | "auth"
  | "conflict"
  | "bad-request"
  | "protocol"
  | "unknown-op"
  | "server-error";

export interface ControlResponse {
  type: "response";
  status: ResponseStatus;
  body: Record<string, any>;
  op?: string;
  request_id?: number;
}

/** Pushed frame; `event` is weights | interrupt | directive | program. */
export interface TelemetryFrame {
  type: "telemetry";
  at_ns: number;
  event: string;
  [key: string]: unknown;
}

export type Frame = ControlResponse | TelemetryFrame;

export function isResponse(frame: any): frame is ControlResponse {
  return frame !== null && typeof frame === "object" && frame.type === "response";
}

export function isTelemetry(frame: any): frame is TelemetryFrame {
  return frame !== null && typeof frame === "object" && frame.type === "telemetry";
}

export function encodeLine(obj: unknown): string {
  return JSON.stringify(obj) + "\n";
}

/**
 * Incremental NDJSON decoder. Feed raw socket chunks, get complete parsed
 * frames back; partial lines (and split multi-byte characters) are held
 * until the newline arrives.
 */
export class LineDecoder {
  private tail: Buffer = Buffer.alloc(0);

  push(chunk: Buffer): unknown[] {
    this.tail = this.tail.length === 0 ? chunk : Buffer.concat([this.tail, chunk]);
    const frames: unknown[] = [];
    let start = 0;
    for (;;) {
      const nl = this.tail.indexOf(0x0a, start);
      if (nl === -1) break;
      const line = this.tail.subarray(start, nl).toString("utf8").trim();
      start = nl + 1;
      if (line.length > 0) frames.push(JSON.parse(line));
    }
    this.tail = Buffer.from(this.tail.subarray(start));
    return frames;
  }

  /** Bytes buffered waiting for a newline. */
  get pendingBytes(): number {
    return this.tail.length;
  }
}

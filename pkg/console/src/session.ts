/**
 * Live console session against one kernel control service.
 *
 * The session owns a single TCP connection. On connect it fetches the
 * current program and weights, subscribes to telemetry, and from then on
 * folds pushed frames into bounded ring buffers (weight samples, interrupt
 * marks, directive log). A dropped connection is retried with exponential
 * backoff; a rejected token is terminal and never retried.
 *
 * Role gating: the session is configured viewer or admin. Viewer sessions
 * refuse program edits locally (nothing is sent); the kernel enforces the
 * same rule server-side regardless.
 */

import * as net from "node:net";

import {
  ControlResponse,
  Frame,
  LineDecoder,
  ProgramObj,
  Role,
  TelemetryFrame,
  encodeLine,
  isResponse,
  isTelemetry,
} from "./protocol.js";
import { RingBuffer } from "./ring.js";

export type SessionState =
  | "idle"
  | "connecting"
  | "live"
  | "disconnected"
  | "auth-failed"
  | "closed";

export interface SessionOptions {
  host: string;
  port: number;
  token: string;
  role: Role;
  /** Chart/event history depth; default 600 samples. */
  ringCapacity?: number;
  reconnectInitialMs?: number;
  reconnectMaxMs?: number;
  requestTimeoutMs?: number;
}

export interface WeightSample {
  atNs: number;
  weights: number[];
}

export interface InterruptMark {
  atNs: number;
  interruptId: string;
  procId: string | null;
  divergence: number | null;
}

export interface DirectiveEntry {
  atNs: number;
  directiveId: string;
  kind: string;
  argument: Record<string, unknown>;
}

export interface StmRow {
  key: string;
  author: string;
  strength: number;
  revision: number;
  payload_type: string;
}

export interface StmSummary {
  revision: number;
  occupancy: number;
  entries: StmRow[];
}

/** What the operator edits; version and untouched fields are filled in. */
export interface ProgramEdit {
  baseLogWeights: number[];
  interruptThreshold: number;
  primaryGoal: string;
  instructions: string[];
}

export type ApplyResult =
  | { outcome: "applied"; version: number }
  | { outcome: "invalid"; problems: string[] }
  | { outcome: "conflict"; currentVersion: number }
  | { outcome: "auth"; error: string }
  | { outcome: "error"; error: string };

export type ChangeReason =
  | "state"
  | "weights"
  | "interrupt"
  | "directive"
  | "program"
  | "stm";

type Pending = {
  resolve: (response: ControlResponse) => void;
  reject: (err: Error) => void;
  timer: NodeJS.Timeout;
};

const DEFAULT_RING = 600;

export class ConsoleSession {
  readonly host: string;
  readonly port: number;
  readonly role: Role;
  readonly ringCapacity: number;

  private readonly token: string;
  private readonly reconnectInitialMs: number;
  private readonly reconnectMaxMs: number;
  private readonly requestTimeoutMs: number;

  private socket: net.Socket | null = null;
  private decoder = new LineDecoder();
  private stateValue: SessionState = "idle";
  private nextRequestId = 1;
  private pending = new Map<number, Pending>();
  private retryTimer: NodeJS.Timeout | null = null;
  private retryAttempts = 0;
  private listeners = new Set<(reason: ChangeReason) => void>();
  private refreshingProgram = false;

  moduleIds: string[] = [];
  program: ProgramObj | null = null;
  profile = "";
  lastError = "";
  stm: StmSummary | null = null;

  private readonly weightRing: RingBuffer<WeightSample>;
  private readonly interruptRing: RingBuffer<InterruptMark>;
  private readonly directiveRing: RingBuffer<DirectiveEntry>;

  constructor(options: SessionOptions) {
    this.host = options.host;
    this.port = options.port;
    this.token = options.token;
    this.role = options.role;
    this.ringCapacity = options.ringCapacity ?? DEFAULT_RING;
    this.reconnectInitialMs = options.reconnectInitialMs ?? 500;
    this.reconnectMaxMs = options.reconnectMaxMs ?? 8000;
    this.requestTimeoutMs = options.requestTimeoutMs ?? 5000;
    this.weightRing = new RingBuffer(this.ringCapacity);
    this.interruptRing = new RingBuffer(this.ringCapacity);
    this.directiveRing = new RingBuffer(this.ringCapacity);
  }

  get state(): SessionState {
    return this.stateValue;
  }

  get canEdit(): boolean {
    return this.role === "admin";
  }

  weightSamples(): WeightSample[] {
    return this.weightRing.toArray();
  }

  /** One value per retained sample for the named module, oldest first. */
  weightSeries(moduleId: string): number[] {
    const index = this.moduleIds.indexOf(moduleId);
    if (index === -1) return [];
    return this.weightRing.toArray().map((sample) => sample.weights[index] ?? NaN);
  }

  interrupts(): InterruptMark[] {
    return this.interruptRing.toArray();
  }

  directives(): DirectiveEntry[] {
    return this.directiveRing.toArray();
  }

  onChange(listener: (reason: ChangeReason) => void): () => void {
    this.listeners.add(listener);
    return () => {
      this.listeners.delete(listener);
    };
  }

  private emit(reason: ChangeReason): void {
    for (const listener of [...this.listeners]) {
      try {
        listener(reason);
      } catch {
        this.listeners.delete(listener);
      }
    }
  }

  private setState(next: SessionState): void {
    if (this.stateValue === next) return;
    this.stateValue = next;
    this.emit("state");
  }

  // --- connection lifecycle ----------------------------------------------

  connect(): void {
    if (this.stateValue === "closed" || this.stateValue === "auth-failed") return;
    if (this.socket !== null) return;
    this.setState("connecting");
    const socket = net.createConnection({ host: this.host, port: this.port });
    this.socket = socket;
    this.decoder = new LineDecoder();
    socket.on("data", (chunk) => this.onData(chunk));
    socket.on("error", () => {
      // close follows; retry is decided there
    });
    socket.on("close", () => this.onClose(socket));
    socket.once("connect", () => {
      void this.handshake();
    });
  }

  close(): void {
    this.setState("closed");
    if (this.retryTimer !== null) {
      clearTimeout(this.retryTimer);
      this.retryTimer = null;
    }
    this.failPending(new Error("session closed"));
    if (this.socket !== null) {
      this.socket.destroy();
      this.socket = null;
    }
  }

  private onClose(socket: net.Socket): void {
    if (this.socket !== socket) return;
    this.socket = null;
    this.failPending(new Error("connection lost"));
    if (this.stateValue === "closed" || this.stateValue === "auth-failed") return;
    this.setState("disconnected");
    this.scheduleRetry();
  }

  private scheduleRetry(): void {
    if (this.retryTimer !== null) return;
    const delay = Math.min(
      this.reconnectMaxMs,
      this.reconnectInitialMs * 2 ** this.retryAttempts,
    );
    this.retryAttempts += 1;
    this.retryTimer = setTimeout(() => {
      this.retryTimer = null;
      this.connect();
    }, delay);
    this.retryTimer.unref?.();
  }

  private failPending(err: Error): void {
    for (const entry of this.pending.values()) {
      clearTimeout(entry.timer);
      entry.reject(err);
    }
    this.pending.clear();
  }

  private async handshake(): Promise<void> {
    try {
      const program = await this.request("GetProgram");
      if (this.rejectedAuth(program)) return;
      this.program = program.body.program as ProgramObj;

      const weights = await this.request("GetWeights");
      if (this.rejectedAuth(weights)) return;
      this.moduleIds = weights.body.modules as string[];
      this.profile = String(weights.body.profile ?? "");

      const sub = await this.request("SubscribeTelemetry");
      if (this.rejectedAuth(sub)) return;

      this.retryAttempts = 0;
      this.lastError = "";
      this.setState("live");
      this.emit("program");
    } catch {
      // the close handler owns the retry
    }
  }

  /** Bad token is terminal: surface the error, never retry. */
  private rejectedAuth(response: ControlResponse): boolean {
    if (response.status !== "auth") return false;
    this.lastError = String(response.body.error ?? "auth rejected");
    this.setState("auth-failed");
    if (this.socket !== null) {
      this.socket.destroy();
      this.socket = null;
    }
    return true;
  }

  // --- wire ----------------------------------------------------------------

  private onData(chunk: Buffer): void {
    let frames: unknown[];
    try {
      frames = this.decoder.push(chunk);
    } catch {
      this.lastError = "peer sent unparseable data";
      this.socket?.destroy();
      return;
    }
    for (const frame of frames) {
      if (isResponse(frame)) this.onResponse(frame);
      else if (isTelemetry(frame)) this.onTelemetry(frame);
    }
  }

  private onResponse(response: ControlResponse): void {
    const id = response.request_id;
    if (typeof id !== "number") return;
    const entry = this.pending.get(id);
    if (entry === undefined) return;
    this.pending.delete(id);
    clearTimeout(entry.timer);
    entry.resolve(response);
  }

  private onTelemetry(frame: TelemetryFrame): void {
    if (frame.event === "weights") {
      const weights = frame.weights as number[];
      const modules = frame.modules as string[] | undefined;
      if (Array.isArray(modules) && modules.length > 0) this.moduleIds = modules;
      this.weightRing.push({ atNs: frame.at_ns, weights });
      if (typeof frame.profile === "string") this.profile = frame.profile;
      this.emit("weights");
    } else if (frame.event === "interrupt") {
      this.interruptRing.push({
        atNs: frame.at_ns,
        interruptId: String(frame.interrupt_id ?? ""),
        procId: frame.proc_id == null ? null : String(frame.proc_id),
        divergence: typeof frame.divergence === "number" ? frame.divergence : null,
      });
      this.emit("interrupt");
    } else if (frame.event === "directive") {
      this.directiveRing.push({
        atNs: frame.at_ns,
        directiveId: String(frame.directive_id ?? ""),
        kind: String(frame.kind ?? ""),
        argument: (frame.argument as Record<string, unknown>) ?? {},
      });
      this.emit("directive");
    } else if (frame.event === "program") {
      const version = Number(frame.version);
      if (this.program === null || this.program.version !== version) {
        void this.refreshProgram();
      }
    }
  }

  /** Another admin changed the program; refetch so the editor stays honest. */
  private async refreshProgram(): Promise<void> {
    if (this.refreshingProgram) return;
    this.refreshingProgram = true;
    try {
      const response = await this.request("GetProgram");
      if (response.status === "ok") {
        this.program = response.body.program as ProgramObj;
        this.emit("program");
      }
    } catch {
      // disconnected mid-refresh; the reconnect handshake refetches anyway
    } finally {
      this.refreshingProgram = false;
    }
  }

  private request(op: string, body?: Record<string, unknown>): Promise<ControlResponse> {
    const socket = this.socket;
    if (socket === null || socket.destroyed) {
      return Promise.reject(new Error("not connected"));
    }
    const request_id = this.nextRequestId++;
    const line = encodeLine({ op, auth_token: this.token, request_id, body: body ?? {} });
    return new Promise((resolve, reject) => {
      const timer = setTimeout(() => {
        this.pending.delete(request_id);
        reject(new Error(`${op} timed out`));
      }, this.requestTimeoutMs);
      timer.unref?.();
      this.pending.set(request_id, { resolve, reject, timer });
      socket.write(line, (err) => {
        if (err) {
          const entry = this.pending.get(request_id);
          if (entry !== undefined) {
            this.pending.delete(request_id);
            clearTimeout(entry.timer);
            reject(err);
          }
        }
      });
    });
  }

  // --- operations -----------------------------------------------------------

  /**
   * Validate locally, then administer the edited program at version
   * current+1. Local failures (viewer role, arity, non-finite numbers)
   * send nothing. A version conflict reloads the current program so the
   * form can present a review-and-retry prompt.
   */
  async applyProgram(edit: ProgramEdit): Promise<ApplyResult> {
    if (!this.canEdit) {
      return { outcome: "auth", error: "viewer session is read-only" };
    }
    if (this.program === null) {
      return { outcome: "error", error: "no program loaded yet" };
    }
    const problems = this.validateEdit(edit);
    if (problems.length > 0) {
      return { outcome: "invalid", problems };
    }
    const next: ProgramObj = {
      version: this.program.version + 1,
      primary_goal: edit.primaryGoal,
      instructions: [...edit.instructions],
      base_log_weights: [...edit.baseLogWeights],
      routing_overrides: { ...this.program.routing_overrides },
      interrupt_threshold: edit.interruptThreshold,
      temperature: this.program.temperature,
    };
    let response: ControlResponse;
    try {
      response = await this.request("PutProgram", { program: next });
    } catch (err) {
      return { outcome: "error", error: (err as Error).message };
    }
    if (response.status === "ok") {
      this.program = next;
      this.emit("program");
      return { outcome: "applied", version: Number(response.body.version) };
    }
    if (response.status === "conflict") {
      try {
        const current = await this.request("GetProgram");
        if (current.status === "ok") {
          this.program = current.body.program as ProgramObj;
          this.emit("program");
        }
      } catch {
        // keep the stale copy; the caller still sees the conflict
      }
      return {
        outcome: "conflict",
        currentVersion: this.program.version,
      };
    }
    if (response.status === "bad-request") {
      const serverProblems = Array.isArray(response.body.problems)
        ? response.body.problems.map(String)
        : [String(response.body.error ?? "rejected")];
      return { outcome: "invalid", problems: serverProblems };
    }
    if (response.status === "auth") {
      return { outcome: "auth", error: String(response.body.error ?? "not authorized") };
    }
    return { outcome: "error", error: `unexpected status ${response.status}` };
  }

  private validateEdit(edit: ProgramEdit): string[] {
    const problems: string[] = [];
    const n = this.moduleIds.length;
    if (edit.baseLogWeights.length !== n) {
      problems.push(`base_log_weights needs ${n} entries (one per module), got ${edit.baseLogWeights.length}`);
    }
    if (edit.baseLogWeights.some((v) => typeof v !== "number" || !Number.isFinite(v))) {
      problems.push("base_log_weights entries must be finite numbers");
    }
    if (
      typeof edit.interruptThreshold !== "number" ||
      !Number.isFinite(edit.interruptThreshold) ||
      edit.interruptThreshold < 0 ||
      edit.interruptThreshold > 1
    ) {
      problems.push("interrupt_threshold must be a number in [0, 1]");
    }
    if (typeof edit.primaryGoal !== "string" || edit.primaryGoal.length === 0) {
      problems.push("primary_goal must be a non-empty string");
    }
    return problems;
  }

  async refreshStm(prefix = "", limit = 50): Promise<StmSummary> {
    const response = await this.request("GetStmSummary", { prefix, limit });
    if (response.status !== "ok") {
      throw new Error(`GetStmSummary failed: ${response.status}`);
    }
    this.stm = response.body as StmSummary;
    this.emit("stm");
    return this.stm;
  }

  async fetchDecisionLog(limit?: number): Promise<Record<string, unknown>[]> {
    const body = limit === undefined ? {} : { limit };
    const response = await this.request("GetDecisionLog", body);
    if (response.status !== "ok") {
      throw new Error(`GetDecisionLog failed: ${response.status}`);
    }
    return response.body.directives as Record<string, unknown>[];
  }

  async fetchMetrics(): Promise<Record<string, unknown>> {
    const response = await this.request("GetMetrics");
    if (response.status !== "ok") {
      throw new Error(`GetMetrics failed: ${response.status}`);
    }
    return response.body;
  }
}

/**
 * Scripted control-protocol server for conformance tests.
 *
 * Implements the documented NDJSON contract over node:net: bearer-token
 * auth with viewer/admin roles, the read and admin operations, version
 * checking on PutProgram, and telemetry push to subscribed connections.
 * Every request is recorded so tests can assert exactly what the console
 * put on the wire.
 */

import * as net from "node:net";

import { LineDecoder, ProgramObj, encodeLine } from "../src/protocol.js";

export interface StubOptions {
  adminToken: string;
  viewerToken: string;
  moduleIds: string[];
  program: ProgramObj;
  weights?: number[];
  stmEntries?: Array<Record<string, unknown>>;
}

export interface RecordedRequest {
  op: string;
  role: string;
  body: Record<string, any>;
}

const READ_OPS = new Set([
  "GetProgram",
  "GetWeights",
  "GetStmSummary",
  "GetDecisionLog",
  "GetMetrics",
  "SubscribeTelemetry",
]);
const ADMIN_OPS = new Set(["PutProgram", "GetAuditLog"]);

export function sampleProgram(n: number): ProgramObj {
  return {
    version: 1,
    primary_goal: "keep the bench green",
    instructions: ["prefer text evidence"],
    base_log_weights: new Array(n).fill(0),
    routing_overrides: {},
    interrupt_threshold: 0.5,
    temperature: 1.0,
  };
}

export class StubControlServer {
  readonly requests: RecordedRequest[] = [];
  connectionsAccepted = 0;

  program: ProgramObj;
  weights: number[];

  private readonly server: net.Server;
  private readonly sockets = new Set<net.Socket>();
  private readonly subscribed = new Set<net.Socket>();

  constructor(private readonly options: StubOptions) {
    this.program = { ...options.program };
    this.weights = options.weights ?? options.moduleIds.map(() => 1 / options.moduleIds.length);
    this.server = net.createServer((socket) => this.accept(socket));
  }

  putProgramCount(): number {
    return this.requests.filter((r) => r.op === "PutProgram").length;
  }

  start(port = 0): Promise<number> {
    return new Promise((resolve, reject) => {
      this.server.once("error", reject);
      this.server.listen(port, "127.0.0.1", () => {
        this.server.removeListener("error", reject);
        resolve((this.server.address() as net.AddressInfo).port);
      });
    });
  }

  async close(): Promise<void> {
    for (const socket of [...this.sockets]) socket.destroy();
    this.sockets.clear();
    this.subscribed.clear();
    await new Promise<void>((resolve) => this.server.close(() => resolve()));
  }

  /** Drop live connections without closing the listener. */
  dropConnections(): void {
    for (const socket of [...this.sockets]) socket.destroy();
  }

  pushTelemetry(event: Record<string, unknown>): void {
    const line = encodeLine({ type: "telemetry", ...event });
    for (const socket of [...this.subscribed]) {
      socket.write(line);
    }
  }

  pushWeights(atNs: number, weights: number[]): void {
    this.pushTelemetry({
      at_ns: atNs,
      event: "weights",
      weights,
      modules: this.options.moduleIds,
      context_revision: 1,
      program_version: this.program.version,
      profile: "logical",
    });
  }

  // --- per-connection protocol ------------------------------------------

  private accept(socket: net.Socket): void {
    this.connectionsAccepted += 1;
    this.sockets.add(socket);
    const decoder = new LineDecoder();
    socket.on("data", (chunk) => {
      let frames: unknown[];
      try {
        frames = decoder.push(chunk);
      } catch {
        socket.write(encodeLine({ type: "response", status: "protocol", body: { error: "unparseable request" } }));
        return;
      }
      for (const frame of frames) this.handle(socket, frame as Record<string, any>);
    });
    socket.on("close", () => {
      this.sockets.delete(socket);
      this.subscribed.delete(socket);
    });
    socket.on("error", () => {});
  }

  private roleFor(token: unknown): string | null {
    if (token === this.options.adminToken) return "admin";
    if (token === this.options.viewerToken) return "viewer";
    return null;
  }

  private handle(socket: net.Socket, request: Record<string, any>): void {
    const op = request.op;
    const done = (status: string, body: Record<string, unknown>) => {
      const response: Record<string, unknown> = { type: "response", status, body };
      if (typeof op === "string") response.op = op;
      if (request.request_id !== undefined) response.request_id = request.request_id;
      socket.write(encodeLine(response));
    };
    if (typeof op !== "string" || op.length === 0) {
      done("bad-request", { error: "request needs a string 'op'" });
      return;
    }
    const role = this.roleFor(request.auth_token);
    const body: Record<string, any> = request.body ?? {};
    // record every wire-level request, including ones auth will reject
    this.requests.push({ op, role: role ?? "unknown", body });
    if (role === null) {
      done("auth", { error: "unrecognized auth token" });
      return;
    }
    if (!READ_OPS.has(op) && !ADMIN_OPS.has(op)) {
      done("unknown-op", { error: `unknown op '${op}'` });
      return;
    }
    if (ADMIN_OPS.has(op) && role !== "admin") {
      done("auth", { error: `${op} requires the admin token` });
      return;
    }

    switch (op) {
      case "GetProgram":
        done("ok", { program: { ...this.program } });
        return;
      case "PutProgram": {
        const raw = body.program;
        if (raw === null || typeof raw !== "object") {
          done("bad-request", { error: "body.program must be an object", problems: ["body.program must be an object"] });
          return;
        }
        if (raw.version !== this.program.version + 1) {
          done("conflict", { expected: this.program.version + 1, got: raw.version });
          return;
        }
        const problems: string[] = [];
        if (!Array.isArray(raw.base_log_weights) || raw.base_log_weights.length !== this.options.moduleIds.length) {
          problems.push(`base_log_weights has ${raw.base_log_weights?.length} entries for ${this.options.moduleIds.length} modules`);
        }
        if (problems.length > 0) {
          done("bad-request", { error: problems.join("; "), problems });
          return;
        }
        this.program = raw as ProgramObj;
        done("ok", { version: this.program.version });
        this.pushTelemetry({
          at_ns: 0,
          event: "program",
          version: this.program.version,
          goal: this.program.primary_goal,
        });
        return;
      }
      case "GetWeights":
        done("ok", {
          weights: [...this.weights],
          modules: [...this.options.moduleIds],
          context_revision: 1,
          program_version: this.program.version,
          profile: "logical",
        });
        return;
      case "GetStmSummary":
        done("ok", {
          revision: 42,
          occupancy: this.options.stmEntries?.length ?? 0,
          entries: this.options.stmEntries ?? [],
        });
        return;
      case "GetDecisionLog":
        done("ok", { directives: [] });
        return;
      case "GetMetrics":
        done("ok", { stub: true });
        return;
      case "GetAuditLog":
        done("ok", { records: [] });
        return;
      case "SubscribeTelemetry":
        this.subscribed.add(socket);
        done("ok", { subscribed: true });
        return;
      default:
        done("unknown-op", { error: `unhandled op '${op}'` });
    }
  }
}

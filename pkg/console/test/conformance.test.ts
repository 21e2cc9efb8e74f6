/**
 * Console-side conformance against a scripted protocol stub: one chart
 * point per telemetry frame, role gating, single-administration edits,
 * conflict reload, terminal auth failure, reconnect with backoff, and
 * bounded history.
 */

import { afterEach, describe, expect, it } from "vitest";

import { polyline, markerOffsets } from "../src/chart.js";
import { ConsoleSession, SessionOptions } from "../src/session.js";
import { Role } from "../src/protocol.js";
import { StubControlServer, sampleProgram } from "./stub.js";

const ADMIN = "admin-tok";
const VIEWER = "viewer-tok";
const MODULES = ["text-proc", "num-proc", "vision-proc"];

function makeStub(): StubControlServer {
  return new StubControlServer({
    adminToken: ADMIN,
    viewerToken: VIEWER,
    moduleIds: MODULES,
    program: sampleProgram(MODULES.length),
    stmEntries: [
      { key: "io.feed", author: "io", strength: 1.0, revision: 3, payload_type: "modality" },
    ],
  });
}

function makeSession(
  port: number,
  token: string,
  role: Role,
  extra: Partial<SessionOptions> = {},
): ConsoleSession {
  return new ConsoleSession({
    host: "127.0.0.1",
    port,
    token,
    role,
    reconnectInitialMs: 10,
    reconnectMaxMs: 80,
    requestTimeoutMs: 2000,
    ...extra,
  });
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

async function until(predicate: () => boolean, label: string, timeoutMs = 4000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (!predicate()) {
    if (Date.now() > deadline) throw new Error(`timed out waiting for ${label}`);
    await sleep(5);
  }
}

const cleanups: Array<() => Promise<void> | void> = [];

function cleanup(fn: () => Promise<void> | void): void {
  cleanups.push(fn);
}

afterEach(async () => {
  while (cleanups.length > 0) await cleanups.pop()!();
});

async function liveSession(
  stub: StubControlServer,
  token: string,
  role: Role,
  extra: Partial<SessionOptions> = {},
): Promise<ConsoleSession> {
  const port = await stub.start();
  cleanup(() => stub.close());
  const session = makeSession(port, token, role, extra);
  cleanup(() => session.close());
  session.connect();
  await until(() => session.state === "live", "session live");
  return session;
}

const validEdit = {
  baseLogWeights: [2.0, 0.0, 0.0],
  interruptThreshold: 0.4,
  primaryGoal: "boost the text module",
  instructions: ["prefer text evidence"],
};

describe("telemetry rendering", () => {
  it("renders exactly one chart point per weight frame on every series", async () => {
    const stub = makeStub();
    const session = await liveSession(stub, VIEWER, "viewer");
    expect(session.moduleIds).toEqual(MODULES);
    expect(session.weightSamples()).toHaveLength(0);

    const frames = 9;
    for (let i = 0; i < frames; i++) {
      stub.pushWeights(1000 * (i + 1), [0.5 - i * 0.02, 0.3, 0.2 + i * 0.02]);
    }
    await until(() => session.weightSamples().length === frames, "all frames folded in");

    expect(session.weightSamples().map((s) => s.atNs)).toEqual(
      Array.from({ length: frames }, (_, i) => 1000 * (i + 1)),
    );
    for (const id of MODULES) {
      const series = session.weightSeries(id);
      expect(series).toHaveLength(frames);
      expect(polyline(series, 900, 260, 0, 1)).toHaveLength(frames);
    }
    expect(session.weightSeries("text-proc")[0]).toBeCloseTo(0.5, 12);
    expect(session.weightSeries("vision-proc")[frames - 1]).toBeCloseTo(0.2 + 8 * 0.02, 12);
  });

  it("folds interrupt and directive frames into their logs and the marker axis", async () => {
    const stub = makeStub();
    const session = await liveSession(stub, VIEWER, "viewer");
    stub.pushWeights(1_000_000, [0.4, 0.3, 0.3]);
    stub.pushWeights(3_000_000, [0.2, 0.5, 0.3]);
    stub.pushTelemetry({
      at_ns: 2_000_000,
      event: "interrupt",
      interrupt_id: "int-1",
      proc_id: "walk-the-trail",
      divergence: 0.9,
    });
    stub.pushTelemetry({
      at_ns: 2_500_000,
      event: "directive",
      directive_id: "d-1",
      kind: "TakeOver",
      argument: { interrupt_id: "int-1" },
      issued_at_revision: 9,
      issued_at_ns: 2_500_000,
    });
    await until(
      () => session.interrupts().length === 1 && session.directives().length === 1,
      "interrupt and directive recorded",
    );
    expect(session.interrupts()[0]).toEqual({
      atNs: 2_000_000,
      interruptId: "int-1",
      procId: "walk-the-trail",
      divergence: 0.9,
    });
    expect(session.directives()[0].kind).toBe("TakeOver");

    const axis = session.weightSamples().map((s) => s.atNs);
    const offsets = markerOffsets(
      session.interrupts().map((m) => m.atNs),
      axis,
      900,
    );
    expect(offsets).toEqual([450]);
  });

  it("keeps history bounded at the configured ring capacity", async () => {
    const stub = makeStub();
    const session = await liveSession(stub, VIEWER, "viewer", { ringCapacity: 5 });
    for (let i = 1; i <= 17; i++) stub.pushWeights(i * 100, [0.4, 0.3, 0.3]);
    await until(
      () => session.weightSamples().at(-1)?.atNs === 1700,
      "latest frame arrived",
    );
    expect(session.weightSamples().map((s) => s.atNs)).toEqual([1300, 1400, 1500, 1600, 1700]);
    expect(session.weightSeries("num-proc")).toHaveLength(5);
  });

  it("refetches the program when another administration lands", async () => {
    const stub = makeStub();
    const session = await liveSession(stub, VIEWER, "viewer");
    expect(session.program?.version).toBe(1);
    stub.program = { ...stub.program, version: 2, primary_goal: "rerouted" };
    stub.pushTelemetry({ at_ns: 10, event: "program", version: 2, goal: "rerouted" });
    await until(() => session.program?.version === 2, "program refetched");
    expect(session.program?.primary_goal).toBe("rerouted");
  });
});

describe("role gating", () => {
  it("viewer sessions refuse edits locally and send nothing", async () => {
    const stub = makeStub();
    const session = await liveSession(stub, VIEWER, "viewer");
    expect(session.canEdit).toBe(false);

    const result = await session.applyProgram(validEdit);
    expect(result).toEqual({ outcome: "auth", error: "viewer session is read-only" });
    expect(stub.putProgramCount()).toBe(0);
    expect(stub.program.version).toBe(1);
  });

  it("the kernel side still rejects a viewer token presented as admin", async () => {
    const stub = makeStub();
    const session = await liveSession(stub, VIEWER, "admin");
    const result = await session.applyProgram(validEdit);
    expect(result.outcome).toBe("auth");
    expect(stub.putProgramCount()).toBe(1);
    expect(stub.program.version).toBe(1);
  });

  it("a bad token is a terminal auth failure with no retry loop", async () => {
    const stub = makeStub();
    const port = await stub.start();
    cleanup(() => stub.close());
    const session = makeSession(port, "not-a-token", "viewer");
    cleanup(() => session.close());
    session.connect();
    await until(() => session.state === "auth-failed", "auth failure surfaced");
    expect(session.lastError).toMatch(/token/);
    expect(stub.connectionsAccepted).toBe(1);
    await sleep(150);
    expect(stub.connectionsAccepted).toBe(1);
    expect(session.state).toBe("auth-failed");
  });
});

describe("program administration", () => {
  it("an admin edit sends exactly one administration at version+1", async () => {
    const stub = makeStub();
    const session = await liveSession(stub, ADMIN, "admin");
    expect(session.program?.version).toBe(1);

    const result = await session.applyProgram(validEdit);
    expect(result).toEqual({ outcome: "applied", version: 2 });

    const puts = stub.requests.filter((r) => r.op === "PutProgram");
    expect(puts).toHaveLength(1);
    expect(puts[0].body.program.version).toBe(2);
    expect(puts[0].body.program.base_log_weights).toEqual([2.0, 0.0, 0.0]);
    expect(puts[0].body.program.interrupt_threshold).toBe(0.4);
    expect(stub.program.version).toBe(2);
    expect(session.program?.version).toBe(2);
  });

  it("arity and range problems are rejected locally with nothing sent", async () => {
    const stub = makeStub();
    const session = await liveSession(stub, ADMIN, "admin");

    const short = await session.applyProgram({ ...validEdit, baseLogWeights: [1.0, 0.0] });
    expect(short.outcome).toBe("invalid");
    if (short.outcome === "invalid") {
      expect(short.problems.join(" ")).toContain("3");
    }

    const infinite = await session.applyProgram({
      ...validEdit,
      baseLogWeights: [1.0, Infinity, 0.0],
    });
    expect(infinite.outcome).toBe("invalid");

    const threshold = await session.applyProgram({ ...validEdit, interruptThreshold: 1.5 });
    expect(threshold.outcome).toBe("invalid");

    expect(stub.putProgramCount()).toBe(0);
    expect(stub.program.version).toBe(1);
  });

  it("a stale version gets a conflict, reloads the current program, and can retry", async () => {
    const stub = makeStub();
    const session = await liveSession(stub, ADMIN, "admin");
    stub.program = { ...stub.program, version: 5, primary_goal: "moved on" };

    const conflicted = await session.applyProgram(validEdit);
    expect(conflicted).toEqual({ outcome: "conflict", currentVersion: 5 });
    expect(session.program?.version).toBe(5);
    expect(session.program?.primary_goal).toBe("moved on");

    const retried = await session.applyProgram(validEdit);
    expect(retried).toEqual({ outcome: "applied", version: 6 });
    expect(stub.program.version).toBe(6);
  });
});

describe("connection lifecycle", () => {
  it("reconnects with backoff after a drop and resumes telemetry, history intact", async () => {
    const stub = makeStub();
    const port = await stub.start();
    cleanup(() => stub.close());
    const session = makeSession(port, VIEWER, "viewer");
    cleanup(() => session.close());
    session.connect();
    await until(() => session.state === "live", "initial connect");
    stub.pushWeights(100, [0.5, 0.3, 0.2]);
    stub.pushWeights(200, [0.4, 0.4, 0.2]);
    await until(() => session.weightSamples().length === 2, "first samples");

    stub.dropConnections();
    await until(() => session.state === "disconnected", "drop observed");
    await until(() => session.state === "live", "reconnected");
    expect(stub.connectionsAccepted).toBe(2);

    stub.pushWeights(300, [0.3, 0.4, 0.3]);
    await until(() => session.weightSamples().length === 3, "telemetry resumed");
    expect(session.weightSamples()[0].atNs).toBe(100);
  });

  it("rides out a full service restart on the same port", async () => {
    const stub = makeStub();
    const port = await stub.start();
    cleanup(() => stub.close().catch(() => {}));
    const session = makeSession(port, VIEWER, "viewer");
    cleanup(() => session.close());
    session.connect();
    await until(() => session.state === "live", "initial connect");
    stub.pushWeights(100, [0.5, 0.3, 0.2]);
    await until(() => session.weightSamples().length === 1, "first sample");

    await stub.close();
    await until(() => session.state === "disconnected", "outage observed");

    const revived = makeStub();
    cleanup(() => revived.close());
    await revived.start(port);
    await until(() => session.state === "live", "resumed after restart", 6000);
    revived.pushWeights(900, [0.2, 0.3, 0.5]);
    await until(() => session.weightSamples().length === 2, "telemetry after restart");
    expect(session.weightSamples().map((s) => s.atNs)).toEqual([100, 900]);
  });
});

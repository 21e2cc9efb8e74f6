/**
 * HTTP gateway between a browser and one kernel control connection.
 *
 * The gateway owns a ConsoleSession (the only thing that speaks the TCP
 * protocol) and exposes:
 *
 *   GET  /            the console page
 *   GET  /events      server-sent events: snapshot, then incremental updates
 *   POST /apply       program edit -> ApplyResult JSON
 *   GET  /stm         short-term memory summary (polled by the page)
 *   GET  /decisions   decision log tail
 *   GET  /metrics     kernel metrics
 *
 * Configuration comes from the environment when run as a program:
 * OGI_HOST, OGI_PORT, OGI_TOKEN, OGI_ROLE (admin|viewer, default viewer),
 * CONSOLE_HOST, CONSOLE_PORT.
 */

import * as http from "node:http";
import { AddressInfo } from "node:net";
import { pathToFileURL } from "node:url";

import { renderPage } from "./page.js";
import { Role } from "./protocol.js";
import { ChangeReason, ConsoleSession, SessionOptions } from "./session.js";

const MAX_BODY_BYTES = 64 * 1024;
const SSE_KEEPALIVE_MS = 15_000;

export interface GatewayOptions {
  session: SessionOptions;
  httpHost?: string;
  httpPort?: number;
}

interface SseClient {
  res: http.ServerResponse;
  keepalive: NodeJS.Timeout;
}

export class Gateway {
  readonly session: ConsoleSession;
  private readonly httpHost: string;
  private readonly httpPort: number;
  private readonly server: http.Server;
  private readonly sseClients = new Set<SseClient>();
  private unsubscribe: (() => void) | null = null;

  constructor(options: GatewayOptions) {
    this.session = new ConsoleSession(options.session);
    this.httpHost = options.httpHost ?? "127.0.0.1";
    this.httpPort = options.httpPort ?? 8080;
    this.server = http.createServer((req, res) => {
      void this.route(req, res);
    });
  }

  async start(): Promise<{ host: string; port: number }> {
    this.unsubscribe = this.session.onChange((reason) => this.broadcast(reason));
    this.session.connect();
    await new Promise<void>((resolve, reject) => {
      this.server.once("error", reject);
      this.server.listen(this.httpPort, this.httpHost, () => {
        this.server.removeListener("error", reject);
        resolve();
      });
    });
    const addr = this.server.address() as AddressInfo;
    return { host: addr.address, port: addr.port };
  }

  async stop(): Promise<void> {
    for (const client of [...this.sseClients]) this.dropSse(client);
    this.unsubscribe?.();
    this.unsubscribe = null;
    this.session.close();
    await new Promise<void>((resolve) => this.server.close(() => resolve()));
  }

  // --- http ------------------------------------------------------------

  private async route(req: http.IncomingMessage, res: http.ServerResponse): Promise<void> {
    const url = new URL(req.url ?? "/", "http://host");
    try {
      if (req.method === "GET" && url.pathname === "/") {
        const html = renderPage({
          role: this.session.role,
          endpoint: `${this.session.host}:${this.session.port}`,
          ringCapacity: this.session.ringCapacity,
        });
        res.writeHead(200, { "content-type": "text/html; charset=utf-8" });
        res.end(html);
      } else if (req.method === "GET" && url.pathname === "/events") {
        this.openSse(res);
      } else if (req.method === "POST" && url.pathname === "/apply") {
        await this.handleApply(req, res);
      } else if (req.method === "GET" && url.pathname === "/stm") {
        const summary = await this.session.refreshStm("", 200);
        this.json(res, 200, summary);
      } else if (req.method === "GET" && url.pathname === "/decisions") {
        this.json(res, 200, { directives: await this.session.fetchDecisionLog(200) });
      } else if (req.method === "GET" && url.pathname === "/metrics") {
        this.json(res, 200, await this.session.fetchMetrics());
      } else {
        this.json(res, 404, { error: "not found" });
      }
    } catch (err) {
      if (!res.headersSent) {
        this.json(res, 502, { error: (err as Error).message });
      } else {
        res.end();
      }
    }
  }

  private json(res: http.ServerResponse, status: number, body: unknown): void {
    res.writeHead(status, { "content-type": "application/json" });
    res.end(JSON.stringify(body));
  }

  private async handleApply(req: http.IncomingMessage, res: http.ServerResponse): Promise<void> {
    let raw: Buffer;
    try {
      raw = await readBody(req, MAX_BODY_BYTES);
    } catch (err) {
      this.json(res, 413, { outcome: "invalid", problems: [(err as Error).message] });
      return;
    }
    let edit: any;
    try {
      edit = JSON.parse(raw.toString("utf8"));
    } catch {
      this.json(res, 400, { outcome: "invalid", problems: ["body must be JSON"] });
      return;
    }
    const result = await this.session.applyProgram({
      baseLogWeights: Array.isArray(edit.baseLogWeights) ? edit.baseLogWeights : [],
      interruptThreshold: edit.interruptThreshold,
      primaryGoal: String(edit.primaryGoal ?? ""),
      instructions: Array.isArray(edit.instructions) ? edit.instructions.map(String) : [],
    });
    this.json(res, 200, result);
  }

  // --- server-sent events -------------------------------------------------

  private openSse(res: http.ServerResponse): void {
    res.writeHead(200, {
      "content-type": "text/event-stream",
      "cache-control": "no-cache",
      connection: "keep-alive",
    });
    const client: SseClient = {
      res,
      keepalive: setInterval(() => res.write(": keepalive\n\n"), SSE_KEEPALIVE_MS),
    };
    client.keepalive.unref?.();
    this.sseClients.add(client);
    res.on("close", () => this.dropSse(client));
    this.send(client, "snapshot", {
      state: this.session.state,
      lastError: this.session.lastError,
      role: this.session.role,
      endpoint: `${this.session.host}:${this.session.port}`,
      ringCapacity: this.session.ringCapacity,
      modules: this.session.moduleIds,
      profile: this.session.profile,
      program: this.session.program,
      weights: this.session.weightSamples(),
      interrupts: this.session.interrupts(),
      directives: this.session.directives(),
    });
  }

  private dropSse(client: SseClient): void {
    if (!this.sseClients.delete(client)) return;
    clearInterval(client.keepalive);
    client.res.end();
  }

  private send(client: SseClient, event: string, data: unknown): void {
    client.res.write(`event: ${event}\ndata: ${JSON.stringify(data)}\n\n`);
  }

  private broadcast(reason: ChangeReason): void {
    if (this.sseClients.size === 0) return;
    let event: string;
    let data: unknown;
    switch (reason) {
      case "weights":
        event = "weights";
        data = {
          sample: this.session.weightSamples().at(-1),
          modules: this.session.moduleIds,
          profile: this.session.profile,
        };
        break;
      case "interrupt":
        event = "interrupt";
        data = { mark: this.session.interrupts().at(-1) };
        break;
      case "directive":
        event = "directive";
        data = { entry: this.session.directives().at(-1) };
        break;
      case "program":
        event = "program";
        data = { program: this.session.program };
        break;
      case "state":
        event = "state";
        data = { state: this.session.state, lastError: this.session.lastError };
        break;
      default:
        return;
    }
    for (const client of [...this.sseClients]) {
      try {
        this.send(client, event, data);
      } catch {
        this.dropSse(client);
      }
    }
  }
}

// --- program entry ---------------------------------------------------------

async function readBody(req: http.IncomingMessage, cap: number): Promise<Buffer> {
  const chunks: Buffer[] = [];
  let size = 0;
  for await (const chunk of req) {
    size += (chunk as Buffer).length;
    if (size > cap) throw new Error(`body larger than ${cap} bytes`);
    chunks.push(chunk as Buffer);
  }
  return Buffer.concat(chunks);
}

function envConfig(): GatewayOptions {
  const kernelPort = Number(process.env.OGI_PORT ?? "");
  const token = process.env.OGI_TOKEN ?? "";
  const role = process.env.OGI_ROLE ?? "viewer";
  const problems: string[] = [];
  if (!Number.isInteger(kernelPort) || kernelPort < 1 || kernelPort > 65535) {
    problems.push("OGI_PORT must be a TCP port number");
  }
  if (token === "") problems.push("OGI_TOKEN must be set");
  if (role !== "admin" && role !== "viewer") problems.push("OGI_ROLE must be admin or viewer");
  if (problems.length > 0) {
    for (const p of problems) console.error(`config: ${p}`);
    process.exit(2);
  }
  return {
    session: {
      host: process.env.OGI_HOST ?? "127.0.0.1",
      port: kernelPort,
      token,
      role: role as Role,
    },
    httpHost: process.env.CONSOLE_HOST ?? "127.0.0.1",
    httpPort: Number(process.env.CONSOLE_PORT ?? "8080"),
  };
}

export async function main(): Promise<void> {
  const options = envConfig();
  const gateway = new Gateway(options);
  const { host, port } = await gateway.start();
  console.log(
    `console for ${options.session.host}:${options.session.port} ` +
      `(${options.session.role}) listening on http://${host}:${port}`,
  );
  const shutdown = () => {
    void gateway.stop().then(() => process.exit(0));
  };
  process.on("SIGINT", shutdown);
  process.on("SIGTERM", shutdown);
}

const entry = process.argv[1];
if (entry !== undefined && import.meta.url === pathToFileURL(entry).href) {
  main().catch((err) => {
    console.error(err);
    process.exit(1);
  });
}

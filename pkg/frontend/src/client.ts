/**
 * Child-process client for the engine's stdio array API.
 *
 * One request is in flight at a time; responses are newline-framed JSON
 * matched back to their request id. Long operations run in the engine
 * process, so the Node event loop stays free.
 */

import { spawn, ChildProcessByStdio } from "node:child_process";
import { once } from "node:events";
import type { Readable, Writable } from "node:stream";

type EngineProcess = ChildProcessByStdio<Writable, Readable, null>;

export interface SessionOptions {
  /** Command that starts the engine API, e.g. ["python3", "-m", "idxgrid.cli", "api"]. */
  command?: string[];
  env?: NodeJS.ProcessEnv;
}

const DEFAULT_COMMAND = ["python3", "-m", "idxgrid.cli", "api"];

interface Pending {
  resolve: (v: any) => void;
  reject: (e: Error) => void;
}

export class EngineError extends Error {}

export class GridSession {
  private child: EngineProcess;
  private pending = new Map<number, Pending>();
  private nextId = 1;
  private chain: Promise<unknown> = Promise.resolve();
  private buffer = "";
  private closed = false;

  private constructor(child: EngineProcess) {
    this.child = child;
    child.stdout.setEncoding("utf8");
    child.stdout.on("data", (chunk: string) => this.onData(chunk));
    child.on("exit", () => {
      this.closed = true;
      for (const p of this.pending.values()) {
        p.reject(new EngineError("engine process exited"));
      }
      this.pending.clear();
    });
  }

  static async start(options: SessionOptions = {}): Promise<GridSession> {
    const cmd = options.command ?? DEFAULT_COMMAND;
    const child = spawn(cmd[0], cmd.slice(1), {
      stdio: ["pipe", "pipe", "inherit"],
      env: { ...process.env, ...options.env },
    });
    const session = new GridSession(child);
    await session.request("ping", {}); // surfaces spawn failures eagerly
    return session;
  }

  private onData(chunk: string) {
    this.buffer += chunk;
    let nl: number;
    while ((nl = this.buffer.indexOf("\n")) >= 0) {
      const line = this.buffer.slice(0, nl);
      this.buffer = this.buffer.slice(nl + 1);
      if (!line.trim()) continue;
      const resp = JSON.parse(line);
      const pending = this.pending.get(resp.id);
      if (!pending) continue;
      this.pending.delete(resp.id);
      if (resp.ok) {
        pending.resolve(resp.result);
      } else {
        pending.reject(new EngineError(resp.error));
      }
    }
  }

  /** Send one request; requests are serialized in call order. */
  request(op: string, args: Record<string, unknown>): Promise<any> {
    const run = () =>
      new Promise<any>((resolve, reject) => {
        if (this.closed) {
          reject(new EngineError("session is closed"));
          return;
        }
        const id = this.nextId++;
        this.pending.set(id, { resolve, reject });
        this.child.stdin.write(JSON.stringify({ id, op, args }) + "\n");
      });
    const next = this.chain.then(run, run);
    this.chain = next.catch(() => undefined); // keep the queue alive after errors
    return next;
  }

  async close(): Promise<void> {
    if (this.closed) return;
    this.closed = true;
    this.child.stdin.end();
    await once(this.child, "exit");
  }
}

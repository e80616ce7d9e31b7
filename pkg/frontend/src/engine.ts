import { spawn, type ChildProcessByStdio } from "node:child_process";
import type { Readable, Writable } from "node:stream";
import { errorFromBody, type EngineResponse } from "./protocol.js";

interface Pending {
  resolve: (result: unknown) => void;
  reject: (err: Error) => void;
}

export interface EngineOptions {
  /** Interpreter used to launch the server; must have the package installed. */
  python?: string;
  cwd?: string;
}

/**
 * One engine subprocess speaking newline-delimited JSON over stdio.
 *
 * Requests are matched to responses by id, so callers may issue several
 * concurrently; the server still answers them in order.
 */
export class EngineProcess {
  private child: ChildProcessByStdio<Writable, Readable, null>;
  private pending = new Map<number, Pending>();
  private nextId = 1;
  private buffer = "";
  private exitError: Error | null = null;

  constructor(opts: EngineOptions = {}) {
    this.child = spawn(opts.python ?? "python3", ["-m", "asmnav", "engine-server"], {
      cwd: opts.cwd,
      stdio: ["pipe", "pipe", "inherit"],
    });
    this.child.stdout.setEncoding("utf8");
    this.child.stdout.on("data", (chunk: string) => this.feed(chunk));
    this.child.on("exit", (code, signal) => {
      this.exitError = new Error(
        `engine exited (code=${code ?? "null"} signal=${signal ?? "null"}) with ` +
          `${this.pending.size} request(s) in flight`,
      );
      for (const waiter of this.pending.values()) waiter.reject(this.exitError);
      this.pending.clear();
    });
    this.child.on("error", (err) => {
      this.exitError = err;
      for (const waiter of this.pending.values()) waiter.reject(err);
      this.pending.clear();
    });
  }

  private feed(chunk: string): void {
    this.buffer += chunk;
    for (;;) {
      const nl = this.buffer.indexOf("\n");
      if (nl < 0) return;
      const line = this.buffer.slice(0, nl);
      this.buffer = this.buffer.slice(nl + 1);
      if (line.trim()) this.dispatch(JSON.parse(line) as EngineResponse);
    }
  }

  private dispatch(resp: EngineResponse): void {
    const waiter = resp.id === null ? undefined : this.pending.get(resp.id);
    if (!waiter) return;
    this.pending.delete(resp.id as number);
    if (resp.ok) {
      waiter.resolve(resp.result);
    } else {
      waiter.reject(errorFromBody(resp.error!));
    }
  }

  request(op: string, params: Record<string, unknown> = {}): Promise<any> {
    if (this.exitError) return Promise.reject(this.exitError);
    const id = this.nextId++;
    const line = JSON.stringify({ id, op, ...params });
    return new Promise((resolve, reject) => {
      this.pending.set(id, { resolve, reject });
      this.child.stdin.write(line + "\n", (err) => {
        if (err && this.pending.delete(id)) reject(err);
      });
    });
  }

  /** Closes stdin and waits for the loop to end on EOF. */
  shutdown(): Promise<number | null> {
    const done = new Promise<number | null>((resolve) => {
      this.child.once("exit", (code) => resolve(code));
    });
    this.child.stdin.end();
    return done;
  }
}

/** Spawns the real review service as a subprocess for integration tests. */

import { type ChildProcess, spawn } from "node:child_process";
import { createServer } from "node:net";

function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const srv = createServer();
    srv.listen(0, "127.0.0.1", () => {
      const addr = srv.address();
      if (addr && typeof addr === "object") {
        const port = addr.port;
        srv.close(() => resolve(port));
      } else {
        srv.close(() => reject(new Error("could not allocate a port")));
      }
    });
  });
}

export interface ServiceHandle {
  baseUrl: string;
  stop(): void;
}

export async function startService(timeoutMs = 30000): Promise<ServiceHandle> {
  const port = await freePort();
  const proc: ChildProcess = spawn("python3", ["-m", "lineagelab.service"], {
    env: { ...process.env, PORT: String(port) },
    stdio: ["ignore", "ignore", "pipe"],
  });
  let stderr = "";
  proc.stderr?.on("data", (chunk) => {
    stderr += String(chunk);
  });

  const baseUrl = `http://127.0.0.1:${port}`;
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    if (proc.exitCode !== null) {
      throw new Error(`service exited with ${proc.exitCode}:\n${stderr}`);
    }
    try {
      const res = await fetch(`${baseUrl}/api/v1/sequences`);
      if (res.ok) return { baseUrl, stop: () => proc.kill() };
    } catch {
      // not listening yet
    }
    await new Promise((r) => setTimeout(r, 100));
  }
  proc.kill();
  throw new Error(`service did not come up within ${timeoutMs}ms:\n${stderr}`);
}

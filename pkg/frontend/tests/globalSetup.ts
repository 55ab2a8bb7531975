/** Boots the real inference server (stub splitters) for the test run. */
import { spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

let server: ChildProcess | undefined;

async function waitForHealth(base: string, timeoutMs: number): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    try {
      const res = await fetch(`${base}/healthz`);
      if (res.ok) return;
    } catch {
      /* not up yet */
    }
    await new Promise((r) => setTimeout(r, 200));
  }
  throw new Error(`server at ${base} did not become healthy in ${timeoutMs}ms`);
}

export default async function setup(): Promise<() => Promise<void>> {
  const port = 20000 + Math.floor(Math.random() * 20000);
  const base = `http://127.0.0.1:${port}`;
  const store = mkdtempSync(join(tmpdir(), "boxsplit-ui-test-"));
  server = spawn(
    "python3",
    ["-m", "boxsplit.cli", "serve", "--stub-models", "--addr", `127.0.0.1:${port}`, "--store", store],
    { stdio: ["ignore", "inherit", "inherit"] },
  );
  process.env.BOXSPLIT_TEST_BASE_URL = base;
  await waitForHealth(base, 30000);
  return async () => {
    server?.kill("SIGTERM");
    await new Promise((r) => setTimeout(r, 300));
    server?.kill("SIGKILL");
  };
}

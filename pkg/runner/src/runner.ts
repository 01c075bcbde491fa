import { spawn, spawnSync } from "child_process";
import { existsSync } from "fs";

export type StatusWord = "ok" | "syntax_error" | "runtime_error" | "timeout" | "runner_error";

export interface RunnerResult {
  status_word: StatusWord;
  stdout: string;
  stderr: string;
  exit_code: number;
  wall_ms: number;
}

export interface RunnerConfig {
  file: string;
  timeoutMs: number;
  maxOutputBytes: number;
}

export const DEFAULT_MAX_OUTPUT_BYTES = 1024 * 1024;

function pythonInterpreter(): string {
  return process.env.RUNNER_PYTHON ?? "python3";
}

/** Compile the source without executing it, so syntax errors are caught first. */
function checkSyntax(file: string): { ok: boolean; stderr: string } {
  const check = spawnSync(
    pythonInterpreter(),
    ["-c", "import sys; compile(open(sys.argv[1], 'rb').read(), sys.argv[1], 'exec')", file],
    { encoding: "utf-8", timeout: 30_000 }
  );
  if (check.error) {
    throw check.error;
  }
  return { ok: check.status === 0, stderr: check.stderr ?? "" };
}

class CappedBuffer {
  private chunks: Buffer[] = [];
  private size = 0;

  constructor(private readonly cap: number) {}

  push(chunk: Buffer): void {
    if (this.size >= this.cap) {
      return; // keep draining the pipe, drop the bytes
    }
    const room = this.cap - this.size;
    const kept = chunk.length > room ? chunk.subarray(0, room) : chunk;
    this.chunks.push(kept);
    this.size += kept.length;
  }

  toString(): string {
    return Buffer.concat(this.chunks).toString("utf-8");
  }
}

function executeProgram(config: RunnerConfig): Promise<RunnerResult> {
  return new Promise((resolve) => {
    const started = Date.now();
    const stdout = new CappedBuffer(config.maxOutputBytes);
    const stderr = new CappedBuffer(config.maxOutputBytes);
    let timedOut = false;
    let settled = false;

    const child = spawn(pythonInterpreter(), [config.file], {
      detached: true, // own process group, so the kill reaps grandchildren
      stdio: ["ignore", "pipe", "pipe"],
    });

    const killGroup = () => {
      if (child.pid === undefined) {
        return;
      }
      try {
        process.kill(-child.pid, "SIGKILL");
      } catch {
        // group already gone
      }
    };

    const timer = setTimeout(() => {
      timedOut = true;
      killGroup();
    }, config.timeoutMs);

    child.stdout.on("data", (chunk: Buffer) => stdout.push(chunk));
    child.stderr.on("data", (chunk: Buffer) => stderr.push(chunk));

    const settle = (exitCode: number, statusWord: StatusWord, extraStderr = "") => {
      if (settled) {
        return;
      }
      settled = true;
      clearTimeout(timer);
      killGroup();
      resolve({
        status_word: statusWord,
        stdout: stdout.toString(),
        stderr: stderr.toString() + extraStderr,
        exit_code: exitCode,
        wall_ms: Date.now() - started,
      });
    };

    child.on("error", (error) => {
      settle(-1, "runner_error", `failed to spawn interpreter: ${error.message}`);
    });

    child.on("close", (code, signal) => {
      if (timedOut) {
        settle(-9, "timeout", `killed after ${config.timeoutMs} ms wall-clock limit`);
      } else if (code === 0) {
        settle(0, "ok");
      } else {
        settle(code ?? -1, "runtime_error", signal ? `terminated by ${signal}` : "");
      }
    });
  });
}

/** Run one candidate program and report the protocol result object. */
export async function run(config: RunnerConfig): Promise<RunnerResult> {
  try {
    if (config.timeoutMs <= 0 || config.maxOutputBytes <= 0) {
      return {
        status_word: "runner_error",
        stdout: "",
        stderr: "timeout-ms and max-output-bytes must be positive",
        exit_code: -1,
        wall_ms: 0,
      };
    }
    if (!existsSync(config.file)) {
      return {
        status_word: "runner_error",
        stdout: "",
        stderr: `no such file: ${config.file}`,
        exit_code: -1,
        wall_ms: 0,
      };
    }
    const syntax = checkSyntax(config.file);
    if (!syntax.ok) {
      return {
        status_word: "syntax_error",
        stdout: "",
        stderr: syntax.stderr,
        exit_code: 1,
        wall_ms: 0,
      };
    }
    return await executeProgram(config);
  } catch (error) {
    const message = error instanceof Error ? error.message : String(error);
    return {
      status_word: "runner_error",
      stdout: "",
      stderr: `internal runner failure: ${message}`,
      exit_code: -1,
      wall_ms: 0,
    };
  }
}

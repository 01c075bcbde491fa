import { DEFAULT_MAX_OUTPUT_BYTES, run, RunnerConfig, RunnerResult } from "./runner";

function parseArgs(argv: string[]): RunnerConfig | string {
  let file: string | undefined;
  let timeoutMs: number | undefined;
  let maxOutputBytes = DEFAULT_MAX_OUTPUT_BYTES;

  for (let i = 0; i < argv.length; i += 1) {
    const arg = argv[i];
    const next = () => {
      i += 1;
      return argv[i];
    };
    if (arg === "--file") {
      file = next();
    } else if (arg === "--timeout-ms") {
      timeoutMs = Number(next());
    } else if (arg === "--max-output-bytes") {
      maxOutputBytes = Number(next());
    } else {
      return `unknown argument: ${arg}`;
    }
  }
  if (!file) {
    return "missing required --file";
  }
  if (timeoutMs === undefined || !Number.isFinite(timeoutMs)) {
    return "missing or invalid --timeout-ms";
  }
  if (!Number.isFinite(maxOutputBytes)) {
    return "invalid --max-output-bytes";
  }
  return { file, timeoutMs, maxOutputBytes };
}

async function main(): Promise<void> {
  const parsed = parseArgs(process.argv.slice(2));
  let result: RunnerResult;
  if (typeof parsed === "string") {
    result = {
      status_word: "runner_error",
      stdout: "",
      stderr: parsed,
      exit_code: -1,
      wall_ms: 0,
    };
  } else {
    result = await run(parsed);
  }
  // Exactly one protocol object on the runner's own stdout, then exit 0.
  process.stdout.write(JSON.stringify(result) + "\n");
}

main().then(
  () => process.exit(0),
  (error) => {
    process.stdout.write(
      JSON.stringify({
        status_word: "runner_error",
        stdout: "",
        stderr: `unhandled runner failure: ${error instanceof Error ? error.message : error}`,
        exit_code: -1,
        wall_ms: 0,
      }) + "\n"
    );
    process.exit(0);
  }
);

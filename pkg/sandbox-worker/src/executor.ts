import { spawn } from 'child_process';
import { tmpdir } from 'os';

import { SandboxPolicy } from './policy.js';
import { staticScreen } from './screen.js';

export type ExecutionStatus = 'ok' | 'timeout' | 'rejected' | 'runtime_error';

export interface ExecutionResult {
  stdout: string;
  stderr: string;
  status: ExecutionStatus;
  duration_ms: number;
}

export const TRUNCATION_MARKER = '\n[stdout truncated]';

// Exit code the runtime guard uses to signal a policy denial; must not
// collide with ordinary Python exit codes (0 success, 1 uncaught exception).
const REJECTED_EXIT_CODE = 42;

/**
 * Runtime guard prepended to every snippet. The import hook only screens
 * imports issued from the snippet itself (module __name__ == '__main__'), so
 * whitelisted libraries may pull in their own dependencies. Denials bypass
 * user-level exception handling via os._exit.
 */
function guardSource(policy: SandboxPolicy): string {
  const allowed = [...policy.allowedModules]
    .map((name) => JSON.stringify(name))
    .join(', ');
  return `import sys as _sys, builtins as _b
_os = _b.__import__("os")
_ALLOWED = frozenset([${allowed}])
_real_import = _b.__import__
def _reject(msg):
    _sys.stdout.flush()
    _sys.stderr.write(msg + "\\n")
    _sys.stderr.flush()
    _os._exit(${REJECTED_EXIT_CODE})
def _guarded_import(name, globals=None, locals=None, fromlist=(), level=0):
    if globals is not None and globals.get("__name__") == "__main__":
        root = name.partition(".")[0]
        if root not in _ALLOWED:
            _reject("import of '" + root + "' is not allowed")
    return _real_import(name, globals, locals, fromlist, level)
_b.__import__ = _guarded_import
def _no_open(*args, **kwargs):
    _reject("file I/O is not allowed")
_b.open = _no_open
`;
}

function truncate(buffers: Buffer[], collected: number, cap: number): string {
  const text = Buffer.concat(buffers).toString('utf-8');
  if (collected <= cap) {
    return text;
  }
  return Buffer.concat(buffers, cap).toString('utf-8') + TRUNCATION_MARKER;
}

/** Run one snippet in a fresh isolated Python process under the policy. */
export function execute(
  code: string,
  timeoutMs: number,
  policy: SandboxPolicy,
): Promise<ExecutionResult> {
  const started = Date.now();
  const verdict = staticScreen(code, policy);
  if (!verdict.ok) {
    return Promise.resolve({
      stdout: '',
      stderr: verdict.reason,
      status: 'rejected',
      duration_ms: Date.now() - started,
    });
  }

  const source = guardSource(policy) + '\n' + code;
  return new Promise((resolve) => {
    // -I: isolated mode, ignores environment variables and user site-packages
    const child = spawn('python3', ['-I', '-c', source], {
      cwd: tmpdir(),
      stdio: ['ignore', 'pipe', 'pipe'],
    });

    const stdoutChunks: Buffer[] = [];
    const stderrChunks: Buffer[] = [];
    let stdoutBytes = 0;
    let stderrBytes = 0;
    let timedOut = false;

    child.stdout.on('data', (chunk: Buffer) => {
      // keep draining past the cap so the child never blocks on a full pipe
      if (stdoutBytes <= policy.maxStdoutBytes) {
        stdoutChunks.push(chunk);
      }
      stdoutBytes += chunk.length;
    });
    child.stderr.on('data', (chunk: Buffer) => {
      if (stderrBytes <= policy.maxStdoutBytes) {
        stderrChunks.push(chunk);
      }
      stderrBytes += chunk.length;
    });

    const killer = setTimeout(() => {
      timedOut = true;
      child.kill('SIGKILL');
    }, timeoutMs);

    const finish = (status: ExecutionStatus, stderrOverride?: string) => {
      clearTimeout(killer);
      resolve({
        stdout: truncate(stdoutChunks, stdoutBytes, policy.maxStdoutBytes),
        stderr:
          stderrOverride ?? truncate(stderrChunks, stderrBytes, policy.maxStdoutBytes),
        status,
        duration_ms: Date.now() - started,
      });
    };

    child.on('error', (err) => {
      finish('runtime_error', `failed to start interpreter: ${err.message}`);
    });
    child.on('close', (exitCode) => {
      if (timedOut) {
        finish('timeout');
      } else if (exitCode === 0) {
        finish('ok');
      } else if (exitCode === REJECTED_EXIT_CODE) {
        finish('rejected');
      } else {
        finish('runtime_error');
      }
    });
  });
}

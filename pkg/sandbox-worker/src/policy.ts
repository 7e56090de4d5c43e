export interface SandboxPolicy {
  allowedModules: Set<string>;
  deniedModules: Set<string>;
  timeoutMs: number;
  maxStdoutBytes: number;
}

export const DEFAULT_ALLOWED = [
  'math',
  'sympy',
  'itertools',
  'datetime',
  'random',
  'statistics',
];

export const DEFAULT_DENIED = [
  'os',
  'sys',
  'subprocess',
  'socket',
  'shutil',
  'pathlib',
];

export const DEFAULT_TIMEOUT_MS = 5000;
export const DEFAULT_MAX_STDOUT_BYTES = 64 * 1024;

export interface PolicyOverrides {
  allowedModules?: string[];
  deniedModules?: string[];
  timeoutMs?: number;
  maxStdoutBytes?: number;
}

export function makePolicy(overrides: PolicyOverrides = {}): SandboxPolicy {
  const allowed = new Set(overrides.allowedModules ?? DEFAULT_ALLOWED);
  const denied = new Set(overrides.deniedModules ?? DEFAULT_DENIED);
  for (const name of allowed) {
    if (denied.has(name)) {
      throw new Error(`module '${name}' is both allowed and denied`);
    }
  }
  const timeoutMs = overrides.timeoutMs ?? DEFAULT_TIMEOUT_MS;
  const maxStdoutBytes = overrides.maxStdoutBytes ?? DEFAULT_MAX_STDOUT_BYTES;
  if (!Number.isInteger(timeoutMs) || timeoutMs <= 0) {
    throw new Error('timeoutMs must be a positive integer');
  }
  if (!Number.isInteger(maxStdoutBytes) || maxStdoutBytes <= 0) {
    throw new Error('maxStdoutBytes must be a positive integer');
  }
  return { allowedModules: allowed, deniedModules: denied, timeoutMs, maxStdoutBytes };
}

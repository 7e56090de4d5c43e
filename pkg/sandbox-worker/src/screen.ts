import { SandboxPolicy } from './policy.js';

export type ScreenVerdict = { ok: true } | { ok: false; reason: string };

// Dunder names that reach the import machinery or escape the namespace; plain
// attribute access is enough to start a bypass, so their mere presence fails
// the screen.
const DANGEROUS_DUNDERS = [
  '__import__',
  '__builtins__',
  '__globals__',
  '__subclasses__',
  '__bases__',
  '__mro__',
  '__loader__',
  '__spec__',
  '__reduce__',
];

const IMPORT_RE = /^\s*(?:import|from)\s+([A-Za-z_][\w.]*)/gm;

/**
 * Pure textual pre-check: no execution. Rejects import statements outside the
 * whitelist and any reference to a dangerous dunder. The runtime guard backs
 * this up, since a static screen alone is bypassable.
 */
export function staticScreen(code: string, policy: SandboxPolicy): ScreenVerdict {
  for (const match of code.matchAll(IMPORT_RE)) {
    const root = match[1].split('.')[0];
    if (!policy.allowedModules.has(root)) {
      return { ok: false, reason: `import of '${root}' is not allowed` };
    }
  }
  for (const dunder of DANGEROUS_DUNDERS) {
    if (code.includes(dunder)) {
      return { ok: false, reason: `use of '${dunder}' is not allowed` };
    }
  }
  return { ok: true };
}

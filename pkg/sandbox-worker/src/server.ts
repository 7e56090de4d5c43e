import express, { Express } from 'express';

import { execute } from './executor.js';
import { SandboxPolicy } from './policy.js';

/**
 * HTTP front for the executor. One endpoint:
 *
 *   POST /execute  {code, timeout_ms?} -> {stdout, stderr, status, duration_ms}
 *
 * Per-request failures are mapped to protocol statuses or a 400; they never
 * take the service down.
 */
export function createApp(policy: SandboxPolicy): Express {
  const app = express();
  app.use(express.json({ limit: '1mb' }));

  app.get('/health', (_req, res) => {
    res.json({ status: 'healthy' });
  });

  app.post('/execute', async (req, res) => {
    const body = req.body ?? {};
    if (typeof body.code !== 'string' || body.code.length === 0) {
      res.status(400).json({ error: "field 'code' must be a non-empty string" });
      return;
    }
    let timeoutMs = policy.timeoutMs;
    if (body.timeout_ms !== undefined) {
      if (!Number.isInteger(body.timeout_ms) || body.timeout_ms <= 0) {
        res.status(400).json({ error: "field 'timeout_ms' must be a positive integer" });
        return;
      }
      timeoutMs = body.timeout_ms;
    }
    try {
      res.json(await execute(body.code, timeoutMs, policy));
    } catch (error) {
      res.status(500).json({
        error: error instanceof Error ? error.message : 'internal error',
      });
    }
  });

  return app;
}

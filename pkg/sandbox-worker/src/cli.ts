#!/usr/bin/env node
import yargs from 'yargs';
import { hideBin } from 'yargs/helpers';

import { makePolicy } from './policy.js';
import { createApp } from './server.js';

function parseBind(bind: string): { host: string; port: number } {
  const at = bind.lastIndexOf(':');
  const host = at > 0 ? bind.slice(0, at) : '127.0.0.1';
  const port = Number(at >= 0 ? bind.slice(at + 1) : bind);
  if (!Number.isInteger(port) || port < 0 || port > 65535) {
    throw new Error(`invalid bind address: ${bind}`);
  }
  return { host, port };
}

function parseModuleList(value: string | undefined): string[] | undefined {
  if (value === undefined) {
    return undefined;
  }
  return value
    .split(',')
    .map((name) => name.trim())
    .filter((name) => name.length > 0);
}

async function main(): Promise<void> {
  const argv = await yargs(hideBin(process.argv))
    .option('bind', {
      type: 'string',
      default: '127.0.0.1:8080',
      describe: 'host:port to listen on',
    })
    .option('timeout-ms', {
      type: 'number',
      default: 5000,
      describe: 'default per-request wall-clock limit',
    })
    .option('allow', {
      type: 'string',
      describe: 'comma-separated module whitelist (replaces the default)',
    })
    .option('deny', {
      type: 'string',
      describe: 'comma-separated module denylist (replaces the default)',
    })
    .strict()
    .parse();

  const policy = makePolicy({
    timeoutMs: argv['timeout-ms'],
    allowedModules: parseModuleList(argv.allow),
    deniedModules: parseModuleList(argv.deny),
  });
  const { host, port } = parseBind(argv.bind);
  createApp(policy).listen(port, host, () => {
    console.log(`sandbox-worker listening on http://${host}:${port}`);
    console.log(`  allowed modules: ${[...policy.allowedModules].join(', ')}`);
    console.log(`  default timeout: ${policy.timeoutMs} ms`);
  });
}

main().catch((error) => {
  console.error(error instanceof Error ? error.message : error);
  process.exit(2);
});

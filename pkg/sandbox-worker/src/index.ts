export { makePolicy, SandboxPolicy, PolicyOverrides } from './policy.js';
export { staticScreen, ScreenVerdict } from './screen.js';
export { execute, ExecutionResult, ExecutionStatus, TRUNCATION_MARKER } from './executor.js';
export { createApp } from './server.js';

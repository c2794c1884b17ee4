/* tslint:disable */
/* eslint-disable */

export function branchFrequency(schedule: string, points: number, draws: number, seed: number): Float64Array;

export function qStarSlice(a: number, b: number, q: number, r: number, gamma: number, x: number, u_lo: number, u_hi: number, points: number): Float64Array;

/**
 * `[P, K, residual, |√γ(a − bK)|]`.
 */
export function scalarRiccati(a: number, b: number, q: number, r: number, gamma: number): Float64Array;

export function scheduleCurve(schedule: string, points: number): Float64Array;

/**
 * `[learned gain, optimal gain, cost ratio per evaluation...]`.
 */
export function trainLqr(variant: string, steps: number, seed: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly branchFrequency: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly qStarSlice: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: number) => [number, number, number, number];
    readonly scalarRiccati: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly scheduleCurve: (a: number, b: number, c: number) => [number, number, number, number];
    readonly trainLqr: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;

/* tslint:disable */
/* eslint-disable */

/**
 * Complexity of a canonical model, optionally shrunk. A `width_factor` and
 * `depth_factor` of 1 with the native image and patch size is the model
 * itself; `heads` of 0 keeps the base head count.
 */
export function complexity(name: string, image_size: number, patch_size: number, width_factor: number, depth_factor: number, heads: number): string;

/**
 * Error distribution of pasted top-1 errors (any whitespace or comma
 * separated list), as `{deltas, cum_fracs}`.
 */
export function edf(errors: string): string;

/**
 * Learning rate at `points` evenly spaced fractional epochs in [0, total].
 */
export function lr_curve(lr: number, minibatch: number, warmup: number, total: number, points: number): Float64Array;

/**
 * Canonical model names, newline separated.
 */
export function model_names(): string;

/**
 * Log-uniform (lr, wd) draws around a center, flattened as
 * `[lr0, wd0, lr1, wd1, ...]`.
 */
export function sample_sweep(center_lr: number, center_wd: number, low: number, high: number, n: number, seed: bigint): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly complexity: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
    readonly edf: (a: number, b: number) => [number, number, number, number];
    readonly lr_curve: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly model_names: () => [number, number];
    readonly sample_sweep: (a: number, b: number, c: number, d: number, e: number, f: bigint) => [number, number, number, number];
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

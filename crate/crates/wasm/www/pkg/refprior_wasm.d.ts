/* tslint:disable */
/* eslint-disable */

/**
 * Grid capacity and capacity-achieving prior.
 */
export function capacity(family_name: string, param: number, grid_points: number): string;

/**
 * Optimal and Jeffreys priors on the same cell-midpoint grid, with the
 * mutual information each one attains.
 */
export function jeffreys_comparison(family_name: string, param: number, grid_points: number): string;

/**
 * MCMC Blahut-Arimoto run, returning one sample histogram per iteration.
 */
export function mcmc_histograms(family_name: string, param: number, iterations: number, n0: number, seed: bigint, bins: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly capacity: (a: number, b: number, c: number, d: number) => [number, number];
    readonly jeffreys_comparison: (a: number, b: number, c: number, d: number) => [number, number];
    readonly mcmc_histograms: (a: number, b: number, c: number, d: number, e: number, f: bigint, g: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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

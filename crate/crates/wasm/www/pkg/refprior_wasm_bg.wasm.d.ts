/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const capacity: (a: number, b: number, c: number, d: number) => [number, number];
export const jeffreys_comparison: (a: number, b: number, c: number, d: number) => [number, number];
export const mcmc_histograms: (a: number, b: number, c: number, d: number, e: number, f: bigint, g: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;

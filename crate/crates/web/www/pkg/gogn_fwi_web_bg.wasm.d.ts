/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_inversion_free: (a: number, b: number) => void;
export const __wbg_noisytrace_free: (a: number, b: number) => void;
export const __wbg_snapshots_free: (a: number, b: number) => void;
export const inversion_model: (a: number) => [number, number];
export const inversion_model_error: (a: number) => [number, number];
export const inversion_nx: (a: number) => number;
export const inversion_ny: (a: number) => number;
export const inversion_objective: (a: number) => [number, number];
export const inversion_solves: (a: number) => [number, number];
export const inversion_status: (a: number) => [number, number];
export const inversion_target: (a: number) => [number, number];
export const invert: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
export const noisy_trace: (a: number, b: number, c: number, d: number) => [number, number, number];
export const noisytrace_clean: (a: number) => [number, number];
export const noisytrace_clean_spectrum: (a: number) => [number, number];
export const noisytrace_noise_spectrum: (a: number) => [number, number];
export const noisytrace_noisy: (a: number) => [number, number];
export const snapshots_count: (a: number) => number;
export const snapshots_frame: (a: number, b: number) => [number, number];
export const snapshots_model: (a: number) => [number, number];
export const snapshots_nx: (a: number) => number;
export const snapshots_ny: (a: number) => number;
export const wavefield: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_start: () => void;

/* tslint:disable */
/* eslint-disable */

export class Inversion {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly model: Float64Array;
    readonly model_error: Float64Array;
    readonly nx: number;
    readonly ny: number;
    readonly objective: Float64Array;
    /**
     * Cumulative solve count at each traced iteration.
     */
    readonly solves: Float64Array;
    readonly status: string;
    readonly target: Float64Array;
}

export class NoisyTrace {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly clean: Float64Array;
    /**
     * Magnitudes of the non-negative frequency bins.
     */
    readonly clean_spectrum: Float64Array;
    readonly noise_spectrum: Float64Array;
    readonly noisy: Float64Array;
}

export class Snapshots {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Pressure at recording step `i`, row-major with `y` fastest.
     */
    frame(i: number): Float64Array;
    readonly count: number;
    readonly model: Float64Array;
    readonly nx: number;
    readonly ny: number;
}

/**
 * Runs one optimizer on a small clustered-geometry instance.
 */
export function invert(optimizer: string, n: number, n_sources: number, budget: number, seed: number): Inversion;

/**
 * A Ricker trace of `n_t` one-second samples with band-limited noise added.
 */
export function noisy_trace(frequency: number, sigma: number, seed: number, n_t: number): NoisyTrace;

/**
 * Propagates one source through the face model; `sx`, `sy` are in `[0, 1]`.
 */
export function wavefield(n: number, cap: number, sx: number, sy: number, frequency: number): Snapshots;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_inversion_free: (a: number, b: number) => void;
    readonly __wbg_noisytrace_free: (a: number, b: number) => void;
    readonly __wbg_snapshots_free: (a: number, b: number) => void;
    readonly inversion_model: (a: number) => [number, number];
    readonly inversion_model_error: (a: number) => [number, number];
    readonly inversion_nx: (a: number) => number;
    readonly inversion_ny: (a: number) => number;
    readonly inversion_objective: (a: number) => [number, number];
    readonly inversion_solves: (a: number) => [number, number];
    readonly inversion_status: (a: number) => [number, number];
    readonly inversion_target: (a: number) => [number, number];
    readonly invert: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
    readonly noisy_trace: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly noisytrace_clean: (a: number) => [number, number];
    readonly noisytrace_clean_spectrum: (a: number) => [number, number];
    readonly noisytrace_noise_spectrum: (a: number) => [number, number];
    readonly noisytrace_noisy: (a: number) => [number, number];
    readonly snapshots_count: (a: number) => number;
    readonly snapshots_frame: (a: number, b: number) => [number, number];
    readonly snapshots_model: (a: number) => [number, number];
    readonly snapshots_nx: (a: number) => number;
    readonly snapshots_ny: (a: number) => number;
    readonly wavefield: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
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

/* tslint:disable */
/* eslint-disable */

/**
 * Frame of the edge from `(0,0,0)` to `(d,0,0)` with the centroid at
 * `(cx, cy, 0)`.
 *
 * Layout: `[e1 (3), e2 (3), e3 (3), gate]`.
 */
export function edge_frame(d: number, cx: number, cy: number): Float64Array;

/**
 * Lennard-Jones pair energy (eV) and force (eV/Å) on `points` separations.
 *
 * Layout: `points` rows of `[r, E, F]`.
 */
export function lj_curve(epsilon: number, sigma: number, cutoff: number, r_min: number, r_max: number, points: number): Float64Array;

/**
 * NVE trajectory of a 32-atom Lennard-Jones argon crystal started from
 * the lattice at `temperature` K.
 *
 * Layout: one row per sample of `[time fs, potential, kinetic, total]`,
 * energies in meV/atom relative to the initial total.
 */
export function md_energy_trace(temperature: number, dt: number, steps: number, seed: bigint): Float64Array;

/**
 * Radial basis functions sampled at `points` distances in `(0, cutoff]`.
 *
 * Layout: `points` rows of `[r, φ_1(r), …, φ_K(r)]`.
 */
export function rbf_curves(num_basis: number, cutoff: number, points: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly edge_frame: (a: number, b: number, c: number) => [number, number, number, number];
    readonly lj_curve: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number];
    readonly md_energy_trace: (a: number, b: number, c: number, d: bigint) => [number, number, number, number];
    readonly rbf_curves: (a: number, b: number, c: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
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

/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const edge_frame: (a: number, b: number, c: number) => [number, number, number, number];
export const lj_curve: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number];
export const md_energy_trace: (a: number, b: number, c: number, d: bigint) => [number, number, number, number];
export const rbf_curves: (a: number, b: number, c: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;

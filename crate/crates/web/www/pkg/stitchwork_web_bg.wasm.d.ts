/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_design_free: (a: number, b: number) => void;
export const demo_png: () => [number, number];
export const design_fromDemo: () => [number, number, number];
export const design_height: (a: number) => number;
export const design_new: (a: number, b: number) => [number, number, number];
export const design_render: (a: number, b: number, c: number) => [number, number, number, number];
export const design_split: (a: number, b: number, c: number) => [number, number, number, number];
export const design_width: (a: number) => number;
export const stitch_ids: () => [number, number];
export const swatch_png: (a: number, b: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;

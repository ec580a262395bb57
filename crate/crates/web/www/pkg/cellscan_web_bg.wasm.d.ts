/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_get_sizereport_edge_pixels: (a: number) => number;
export const __wbg_get_sizereport_edge_png_bytes: (a: number) => number;
export const __wbg_get_sizereport_pixels: (a: number) => number;
export const __wbg_get_sizereport_raw_png_bytes: (a: number) => number;
export const __wbg_set_sizereport_edge_pixels: (a: number, b: number) => void;
export const __wbg_set_sizereport_edge_png_bytes: (a: number, b: number) => void;
export const __wbg_set_sizereport_pixels: (a: number, b: number) => void;
export const __wbg_set_sizereport_raw_png_bytes: (a: number, b: number) => void;
export const __wbg_sizereport_free: (a: number, b: number) => void;
export const cannyStage: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: number) => [number, number, number, number];
export const compareSizes: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number];
export const sizereport_ratio: (a: number) => number;
export const synthCell: (a: number, b: number, c: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;

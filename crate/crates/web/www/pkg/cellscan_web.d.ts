/* tslint:disable */
/* eslint-disable */

/**
 * PNG sizes of an image and of its edge map.
 */
export class SizeReport {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    ratio(): number;
    edge_pixels: number;
    edge_png_bytes: number;
    pixels: number;
    raw_png_bytes: number;
}

/**
 * One stage of the edge pipeline as a displayable RGBA image.
 */
export function cannyStage(rgba: Uint8Array, width: number, height: number, sigma: number, low: number, high: number, stage: string): Uint8Array;

export function compareSizes(rgba: Uint8Array, width: number, height: number, sigma: number, low: number, high: number): SizeReport;

/**
 * A synthetic stained cell, square RGBA of side `size`.
 */
export function synthCell(size: number, seed: number, infected: boolean): Uint8Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_get_sizereport_edge_pixels: (a: number) => number;
    readonly __wbg_get_sizereport_edge_png_bytes: (a: number) => number;
    readonly __wbg_get_sizereport_pixels: (a: number) => number;
    readonly __wbg_get_sizereport_raw_png_bytes: (a: number) => number;
    readonly __wbg_set_sizereport_edge_pixels: (a: number, b: number) => void;
    readonly __wbg_set_sizereport_edge_png_bytes: (a: number, b: number) => void;
    readonly __wbg_set_sizereport_pixels: (a: number, b: number) => void;
    readonly __wbg_set_sizereport_raw_png_bytes: (a: number, b: number) => void;
    readonly __wbg_sizereport_free: (a: number, b: number) => void;
    readonly cannyStage: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: number) => [number, number, number, number];
    readonly compareSizes: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number];
    readonly sizereport_ratio: (a: number) => number;
    readonly synthCell: (a: number, b: number, c: number) => [number, number, number, number];
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

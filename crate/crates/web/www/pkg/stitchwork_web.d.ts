/* tslint:disable */
/* eslint-disable */

/**
 * An uploaded design and its current palette.
 */
export class Design {
    free(): void;
    [Symbol.dispose](): void;
    static fromDemo(): Design;
    constructor(png: Uint8Array);
    /**
     * Split style preview as PNG bytes; `request` is a JSON [`RenderRequest`].
     */
    render(request: string): Uint8Array;
    /**
     * Quantizes the palette and returns the regions as JSON.
     */
    split(max_colors: number, tolerance: number): string;
    readonly height: number;
    readonly width: number;
}

export function demo_png(): Uint8Array;

/**
 * Stitch ids available in the page, as a JSON array.
 */
export function stitch_ids(): string;

export function swatch_png(id: string): Uint8Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_design_free: (a: number, b: number) => void;
    readonly demo_png: () => [number, number];
    readonly design_fromDemo: () => [number, number, number];
    readonly design_height: (a: number) => number;
    readonly design_new: (a: number, b: number) => [number, number, number];
    readonly design_render: (a: number, b: number, c: number) => [number, number, number, number];
    readonly design_split: (a: number, b: number, c: number) => [number, number, number, number];
    readonly design_width: (a: number) => number;
    readonly stitch_ids: () => [number, number];
    readonly swatch_png: (a: number, b: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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

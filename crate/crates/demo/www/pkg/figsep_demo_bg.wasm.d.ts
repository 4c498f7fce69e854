/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_figure_free: (a: number, b: number) => void;
export const figure_annotations: (a: number) => [number, number];
export const figure_cells: (a: number, b: number) => [number, number, number, number];
export const figure_height: (a: number) => number;
export const figure_mask: (a: number, b: number) => [number, number, number, number];
export const figure_new: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number];
export const figure_rgba: (a: number) => [number, number];
export const figure_score_box: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const figure_width: (a: number) => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;

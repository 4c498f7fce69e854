/* tslint:disable */
/* eslint-disable */

export class Figure {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Ground-truth labels and subfigures as JSON, boxes in pixel corners.
     */
    annotations(): string;
    /**
     * Cells each label selects on a grid of the given stride:
     * `{"rows", "cols", "selections": [{"class", "cells": [[i, j]..], "representative": [i, j]}]}`.
     */
    cells(stride: number): string;
    height(): number;
    /**
     * Label mask at `resolution`² (one byte per pixel, 0/1), the network's
     * fourth input channel.
     */
    mask(resolution: number): Uint8Array;
    /**
     * `position` is one of `corner`, `above`, `below`.
     */
    constructor(rows: number, cols: number, n_subfigures: number, position: string, size: number, seed: number);
    /**
     * RGBA bytes for an `ImageData`.
     */
    rgba(): Uint8Array;
    /**
     * IoU of a pixel-corner box against every subfigure, best first.
     */
    score_box(x0: number, y0: number, x1: number, y1: number): string;
    width(): number;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_figure_free: (a: number, b: number) => void;
    readonly figure_annotations: (a: number) => [number, number];
    readonly figure_cells: (a: number, b: number) => [number, number, number, number];
    readonly figure_height: (a: number) => number;
    readonly figure_mask: (a: number, b: number) => [number, number, number, number];
    readonly figure_new: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number];
    readonly figure_rgba: (a: number) => [number, number];
    readonly figure_score_box: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly figure_width: (a: number) => number;
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

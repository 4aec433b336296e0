/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demo_free: (a: number, b: number) => void;
export const demo_ambiguous_accuracy: (a: number, b: number) => [number, number, number];
export const demo_ambiguous_cells: (a: number) => [number, number];
export const demo_cells_x: (a: number) => number;
export const demo_height: (a: number) => number;
export const demo_image_rgba: (a: number) => [number, number];
export const demo_label_rgba: (a: number, b: number) => [number, number, number, number];
export const demo_new: (a: bigint, b: number) => [number, number, number];
export const demo_new_scene: (a: number, b: bigint) => [number, number];
export const demo_parse_tree: (a: number, b: bigint, c: number) => [number, number, number, number];
export const demo_prepare_training: (a: number, b: number, c: bigint) => [number, number];
export const demo_train_chunk: (a: number, b: number) => [number, number, number, number];
export const demo_trained: (a: number) => number;
export const demo_truth_rgba: (a: number) => [number, number];
export const demo_width: (a: number) => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;

/* tslint:disable */
/* eslint-disable */

/**
 * Demo state: the current scene plus the two trained models, if any.
 */
export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Fraction of ambiguous cells labeled correctly, NaN before training or
     * when the scene has none.
     */
    ambiguous_accuracy(context: boolean): number;
    /**
     * Ambiguous cell ids of the current scene.
     */
    ambiguous_cells(): Uint32Array;
    cells_x(): number;
    height(): number;
    image_rgba(): Uint8Array;
    /**
     * Label colors of the chosen model; empty before training.
     */
    label_rgba(context: boolean): Uint8Array;
    constructor(seed: bigint, ambiguity: number);
    /**
     * Replaces the scene and keeps any trained models.
     */
    new_scene(seed: bigint): void;
    /**
     * A random parse tree as JSON: node positions in cell units, parent links, depth.
     */
    parse_tree(seed: bigint, balanced: boolean): string;
    prepare_training(images: number, seed: bigint): void;
    /**
     * Returns `[context_loss, local_loss]` averaged over the chunk.
     */
    train_chunk(epochs: number): Float64Array;
    trained(): boolean;
    truth_rgba(): Uint8Array;
    width(): number;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_ambiguous_accuracy: (a: number, b: number) => [number, number, number];
    readonly demo_ambiguous_cells: (a: number) => [number, number];
    readonly demo_cells_x: (a: number) => number;
    readonly demo_height: (a: number) => number;
    readonly demo_image_rgba: (a: number) => [number, number];
    readonly demo_label_rgba: (a: number, b: number) => [number, number, number, number];
    readonly demo_new: (a: bigint, b: number) => [number, number, number];
    readonly demo_new_scene: (a: number, b: bigint) => [number, number];
    readonly demo_parse_tree: (a: number, b: bigint, c: number) => [number, number, number, number];
    readonly demo_prepare_training: (a: number, b: number, c: bigint) => [number, number];
    readonly demo_train_chunk: (a: number, b: number) => [number, number, number, number];
    readonly demo_trained: (a: number) => number;
    readonly demo_truth_rgba: (a: number) => [number, number];
    readonly demo_width: (a: number) => number;
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

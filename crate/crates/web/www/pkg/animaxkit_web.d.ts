/* tslint:disable */
/* eslint-disable */

export class Scene {
    free(): void;
    [Symbol.dispose](): void;
    azimuths(): Float64Array;
    frames(): number;
    joints(): number;
    label(): string;
    constructor(seed: number, max_joints: number, resolution: number, views: number);
    /**
     * RGBA preview of the view's Plücker ray directions.
     */
    rays(view: number, size: number): Uint8Array;
    /**
     * RGBA pixels of one pose map.
     */
    render(view: number, frame: number): Uint8Array;
    resolution(): number;
    /**
     * Round-trip metrics as JSON.
     */
    roundtrip(lambda_bone: number, noise_px: number): string;
    views(): number;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_scene_free: (a: number, b: number) => void;
    readonly scene_azimuths: (a: number) => [number, number];
    readonly scene_frames: (a: number) => number;
    readonly scene_joints: (a: number) => number;
    readonly scene_label: (a: number) => [number, number];
    readonly scene_new: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly scene_rays: (a: number, b: number, c: number) => [number, number];
    readonly scene_render: (a: number, b: number, c: number) => [number, number, number, number];
    readonly scene_resolution: (a: number) => number;
    readonly scene_roundtrip: (a: number, b: number, c: number) => [number, number, number, number];
    readonly scene_views: (a: number) => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_table_dealloc: (a: number) => void;
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

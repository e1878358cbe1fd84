export { ApiClient, ApiError, InvariantError, StaleRevisionError } from "./client";
export { ReviewStore } from "./store";
export type { SessionPhase } from "./store";
export { LABEL_COLORS, fnv1a, trackColor } from "./colors";
export * from "./types";

export { ApiClient, ApiError, type ApiClientOptions } from "./api.js";
export { SessionController, type KeyAction } from "./controller.js";
export {
  dataToScreen,
  fitCamera,
  lassoSelect,
  pickPoint,
  pointInPolygon,
  screenToData,
  zoomAt,
  type Vec2,
} from "./geometry.js";
export { pollEmbedding, type PollOptions } from "./poll.js";
export {
  LABEL_COLORS,
  UNLABELED_COLOR,
  labelColor,
  render,
  type Canvas2DLike,
  type RenderOptions,
  type RenderStats,
} from "./render.js";
export type * from "./types.js";

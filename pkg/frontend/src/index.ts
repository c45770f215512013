export * from "./api.js";
export * from "./annotate.js";
export * from "./adjudicate.js";
export * from "./render.js";
export * from "./app.js";

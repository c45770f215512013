/**
 * Browser entry point: wires the flows to a DOM container and the keyboard.
 * All logic lives in the flow classes so tests can drive them headlessly.
 */

import { ReviewClient } from "./api.js";
import { AnnotateFlow } from "./annotate.js";
import { AdjudicateFlow } from "./adjudicate.js";
import {
  renderAdjudicateView,
  renderAnnotateView,
  renderExportView,
  renderInstructions,
} from "./render.js";

export interface AppConfig {
  baseUrl: string;
  sessionId: string;
  /** "A" or "B" starts an annotation screen; "adjudicator" the other one. */
  role: string;
  /** Briefing text shown above the first item; plain text, not HTML. */
  instructions?: string;
}

export async function mountAnnotate(
  root: { innerHTML: string },
  config: AppConfig,
  addKeyListener: (handler: (key: string) => void) => void,
): Promise<AnnotateFlow> {
  const client = new ReviewClient(config.baseUrl);
  const flow = new AnnotateFlow(client, config.sessionId, config.role);
  const header = config.instructions ? renderInstructions(config.instructions) : "";
  const paint = () => {
    root.innerHTML = header + renderAnnotateView(flow.getState());
  };
  await flow.start();
  paint();
  addKeyListener((key) => {
    const action =
      key === "y"
        ? flow.judge(true)
        : key === "n"
          ? flow.judge(false)
          : key === "s"
            ? flow.skip()
            : key === "r"
              ? flow.retry()
              : null;
    if (action !== null) void action.then(paint);
  });
  return flow;
}

export async function mountAdjudicate(
  root: { innerHTML: string },
  config: AppConfig,
): Promise<AdjudicateFlow> {
  const client = new ReviewClient(config.baseUrl);
  const flow = new AdjudicateFlow(client, config.sessionId);
  await flow.refresh();
  const state = flow.getState();
  if (state.exportUnlocked) {
    await flow.loadExport();
    const loaded = flow.getState();
    root.innerHTML = renderExportView(loaded.exportRows ?? [], loaded.kappaReport ?? {});
  } else {
    root.innerHTML = renderAdjudicateView(state);
  }
  return flow;
}

/** Browser bootstrap; no-op when imported outside a browser (tests). */
export function bootstrap(config: AppConfig): void {
  if (typeof document === "undefined") return;
  const root = document.getElementById("app");
  if (root === null) throw new Error("missing #app container");
  const listen = (handler: (key: string) => void) =>
    document.addEventListener("keydown", (event) => handler(event.key));
  if (config.role === "adjudicator") {
    void mountAdjudicate(root, config);
  } else {
    void mountAnnotate(root, config, listen);
  }
}

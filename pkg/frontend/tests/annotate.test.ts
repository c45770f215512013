import { describe, expect, it } from "vitest";

import { AnnotateFlow } from "../src/annotate.js";
import { openSession } from "./helpers.js";

describe("annotate flow", () => {
  it("renders the first pending item with only the blinded fields", async () => {
    const { client, sessionId } = await openSession(3);
    const flow = new AnnotateFlow(client, sessionId, "A");
    await flow.start();
    const state = flow.getState();
    expect(state.current).toEqual({
      pair_id: "inst0::neg0",
      query: "query about subject 0",
      negative_text: "candidate passage number 0",
    });
    expect(state.remaining).toBe(3);
    expect(state.finished).toBe(false);
  });

  it("never shows an item the assessor already judged", async () => {
    const { client, sessionId } = await openSession(2);
    const flow = new AnnotateFlow(client, sessionId, "A");
    await flow.start();
    await flow.judge(true);
    expect(flow.getState().current?.pair_id).toBe("inst1::neg0");
    await flow.judge(false);
    const state = flow.getState();
    expect(state.current).toBeNull();
    expect(state.finished).toBe(true);
  });

  it("progress comes from the server, not a local count", async () => {
    const { client, sessionId } = await openSession(4);
    const flow = new AnnotateFlow(client, sessionId, "A");
    await flow.start();
    await flow.judge(true);
    expect(flow.getState().progress?.judged_by["A"]).toBe(1);
    // A reload (fresh flow) sees the same server-side state.
    const reloaded = new AnnotateFlow(client, sessionId, "A");
    await reloaded.start();
    expect(reloaded.getState().progress?.judged_by["A"]).toBe(1);
    expect(reloaded.getState().current?.pair_id).toBe("inst1::neg0");
  });

  it("a conflict refreshes the item and does not double-count", async () => {
    const { client, sessionId } = await openSession(2);
    const flow = new AnnotateFlow(client, sessionId, "A");
    await flow.start();
    // Another tab of the same assessor judges the displayed item first.
    await client.postJudgment(sessionId, "inst0::neg0", "A", false);
    await flow.judge(true);
    const state = flow.getState();
    expect(state.banner?.kind).toBe("conflict");
    expect(state.current?.pair_id).toBe("inst1::neg0");
    expect(state.progress?.judged_by["A"]).toBe(1);
  });

  it("a network failure raises the retry banner and marks nothing", async () => {
    const { server, client, sessionId } = await openSession(2);
    const flow = new AnnotateFlow(client, sessionId, "A");
    await flow.start();
    server.failNextRequests = 1;
    await flow.judge(true);
    let state = flow.getState();
    expect(state.banner?.kind).toBe("retry");
    expect(state.current?.pair_id).toBe("inst0::neg0");
    // The server never saw the judgment.
    expect((await client.progress(sessionId)).judged_by["A"]).toBe(0);

    await flow.retry();
    state = flow.getState();
    expect(state.banner).toBeNull();
    expect(state.current?.pair_id).toBe("inst1::neg0");
    expect(state.progress?.judged_by["A"]).toBe(1);
  });

  it("skip posts nothing and returns the item to the pending pool", async () => {
    const { server, client, sessionId } = await openSession(1);
    const flow = new AnnotateFlow(client, sessionId, "A");
    await flow.start();
    const postsBefore = server.requestLog.filter((l) => l.startsWith("POST")).length;
    await flow.skip();
    const state = flow.getState();
    const postsAfter = server.requestLog.filter((l) => l.startsWith("POST")).length;
    expect(postsAfter).toBe(postsBefore);
    expect(state.deferred).toEqual(["inst0::neg0"]);
    expect(state.banner?.kind).toBe("info");
    // Still pending server-side, so it comes around again.
    expect(state.current?.pair_id).toBe("inst0::neg0");
    expect((await client.progress(sessionId)).counts.pending).toBe(1);
  });
});

import { ItemUpload, ReviewClient } from "../src/api.js";
import { FakeReviewServer } from "./fake-server.js";

export function makeItems(n: number, judge = "qwen-test"): ItemUpload[] {
  return Array.from({ length: n }, (_, i) => ({
    pair_id: `inst${i}::neg0`,
    query: `query about subject ${i}`,
    negative_text: `candidate passage number ${i}`,
    llm_label: i < Math.floor(n / 2),
    judge_tag: judge,
  }));
}

export async function openSession(
  n: number,
  server = new FakeReviewServer(),
): Promise<{ server: FakeReviewServer; client: ReviewClient; sessionId: string }> {
  const client = new ReviewClient("http://fake.test", server.fetchFn);
  const sessionId = await client.createSession(makeItems(n), "study");
  return { server, client, sessionId };
}

export function itemIndex(pairId: string): number {
  const match = pairId.match(/^inst(\d+)::/);
  if (match === null) throw new Error(`unexpected pair id ${pairId}`);
  return Number(match[1]);
}

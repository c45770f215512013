/**
 * Pure HTML-string renderers. Keeping views as string functions makes the
 * blinding property directly assertable: tests render every assessor-facing
 * view and search the output for hidden-field markers.
 */

import { ExportRow, KappaReport, Progress } from "./api.js";
import { AnnotateState } from "./annotate.js";
import { AdjudicateState } from "./adjudicate.js";

export function escapeHtml(text: string): string {
  return text
    .replaceAll("&", "&amp;")
    .replaceAll("<", "&lt;")
    .replaceAll(">", "&gt;")
    .replaceAll('"', "&quot;")
    .replaceAll("'", "&#39;");
}

export function renderInstructions(text: string): string {
  return `<section data-role="instructions"><pre>${escapeHtml(text)}</pre></section>`;
}

export function renderProgressBar(progress: Progress | null): string {
  if (progress === null) {
    return `<div data-role="progress">loading progress...</div>`;
  }
  const resolved = progress.counts.done + progress.counts.adjudicated;
  const percent = progress.total === 0 ? 0 : Math.round((100 * resolved) / progress.total);
  const judged = Object.entries(progress.judged_by)
    .map(([who, n]) => `${escapeHtml(who)}: ${n}`)
    .join(", ");
  return [
    `<div data-role="progress">`,
    `<div class="bar"><div class="fill" style="width:${percent}%"></div></div>`,
    `<span>${resolved}/${progress.total} resolved, ` +
      `${progress.counts.disagreed} disagreed (${judged})</span>`,
    `</div>`,
  ].join("");
}

function renderBanner(state: AnnotateState): string {
  if (state.banner === null) return "";
  const retryHint = state.banner.kind === "retry" ? " [r to retry]" : "";
  return (
    `<div data-role="banner" data-kind="${state.banner.kind}">` +
    `${escapeHtml(state.banner.message)}${retryHint}</div>`
  );
}

/** The assessor's screen: query, passage, keys. Never anything hidden. */
export function renderAnnotateView(state: AnnotateState): string {
  const parts = [
    `<section data-role="annotate" data-assessor="${escapeHtml(state.assessor)}">`,
    renderBanner(state),
    renderProgressBar(state.progress),
  ];
  if (state.current === null) {
    parts.push(
      state.finished
        ? `<p data-role="done">No items left for you. Thanks!</p>`
        : `<p data-role="loading">Loading...</p>`,
    );
  } else {
    parts.push(
      `<h2 data-role="query">${escapeHtml(state.current.query)}</h2>`,
      `<blockquote data-role="negative">${escapeHtml(state.current.negative_text)}</blockquote>`,
      `<p data-role="question">Does this passage answer the query?</p>`,
      `<p data-role="keys">[y] yes &middot; [n] no &middot; [s] skip for now</p>`,
    );
  }
  parts.push(`</section>`);
  return parts.join("");
}

/** Adjudicator's screen: disagreed items with both judgments revealed. */
export function renderAdjudicateView(state: AdjudicateState): string {
  const parts = [`<section data-role="adjudicate">`, renderProgressBar(state.progress)];
  if (state.notice !== null) {
    parts.push(`<div data-role="notice">${escapeHtml(state.notice)}</div>`);
  }
  if (state.queue.length === 0) {
    parts.push(`<p data-role="empty">No disagreements to adjudicate.</p>`);
  }
  for (const item of state.queue) {
    const judgments = Object.entries(item.judgments)
      .map(
        ([who, label]) =>
          `<td data-assessor="${escapeHtml(who)}">${escapeHtml(who)}: ${label ? "yes" : "no"}</td>`,
      )
      .join("");
    parts.push(
      `<article data-role="disagreement" data-pair="${escapeHtml(item.pair_id)}">`,
      `<h3>${escapeHtml(item.query)}</h3>`,
      `<blockquote>${escapeHtml(item.negative_text)}</blockquote>`,
      `<table><tr>${judgments}</tr></table>`,
      `<p>[y] final yes &middot; [n] final no</p>`,
      `</article>`,
    );
  }
  parts.push(
    state.exportUnlocked
      ? `<p data-role="export-unlocked">All items resolved; export is available.</p>`
      : `<p data-role="export-locked">Export unlocks once every item is resolved.</p>`,
    `</section>`,
  );
  return parts.join("");
}

/** Post-completion screen: agreement per judge plus the full labeled rows. */
export function renderExportView(rows: ExportRow[], report: KappaReport): string {
  const kappaLines = Object.entries(report)
    .map(
      ([judge, stats]) =>
        `<li data-role="kappa" data-judge="${escapeHtml(judge)}">` +
        `${escapeHtml(judge)}: kappa=${stats.kappa.toFixed(3)} (n=${stats.n_items})</li>`,
    )
    .join("");
  const body = rows
    .map(
      (row) =>
        `<tr><td>${escapeHtml(row.pair_id)}</td>` +
        `<td>${row.final_label ? "yes" : "no"}</td>` +
        `<td>${row.llm_label ? "yes" : "no"}</td>` +
        `<td>${escapeHtml(row.status)}</td></tr>`,
    )
    .join("");
  return [
    `<section data-role="export">`,
    `<ul>${kappaLines}</ul>`,
    `<table><tr><th>pair</th><th>human</th><th>model</th><th>status</th></tr>`,
    body,
    `</table></section>`,
  ].join("");
}

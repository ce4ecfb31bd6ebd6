// DOM rendering: one render function per view kind, writing into #app.
// All state lives in the controller; the DOM is rebuilt on every change.

import { Snapshot } from "./api.js";
import { GameController, RATING_KEYS, RatingKey, View } from "./state.js";

function esc(text: string): string {
  const div = document.createElement("div");
  div.textContent = text;
  return div.innerHTML;
}

function chatHtml(snapshot: Snapshot): string {
  const rows = snapshot.transcript
    .map(
      (r) =>
        `<div class="msg bot">${esc(r.q)}?</div><div class="msg human">${esc(r.a)}</div>`,
    )
    .join("");
  const pending = snapshot.question
    ? `<div class="msg bot pending">${esc(snapshot.question)}?</div>`
    : "";
  return rows + pending;
}

function gridHtml(snapshot: Snapshot, highlight?: number): string {
  return snapshot.pool
    .map((entry) => {
      const cls = entry.id === highlight ? "tile guessed" : "tile";
      return `<div class="${cls}" data-id="${entry.id}">${entry.svg}</div>`;
    })
    .join("");
}

function gameBoardHtml(snapshot: Snapshot, highlight?: number): string {
  return `
    <div class="board">
      <div class="panel target-panel">
        <h3>target (only you see it)</h3>
        <div class="target-glyph">${snapshot.target.svg}</div>
        <p class="caption">caption given to the bot: <em>${esc(snapshot.caption)}</em></p>
        <p class="round">round ${snapshot.round} / ${snapshot.rounds_total}</p>
      </div>
      <div class="panel chat-panel">
        <h3>conversation</h3>
        <div class="chat" id="chat">${chatHtml(snapshot)}</div>
        <div id="controls"></div>
      </div>
      <div class="panel pool-panel">
        <h3>the bot guesses among these ${snapshot.pool.length}</h3>
        <div class="grid">${gridHtml(snapshot, highlight)}</div>
      </div>
    </div>`;
}

export function render(root: HTMLElement, view: View, controller: GameController): void {
  if (view.kind === "loading") {
    root.innerHTML = `<p class="status">loading…</p>`;
    return;
  }

  if (view.kind === "start") {
    const options = view.models.map((m) => `<option value="${esc(m)}">${esc(m)}</option>`).join("");
    root.innerHTML = `
      <div class="start">
        <h2>play the guessing game</h2>
        <p>You are the answerer. The bot sees a caption and 20 glyphs, asks you
           five questions about the hidden target, then guesses.</p>
        ${view.error ? `<p class="error">${esc(view.error)}</p>` : ""}
        <label>model
          <select id="model">${options}</select>
        </label>
        <button id="start" ${view.models.length === 0 ? "disabled" : ""}>start game</button>
      </div>`;
    root.querySelector<HTMLButtonElement>("#start")!.addEventListener("click", () => {
      const model = root.querySelector<HTMLSelectElement>("#model")!.value;
      void controller.start(model);
    });
    return;
  }

  if (view.kind === "game") {
    root.innerHTML = gameBoardHtml(view.snapshot);
    const controls = root.querySelector<HTMLDivElement>("#controls")!;
    controls.innerHTML = `
      ${view.error ? `<p class="error">${esc(view.error)}</p>` : ""}
      <form id="answer-form">
        <input id="answer" type="text" autocomplete="off"
               placeholder="answer the question…" ${view.busy ? "disabled" : ""}/>
        <button type="submit" ${view.busy ? "disabled" : ""}>send</button>
      </form>`;
    controls.querySelector<HTMLFormElement>("#answer-form")!.addEventListener("submit", (ev) => {
      ev.preventDefault();
      const input = controls.querySelector<HTMLInputElement>("#answer")!;
      void controller.send(input.value);
    });
    root.querySelector<HTMLInputElement>("#answer")?.focus();
    return;
  }

  if (view.kind === "rating") {
    const reveal = view.snapshot.reveal!;
    root.innerHTML = gameBoardHtml(view.snapshot, reveal.guess_id);
    const controls = root.querySelector<HTMLDivElement>("#controls")!;
    const banner = reveal.win
      ? `<p class="banner win">the bot guessed it!</p>`
      : `<p class="banner lose">the bot guessed image ${reveal.guess_id} — wrong.</p>`;
    const sliders = RATING_KEYS.map((key) => {
      const buttons = [1, 2, 3, 4, 5]
        .map((v) => {
          const active = controller.ratingValue(key as RatingKey) === v ? "active" : "";
          return `<button type="button" class="score ${active}" data-key="${key}" data-value="${v}">${v}</button>`;
        })
        .join("");
      return `<div class="criterion"><span>${key}</span><div class="scores">${buttons}</div></div>`;
    }).join("");
    controls.innerHTML = `
      ${banner}
      <div class="rating">
        <h4>rate the conversation (1–5)</h4>
        ${sliders}
        ${view.error ? `<p class="error">${esc(view.error)}</p>` : ""}
        <button id="submit-rating" ${view.busy || !controller.ratingComplete() ? "disabled" : ""}>
          submit rating
        </button>
      </div>`;
    controls.querySelectorAll<HTMLButtonElement>(".score").forEach((btn) => {
      btn.addEventListener("click", () => {
        controller.setRating(btn.dataset.key as RatingKey, Number(btn.dataset.value));
      });
    });
    controls.querySelector<HTMLButtonElement>("#submit-rating")!.addEventListener("click", () => {
      void controller.submitRating();
    });
    return;
  }

  if (view.kind === "done") {
    const reveal = view.snapshot.reveal;
    root.innerHTML = `
      <div class="done">
        <h2>thanks for playing!</h2>
        <p>${reveal && reveal.win ? "the bot won this one." : "the bot missed."}</p>
        <div class="summary">${chatHtml(view.snapshot)}</div>
        <button id="again">play again</button>
      </div>`;
    root.querySelector<HTMLButtonElement>("#again")!.addEventListener("click", () => {
      void controller.newGame();
    });
    return;
  }

  // compare view
  const bundle = view.bundle;
  const columns = bundle.transcripts
    .map((t) => {
      const rounds = t.rounds.map((r) => `<li>${esc(r.q)}?</li>`).join("");
      const chosen = view.chosen === t.key ? "chosen" : "";
      return `
        <div class="compare-col ${chosen}">
          <h4>conversation ${t.key}</h4>
          <ol>${rounds}</ol>
          <button class="pick" data-key="${t.key}" ${view.chosen || view.busy ? "disabled" : ""}>
            most relevant
          </button>
        </div>`;
    })
    .join("");
  root.innerHTML = `
    <div class="compare">
      <h2>which conversation fits the caption best?</h2>
      <p class="caption"><em>${esc(bundle.caption)}</em></p>
      ${view.error ? `<p class="error">${esc(view.error)}</p>` : ""}
      <div class="compare-row">${columns}</div>
      ${view.chosen ? `<p class="banner win">choice recorded — thank you!</p>` : ""}
    </div>`;
  root.querySelectorAll<HTMLButtonElement>(".pick").forEach((btn) => {
    btn.addEventListener("click", () => void controller.choose(btn.dataset.key!));
  });
}

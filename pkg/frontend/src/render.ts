/** DOM rendering for the operator console; idempotent full redraw. */

import { SessionController } from "./state.js";
import { decodePpm, toBmpDataUrl } from "./ppm.js";

function el(tag: string, cls: string, text?: string): HTMLElement {
  const node = document.createElement(tag);
  node.className = cls;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function render(view: SessionController, root: HTMLElement): void {
  root.innerHTML = "";

  if (view.errorMessage !== null) {
    const banner = el("div", "error-banner");
    banner.appendChild(el("span", "error-code", view.errorCode ?? ""));
    banner.appendChild(el("span", "error-detail", view.errorMessage));
    const dismiss = el("button", "error-dismiss", "dismiss") as HTMLButtonElement;
    dismiss.onclick = () => view.dismissError();
    banner.appendChild(dismiss);
    root.appendChild(banner);
  }

  const status = el("div", "status");
  status.appendChild(el("span", "session-id", view.sessionId ?? "no session"));
  status.appendChild(el("span", "session-state", view.state));
  status.appendChild(el("span", "session-round", `round ${view.round}`));
  root.appendChild(status);

  // round gallery
  const gallery = el("div", "gallery");
  const rounds = [...view.gallery.keys()].sort((a, b) => a - b);
  for (const round of rounds) {
    const entry = view.gallery.get(round)!;
    const cell = el("figure", "round-cell");
    cell.dataset.round = String(round);
    const img = document.createElement("img");
    img.className = "round-image";
    img.src = toBmpDataUrl(decodePpm(entry.ppm));
    cell.appendChild(img);
    cell.appendChild(el("figcaption", "round-caption", `round ${round}`));
    gallery.appendChild(cell);
  }
  root.appendChild(gallery);

  // feedback form: class picker from the lexicon-backed class list
  const form = el("form", "feedback-form");
  const picker = document.createElement("select");
  picker.className = "class-picker";
  for (const option of view.classes) {
    const opt = document.createElement("option");
    opt.value = String(option.id);
    opt.textContent = option.name;
    picker.appendChild(opt);
  }
  form.appendChild(picker);
  const sendLabel = el("button", "send-label", "send label") as HTMLButtonElement;
  sendLabel.type = "button";
  sendLabel.disabled = view.feedbackInFlight;
  sendLabel.onclick = () =>
    void view.submitFeedback({ type: "label", value: Number(picker.value) });
  form.appendChild(sendLabel);

  const textBox = document.createElement("input");
  textBox.className = "prompt-box";
  textBox.placeholder = "describe what matters, e.g. people on the street";
  form.appendChild(textBox);
  const sendText = el("button", "send-text", "send prompt") as HTMLButtonElement;
  sendText.type = "button";
  sendText.disabled = view.feedbackInFlight;
  sendText.onclick = () =>
    void view.submitFeedback({ type: "text", value: textBox.value });
  form.appendChild(sendText);
  root.appendChild(form);

  if (view.hint.length) {
    const hint = el("div", "lexicon-hint", `known terms: ${view.hint.join(", ")}`);
    root.appendChild(hint);
  }

  // ledger panel: every number comes from the gateway response
  const ledger = el("div", "ledger-panel");
  if (view.ledger) {
    ledger.appendChild(el("div", "raw-bytes", `raw ${view.ledger.raw_bytes} B`));
    ledger.appendChild(
      el("div", "semantic-bytes", `semantic ${view.ledger.semantic_bytes} B`),
    );
    ledger.appendChild(
      el("div", "feedback-bytes", `feedback ${view.ledger.feedback_bytes} B`),
    );
    const table = el("div", "ledger-entries");
    for (const entry of view.ledger.entries) {
      table.appendChild(
        el(
          "div",
          "ledger-entry",
          `r${entry.round} step${entry.step} ${entry.kind} ${entry.nbytes} B`,
        ),
      );
    }
    ledger.appendChild(table);
    const cr = el("div", "cr-value");
    cr.dataset.cr = view.ledger.cr === null ? "" : String(view.ledger.cr);
    cr.textContent = `CR ${view.ledger.cr === null ? "n/a" : view.ledger.cr}`;
    ledger.appendChild(cr);
  }
  root.appendChild(ledger);

  // compare panel: two rounds side by side with their ledger bytes
  const compare = el("div", "compare-panel");
  const available = rounds;
  if (available.length >= 1) {
    const pickers: HTMLSelectElement[] = [];
    for (const side of ["a", "b"]) {
      const sel = document.createElement("select");
      sel.className = `compare-pick-${side}`;
      for (const r of available) {
        const opt = document.createElement("option");
        opt.value = String(r);
        opt.textContent = `round ${r}`;
        sel.appendChild(opt);
      }
      pickers.push(sel);
      compare.appendChild(sel);
    }
    const go = el("button", "compare-go", "compare") as HTMLButtonElement;
    go.type = "button";
    go.onclick = () =>
      view.selectCompare(Number(pickers[0].value), Number(pickers[1].value));
    compare.appendChild(go);
  }
  if (view.compare) {
    const { a, b } = view.compare;
    for (const [side, round] of [
      ["a", a],
      ["b", b],
    ] as const) {
      const pane = el("figure", `compare-pane compare-${side}`);
      pane.dataset.round = String(round);
      const img = document.createElement("img");
      img.src = toBmpDataUrl(decodePpm(view.gallery.get(round)!.ppm));
      pane.appendChild(img);
      pane.appendChild(
        el("figcaption", "compare-bytes", `round ${round}: ${view.roundBytes(round)} B`),
      );
      compare.appendChild(pane);
    }
    compare.appendChild(
      el(
        "div",
        "compare-delta",
        `bytes delta ${view.roundBytes(b) - view.roundBytes(a)} B`,
      ),
    );
  }
  root.appendChild(compare);
}

import { Api } from "./api.js";
import { GameController, KeyValueStore } from "./state.js";
import { render } from "./ui.js";

function browserStore(): KeyValueStore {
  return {
    get: (k) => window.localStorage.getItem(k),
    set: (k, v) => window.localStorage.setItem(k, v),
    remove: (k) => window.localStorage.removeItem(k),
  };
}

const api = new Api("");
const controller = new GameController(api, browserStore());
const root = document.querySelector<HTMLElement>("#app")!;

controller.onChange((view) => render(root, view, controller));

function route(): void {
  const match = window.location.hash.match(/^#\/compare\/(\d+)$/);
  if (match) {
    void controller.openCompare(Number(match[1]));
  } else {
    void controller.boot();
  }
}

window.addEventListener("hashchange", route);
route();

// Session view-model. The client never computes game logic: after every
// mutation it refetches the authoritative snapshot and renders from that,
// so a page refresh lands on exactly the same view.

import { Api, ApiError, CompareBundle, Rating, Snapshot } from "./api.js";

export const RATING_KEYS = ["fluency", "relevance", "comprehension", "diversity"] as const;
export type RatingKey = (typeof RATING_KEYS)[number];

export type View =
  | { kind: "loading" }
  | { kind: "start"; models: string[]; error?: string }
  | { kind: "game"; snapshot: Snapshot; busy: boolean; error?: string }
  | {
      kind: "rating";
      snapshot: Snapshot;
      rating: Partial<Rating>;
      busy: boolean;
      error?: string;
    }
  | { kind: "done"; snapshot: Snapshot }
  | { kind: "compare"; bundle: CompareBundle; chosen?: string; busy: boolean; error?: string };

export interface KeyValueStore {
  get(key: string): string | null;
  set(key: string, value: string): void;
  remove(key: string): void;
}

export function memoryStore(): KeyValueStore {
  const data = new Map<string, string>();
  return {
    get: (k) => data.get(k) ?? null,
    set: (k, v) => void data.set(k, v),
    remove: (k) => void data.delete(k),
  };
}

const SESSION_KEY = "glyphguess.session";

export class GameController {
  view: View = { kind: "loading" };
  private listeners: Array<(v: View) => void> = [];

  constructor(
    private api: Api,
    private storage: KeyValueStore = memoryStore(),
  ) {}

  onChange(listener: (v: View) => void): void {
    this.listeners.push(listener);
  }

  private setView(view: View): void {
    this.view = view;
    for (const fn of this.listeners) fn(view);
  }

  private viewFor(snapshot: Snapshot, rating: Partial<Rating> = {}): View {
    if (snapshot.status === "active") return { kind: "game", snapshot, busy: false };
    if (snapshot.status === "awaiting_rating")
      return { kind: "rating", snapshot, rating, busy: false };
    return { kind: "done", snapshot };
  }

  /** Restore a stored session if one exists, else show the start screen. */
  async boot(): Promise<void> {
    const sessionId = this.storage.get(SESSION_KEY);
    if (sessionId) {
      try {
        const snapshot = await this.api.getGame(sessionId);
        this.setView(this.viewFor(snapshot));
        return;
      } catch {
        this.storage.remove(SESSION_KEY);
      }
    }
    await this.showStart();
  }

  async showStart(error?: string): Promise<void> {
    try {
      const health = await this.api.health();
      this.setView({ kind: "start", models: health.models, error });
    } catch (exc) {
      this.setView({ kind: "start", models: [], error: describe(exc) });
    }
  }

  async start(model: string): Promise<void> {
    try {
      const snapshot = await this.api.createGame(model);
      this.storage.set(SESSION_KEY, snapshot.id);
      this.setView(this.viewFor(snapshot));
    } catch (exc) {
      await this.showStart(describe(exc));
    }
  }

  /** Send one answer; blocked on empty text or while a request is in flight. */
  async send(text: string): Promise<void> {
    const view = this.view;
    if (view.kind !== "game" || view.busy) return;
    const trimmed = text.trim();
    if (!trimmed) {
      this.setView({ ...view, error: "type an answer first" });
      return;
    }
    this.setView({ ...view, busy: true, error: undefined });
    try {
      await this.api.answer(view.snapshot.id, trimmed);
      const snapshot = await this.api.getGame(view.snapshot.id);
      this.setView(this.viewFor(snapshot));
    } catch (exc) {
      if (exc instanceof ApiError && exc.status === 409) {
        const snapshot = await this.api.getGame(view.snapshot.id);
        this.setView(this.viewFor(snapshot));
        return;
      }
      this.setView({ ...view, busy: false, error: describe(exc) });
    }
  }

  setRating(key: RatingKey, value: number): void {
    if (this.view.kind !== "rating") return;
    this.setView({ ...this.view, rating: { ...this.view.rating, [key]: value } });
  }

  ratingComplete(): boolean {
    if (this.view.kind !== "rating") return false;
    const rating = this.view.rating;
    return RATING_KEYS.every((k) => rating[k] !== undefined);
  }

  ratingValue(key: RatingKey): number | undefined {
    return this.view.kind === "rating" ? this.view.rating[key] : undefined;
  }

  async submitRating(): Promise<void> {
    const view = this.view;
    if (view.kind !== "rating" || view.busy) return;
    if (!this.ratingComplete()) {
      this.setView({ ...view, error: "set all four criteria first" });
      return;
    }
    this.setView({ ...view, busy: true, error: undefined });
    try {
      await this.api.rate(view.snapshot.id, view.rating as Rating);
      const snapshot = await this.api.getGame(view.snapshot.id);
      this.storage.remove(SESSION_KEY);
      this.setView({ kind: "done", snapshot });
    } catch (exc) {
      this.setView({ ...view, busy: false, error: describe(exc) });
    }
  }

  async newGame(): Promise<void> {
    this.storage.remove(SESSION_KEY);
    await this.showStart();
  }

  async openCompare(seed: number): Promise<void> {
    try {
      const bundle = await this.api.compare(seed);
      this.setView({ kind: "compare", bundle, busy: false });
    } catch (exc) {
      this.setView({ kind: "start", models: [], error: describe(exc) });
    }
  }

  async choose(key: string): Promise<void> {
    const view = this.view;
    if (view.kind !== "compare" || view.busy || view.chosen) return;
    this.setView({ ...view, busy: true });
    try {
      await this.api.choose(view.bundle.seed, key);
      this.setView({ ...view, busy: false, chosen: key });
    } catch (exc) {
      this.setView({ ...view, busy: false, error: describe(exc) });
    }
  }
}

function describe(exc: unknown): string {
  if (exc instanceof ApiError) return `${exc.status}: ${exc.message}`;
  return exc instanceof Error ? exc.message : String(exc);
}

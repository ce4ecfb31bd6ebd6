// Typed client for the game service. Every method maps 1:1 onto an
// endpoint; no game logic lives here.

export interface PoolEntry {
  id: number;
  svg: string;
}

export interface Rating {
  fluency: number;
  relevance: number;
  comprehension: number;
  diversity: number;
}

export type SessionStatus = "active" | "awaiting_rating" | "finished";

export interface Snapshot {
  id: string;
  model: string;
  status: SessionStatus;
  round: number;
  rounds_total: number;
  caption: string;
  target: PoolEntry;
  pool: PoolEntry[];
  transcript: { q: string; a: string }[];
  question: string | null;
  reveal?: { guess_id: number; win: boolean };
  rating?: Rating;
}

export type AnswerResult =
  | { question: string; round: number }
  | { reveal: { guess_id: number; win: boolean } };

export interface CompareBundle {
  seed: number;
  caption: string;
  transcripts: { key: string; rounds: { q: string; a: string }[] }[];
}

export class ApiError extends Error {
  constructor(
    public status: number,
    message: string,
  ) {
    super(message);
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class Api {
  constructor(
    private base: string = "",
    private fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await this.fetchFn(this.base + path, init);
    if (!res.ok) {
      let detail = res.statusText;
      try {
        const body = await res.json();
        if (body && body.detail) detail = String(body.detail);
      } catch {
        // non-JSON error body; keep statusText
      }
      throw new ApiError(res.status, detail);
    }
    if (res.status === 204) return undefined as T;
    return (await res.json()) as T;
  }

  private post<T>(path: string, body: unknown): Promise<T> {
    return this.request<T>(path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  health(): Promise<{ models: string[]; status: string }> {
    return this.request("/health");
  }

  createGame(model: string, seed?: number): Promise<Snapshot> {
    return this.post("/games", seed === undefined ? { model } : { model, seed });
  }

  getGame(id: string): Promise<Snapshot> {
    return this.request(`/games/${id}`);
  }

  answer(id: string, text: string): Promise<AnswerResult> {
    return this.post(`/games/${id}/answer`, { text });
  }

  rate(id: string, rating: Rating): Promise<void> {
    return this.post(`/games/${id}/rating`, rating);
  }

  compare(seed: number): Promise<CompareBundle> {
    return this.request(`/compare/${seed}`);
  }

  choose(seed: number, key: string): Promise<void> {
    return this.post(`/compare/${seed}/choice`, { model: key });
  }

  async exportLog(): Promise<string> {
    const res = await this.fetchFn(this.base + "/export");
    if (!res.ok) throw new ApiError(res.status, res.statusText);
    return res.text();
  }
}

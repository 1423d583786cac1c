// Typed client for the generation service. Every call goes through the
// injected fetch so tests can swap in a mock server.

export interface VocabularyInfo {
  version: string;
  categories: string[];
  predicates: string[];
}

export interface NodeView {
  id: number;
  category: string;
  generated: boolean;
}

export interface EdgeView {
  s: number;
  p: string;
  o: number;
}

export interface SessionView {
  session_id: string;
  seed: number;
  step_count: number;
  nodes: NodeView[];
  edges: EdgeView[];
  pending_node_ids: number[];
}

export interface StepResult {
  step_index: number;
  new_node_ids: number[];
  image_url: string;
}

export interface GraphEdit {
  add_nodes: { id: number; category: string }[];
  add_edges: EdgeView[];
  remove_nodes: number[];
}

export interface ErrorPayload {
  code: string;
  message: string;
  detail?: string | null;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
  ) {
    super(message);
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

async function asError(response: Response): Promise<ApiError> {
  let payload: ErrorPayload | null = null;
  try {
    payload = (await response.json()) as ErrorPayload;
  } catch {
    // non-JSON body, fall through to a generic error
  }
  return new ApiError(
    response.status,
    payload?.code ?? 'http_error',
    payload?.message ?? `request failed with status ${response.status}`,
  );
}

export class ApiClient {
  constructor(
    public baseUrl: string,
    private fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {
    this.baseUrl = baseUrl.replace(/\/$/, '');
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchFn(`${this.baseUrl}${path}`, init);
    if (!response.ok) {
      throw await asError(response);
    }
    return (await response.json()) as T;
  }

  private post<T>(path: string, body: unknown): Promise<T> {
    return this.request<T>(path, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify(body),
    });
  }

  vocabulary(): Promise<VocabularyInfo> {
    return this.request<VocabularyInfo>('/v1/vocabulary');
  }

  // Creation only returns an id; the full view comes from a follow-up read.
  async createSession(seed?: number): Promise<SessionView> {
    const created = await this.post<{ session_id: string }>(
      '/v1/sessions',
      seed === undefined ? {} : { seed },
    );
    return this.getSession(created.session_id);
  }

  getSession(sessionId: string): Promise<SessionView> {
    return this.request<SessionView>(`/v1/sessions/${sessionId}`);
  }

  editGraph(sessionId: string, edit: GraphEdit): Promise<SessionView> {
    return this.post<SessionView>(`/v1/sessions/${sessionId}/graph`, edit);
  }

  step(sessionId: string): Promise<StepResult> {
    return this.post<StepResult>(`/v1/sessions/${sessionId}/step`, {});
  }

  imageUrl(relative: string): string {
    return `${this.baseUrl}${relative}`;
  }
}

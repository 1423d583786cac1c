// In-memory stand-in for the generation service, answering through a
// fetch-shaped function. Mirrors the documented status codes and error
// payloads so the store can be tested without a backend.

import { FetchLike } from '../src/api.js';

const CATEGORIES = [
  'red square', 'red circle', 'red triangle',
  'green square', 'green circle', 'green triangle',
  'blue square', 'blue circle', 'blue triangle',
  'yellow square', 'yellow circle', 'yellow triangle',
];
const PREDICATES = ['left of', 'right of', 'above', 'below', 'inside', 'surrounding'];

interface MockSession {
  seed: number;
  stepCount: number;
  nodes: { id: number; category: string; generated: boolean }[];
  edges: { s: number; p: string; o: number }[];
  stepping: boolean;
}

function json(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { 'content-type': 'application/json' },
  });
}

function errorBody(status: number, code: string, message: string): Response {
  return json(status, { code, message, detail: null });
}

export class MockServer {
  sessions = new Map<string, MockSession>();
  calls: { method: string; path: string }[] = [];
  offline = false;
  // when set, the step handler waits on it before answering, so tests can
  // hold a step in flight
  stepGate: Promise<void> | null = null;

  private nextSession = 0;

  fetch: FetchLike = async (url, init) => {
    const method = init?.method ?? 'GET';
    const path = new URL(url).pathname;
    this.calls.push({ method, path });
    if (this.offline) {
      throw new TypeError('fetch failed');
    }
    return this.route(method, path, init?.body ? JSON.parse(String(init.body)) : null);
  };

  callsTo(path: string): number {
    return this.calls.filter((c) => c.path.endsWith(path)).length;
  }

  private view(sid: string): Record<string, unknown> {
    const s = this.sessions.get(sid)!;
    return {
      session_id: sid,
      seed: s.seed,
      step_count: s.stepCount,
      nodes: s.nodes.map((n) => ({ ...n })),
      edges: s.edges.map((e) => ({ ...e })),
      pending_node_ids: s.nodes.filter((n) => !n.generated).map((n) => n.id),
    };
  }

  private async route(method: string, path: string, body: any): Promise<Response> {
    if (method === 'GET' && path === '/v1/vocabulary') {
      return json(200, {
        version: 'synth-shapes-v1',
        categories: CATEGORIES,
        predicates: PREDICATES,
      });
    }
    if (method === 'POST' && path === '/v1/sessions') {
      const sid = `mock-${this.nextSession++}`;
      this.sessions.set(sid, {
        seed: body?.seed ?? 0,
        stepCount: 0,
        nodes: [],
        edges: [],
        stepping: false,
      });
      // The real service answers creation with just the id; clients read the
      // full view back with a GET.
      return json(201, { session_id: sid });
    }

    const match = path.match(/^\/v1\/sessions\/([^/]+)(\/graph|\/step)?$/);
    if (!match) {
      return errorBody(404, 'not_found', `no route for ${path}`);
    }
    const sid = match[1];
    const session = this.sessions.get(sid);
    if (!session) {
      return errorBody(404, 'unknown_session', `no session ${sid}`);
    }

    if (method === 'GET' && !match[2]) {
      return json(200, this.view(sid));
    }

    if (method === 'POST' && match[2] === '/graph') {
      return this.editGraph(sid, session, body);
    }

    if (method === 'POST' && match[2] === '/step') {
      return this.step(sid, session);
    }

    return errorBody(404, 'not_found', `no route for ${method} ${path}`);
  }

  private editGraph(sid: string, session: MockSession, body: any): Response {
    const addNodes = body?.add_nodes ?? [];
    const addEdges = body?.add_edges ?? [];
    const removeNodes = body?.remove_nodes ?? [];

    for (const id of removeNodes) {
      const node = session.nodes.find((n) => n.id === id);
      if (!node) {
        return errorBody(422, 'validation_error', `unknown node ${id}`);
      }
      if (node.generated) {
        return errorBody(409, 'conflict', `node ${id} is generated and cannot be removed`);
      }
    }
    for (const n of addNodes) {
      if (!CATEGORIES.includes(n.category)) {
        return errorBody(422, 'validation_error', `unknown category ${n.category}`);
      }
      if (session.nodes.some((x) => x.id === n.id) || addNodes.filter((x: any) => x.id === n.id).length > 1) {
        return errorBody(400, 'invalid_edit', `duplicate node id ${n.id}`);
      }
    }
    const ids = new Set([
      ...session.nodes.map((n) => n.id),
      ...addNodes.map((n: any) => n.id),
    ]);
    for (const e of addEdges) {
      if (!PREDICATES.includes(e.p)) {
        return errorBody(422, 'validation_error', `unknown predicate ${e.p}`);
      }
      if (!ids.has(e.s) || !ids.has(e.o)) {
        return errorBody(400, 'invalid_edit', `edge endpoint missing: ${e.s} -> ${e.o}`);
      }
    }

    for (const id of removeNodes) {
      session.nodes = session.nodes.filter((n) => n.id !== id);
      session.edges = session.edges.filter((e) => e.s !== id && e.o !== id);
    }
    for (const n of addNodes) {
      session.nodes.push({ id: n.id, category: n.category, generated: false });
    }
    for (const e of addEdges) {
      session.edges.push({ s: e.s, p: e.p, o: e.o });
    }
    return json(200, this.view(sid));
  }

  private async step(sid: string, session: MockSession): Promise<Response> {
    if (session.stepping) {
      return errorBody(409, 'step_in_flight', 'a step is already running for this session');
    }
    const pending = session.nodes.filter((n) => !n.generated);
    if (pending.length === 0) {
      return errorBody(409, 'no_pending_nodes', 'every node is already generated; add nodes first');
    }
    session.stepping = true;
    try {
      if (this.stepGate) {
        await this.stepGate;
      }
      const index = session.stepCount;
      for (const n of pending) n.generated = true;
      session.stepCount += 1;
      return json(200, {
        step_index: index,
        new_node_ids: pending.map((n) => n.id),
        image_url: `/v1/sessions/${sid}/images/${index}`,
      });
    } finally {
      session.stepping = false;
    }
  }
}

// Client-side session state. The rules here mirror the service contract:
// one step in flight per session, generated nodes immutable, and the graph
// view the user sees is always either the last server-acknowledged state or
// an optimistic overlay that survives only until the server answers.

import {
  ApiClient,
  ApiError,
  GraphEdit,
  SessionView,
  StepResult,
} from './api.js';

export type GraphAction =
  | { kind: 'add-node'; id: number; category: string }
  | { kind: 'add-edge'; s: number; p: string; o: number }
  | { kind: 'remove-node'; id: number };

export interface StepCard {
  index: number;
  url: string;
  newNodeIds: number[];
}

export interface Banner {
  kind: 'error' | 'conflict' | 'offline' | 'session-lost';
  message: string;
}

export type StepRefusal = 'in-flight' | 'no-pending' | null;

function cloneView(view: SessionView): SessionView {
  return {
    session_id: view.session_id,
    seed: view.seed,
    step_count: view.step_count,
    nodes: view.nodes.map((n) => ({ ...n })),
    edges: view.edges.map((e) => ({ ...e })),
    pending_node_ids: [...view.pending_node_ids],
  };
}

// Applies actions that already passed the guards. Pure so rollback is just
// "forget the overlay".
function applyActions(view: SessionView, actions: GraphAction[]): SessionView {
  const next = cloneView(view);
  for (const action of actions) {
    if (action.kind === 'add-node') {
      next.nodes.push({ id: action.id, category: action.category, generated: false });
      next.pending_node_ids.push(action.id);
    } else if (action.kind === 'add-edge') {
      next.edges.push({ s: action.s, p: action.p, o: action.o });
    } else {
      next.nodes = next.nodes.filter((n) => n.id !== action.id);
      next.edges = next.edges.filter((e) => e.s !== action.id && e.o !== action.id);
      next.pending_node_ids = next.pending_node_ids.filter((id) => id !== action.id);
    }
  }
  return next;
}

function toGraphEdit(actions: GraphAction[]): GraphEdit {
  const edit: GraphEdit = { add_nodes: [], add_edges: [], remove_nodes: [] };
  for (const action of actions) {
    if (action.kind === 'add-node') {
      edit.add_nodes.push({ id: action.id, category: action.category });
    } else if (action.kind === 'add-edge') {
      edit.add_edges.push({ s: action.s, p: action.p, o: action.o });
    } else {
      edit.remove_nodes.push(action.id);
    }
  }
  return edit;
}

export class SessionStore {
  private acked: SessionView | null = null;
  private optimistic: SessionView | null = null;
  private queued: GraphAction[] = [];
  private editInFlight = false;
  private _stepInFlight = false;
  private listeners: Array<() => void> = [];

  strip: StepCard[] = [];
  banner: Banner | null = null;
  sessionLost = false;
  lastHighlight: number[] = [];

  constructor(private api: ApiClient) {}

  subscribe(listener: () => void): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private emit(): void {
    for (const listener of this.listeners) listener();
  }

  get stepInFlight(): boolean {
    return this._stepInFlight;
  }

  get editPending(): boolean {
    return this.editInFlight;
  }

  view(): SessionView | null {
    return this.optimistic ?? this.acked;
  }

  async create(seed?: number): Promise<void> {
    this.acked = await this.api.createSession(seed);
    this.optimistic = null;
    this.strip = [];
    this.sessionLost = false;
    this.banner = null;
    this.emit();
  }

  async resume(sessionId: string): Promise<void> {
    try {
      this.acked = await this.api.getSession(sessionId);
      this.sessionLost = false;
      this.banner = null;
    } catch (err) {
      this.fail(err);
    }
    this.emit();
  }

  clearBanner(): void {
    this.banner = null;
    this.emit();
  }

  // Drops actions that would be rejected for sure (generated nodes are
  // immutable) and actions that change nothing, so a double-submitted batch
  // collapses to a single server call.
  private effectiveActions(actions: GraphAction[]): GraphAction[] {
    const view = this.view();
    if (!view) return [];
    const kept: GraphAction[] = [];
    let working = view;
    for (const action of actions) {
      if (action.kind === 'remove-node') {
        const node = working.nodes.find((n) => n.id === action.id);
        if (!node) continue;
        if (node.generated) {
          this.banner = {
            kind: 'conflict',
            message: `node ${action.id} is already generated and cannot be removed`,
          };
          continue;
        }
      } else if (action.kind === 'add-node') {
        if (working.nodes.some((n) => n.id === action.id)) continue;
      } else {
        const dup = working.edges.some(
          (e) => e.s === action.s && e.p === action.p && e.o === action.o,
        );
        if (dup) continue;
      }
      kept.push(action);
      working = applyActions(working, [action]);
    }
    return kept;
  }

  edit(actions: GraphAction[]): void {
    if (!this.acked || this.sessionLost) return;
    const effective = this.effectiveActions(actions);
    if (effective.length === 0) {
      this.emit(); // a guard may have set a banner
      return;
    }
    this.optimistic = applyActions(this.view()!, effective);
    if (this.editInFlight) {
      this.queued.push(...effective);
    } else {
      void this.sendEdit(effective);
    }
    this.emit();
  }

  private async sendEdit(actions: GraphAction[]): Promise<void> {
    this.editInFlight = true;
    try {
      const acked = await this.api.editGraph(this.acked!.session_id, toGraphEdit(actions));
      this.acked = acked;
      if (this.queued.length > 0) {
        const next = this.queued;
        this.queued = [];
        await this.sendEdit(next);
        return;
      }
      this.optimistic = null;
      this.editInFlight = false;
    } catch (err) {
      // Roll back: the overlay and anything queued behind it are discarded,
      // leaving exactly the last acknowledged state on screen.
      this.optimistic = null;
      this.queued = [];
      this.editInFlight = false;
      this.fail(err);
    }
    this.emit();
  }

  stepRefusal(): StepRefusal {
    if (this._stepInFlight) return 'in-flight';
    const view = this.view();
    if (!view || view.pending_node_ids.length === 0) return 'no-pending';
    return null;
  }

  async step(): Promise<StepResult | null> {
    if (this.stepRefusal() !== null || this.sessionLost) return null;
    this._stepInFlight = true;
    this.emit();
    try {
      const result = await this.api.step(this.acked!.session_id);
      this.strip.push({
        index: result.step_index,
        url: this.api.imageUrl(result.image_url),
        newNodeIds: [...result.new_node_ids],
      });
      this.lastHighlight = [...result.new_node_ids];
      this.acked = await this.api.getSession(this.acked!.session_id);
      return result;
    } catch (err) {
      this.fail(err);
      return null;
    } finally {
      this._stepInFlight = false;
      this.emit();
    }
  }

  private fail(err: unknown): void {
    if (err instanceof ApiError) {
      if (err.status === 404 && err.code === 'unknown_session') {
        this.sessionLost = true;
        this.banner = {
          kind: 'session-lost',
          message: 'this session no longer exists on the server',
        };
      } else {
        this.banner = {
          kind: err.status === 409 ? 'conflict' : 'error',
          message: err.message,
        };
      }
    } else {
      this.banner = {
        kind: 'offline',
        message: 'the server did not answer; check the connection and retry',
      };
    }
  }
}

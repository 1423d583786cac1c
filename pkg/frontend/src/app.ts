// Wires the store, the graph view, and the DOM controls together. One
// instance per page.

import { ApiClient, VocabularyInfo } from './api.js';
import { GraphView } from './graph-view.js';
import { SessionStore } from './store.js';

export interface AppOptions {
  serverUrl: string;
  seed?: number;
}

export class EditorApp {
  private api: ApiClient;
  private store: SessionStore;
  private vocabulary: VocabularyInfo | null = null;
  private graph!: GraphView;

  private banner!: HTMLDivElement;
  private sessionLabel!: HTMLSpanElement;
  private categorySelect!: HTMLSelectElement;
  private predicateSelect!: HTMLSelectElement;
  private subjectSelect!: HTMLSelectElement;
  private objectSelect!: HTMLSelectElement;
  private stepButton!: HTMLButtonElement;
  private stepHint!: HTMLSpanElement;
  private strip!: HTMLDivElement;

  constructor(
    private root: HTMLElement,
    private options: AppOptions,
  ) {
    this.api = new ApiClient(options.serverUrl);
    this.store = new SessionStore(this.api);
    this.buildDom();
    this.store.subscribe(() => this.renderState());
  }

  async start(): Promise<void> {
    try {
      this.vocabulary = await this.api.vocabulary();
      this.fillPalettes();
      await this.store.create(this.options.seed);
    } catch {
      this.showRetryBanner();
    }
  }

  private buildDom(): void {
    this.root.innerHTML = `
      <header>
        <h1>scene builder</h1>
        <span class="session-label"></span>
        <button class="new-session">new session</button>
      </header>
      <div class="banner" hidden></div>
      <div class="workspace">
        <aside class="palette">
          <label>object
            <select class="category"></select>
          </label>
          <button class="add-node">add node</button>
          <hr>
          <label>subject <select class="subject"></select></label>
          <label>relation <select class="predicate"></select></label>
          <label>object <select class="object"></select></label>
          <button class="add-edge">add edge</button>
          <hr>
          <button class="step">generate step</button>
          <span class="step-hint"></span>
        </aside>
        <svg class="graph" width="640" height="420"></svg>
      </div>
      <div class="strip"></div>
    `;
    this.banner = this.root.querySelector('.banner')!;
    this.sessionLabel = this.root.querySelector('.session-label')!;
    this.categorySelect = this.root.querySelector('.category')!;
    this.predicateSelect = this.root.querySelector('.predicate')!;
    this.subjectSelect = this.root.querySelector('.subject')!;
    this.objectSelect = this.root.querySelector('.object')!;
    this.stepButton = this.root.querySelector('.step')!;
    this.stepHint = this.root.querySelector('.step-hint')!;
    this.strip = this.root.querySelector('.strip')!;

    this.graph = new GraphView(this.root.querySelector('.graph')!, (id) =>
      this.store.edit([{ kind: 'remove-node', id }]),
    );

    this.root.querySelector('.add-node')!.addEventListener('click', () => {
      const view = this.store.view();
      if (!view || !this.categorySelect.value) return;
      const nextId = view.nodes.reduce((m, n) => Math.max(m, n.id + 1), 0);
      this.store.edit([
        { kind: 'add-node', id: nextId, category: this.categorySelect.value },
      ]);
    });

    this.root.querySelector('.add-edge')!.addEventListener('click', () => {
      const s = Number(this.subjectSelect.value);
      const o = Number(this.objectSelect.value);
      const p = this.predicateSelect.value;
      if (Number.isNaN(s) || Number.isNaN(o) || !p || s === o) return;
      this.store.edit([{ kind: 'add-edge', s, p, o }]);
    });

    this.stepButton.addEventListener('click', () => void this.store.step());

    this.root.querySelector('.new-session')!.addEventListener('click', () => {
      void this.store.create(this.options.seed).catch(() => this.showRetryBanner());
    });
  }

  private fillPalettes(): void {
    if (!this.vocabulary) return;
    this.categorySelect.innerHTML = this.vocabulary.categories
      .map((c) => `<option value="${c}">${c}</option>`)
      .join('');
    this.predicateSelect.innerHTML = this.vocabulary.predicates
      .map((p) => `<option value="${p}">${p}</option>`)
      .join('');
  }

  private showRetryBanner(): void {
    this.banner.hidden = false;
    this.banner.className = 'banner offline';
    this.banner.textContent = 'cannot reach the generation server ';
    const retry = document.createElement('button');
    retry.textContent = 'retry';
    retry.addEventListener('click', () => {
      this.banner.hidden = true;
      void this.start();
    });
    this.banner.appendChild(retry);
  }

  private renderState(): void {
    const view = this.store.view();

    if (this.store.banner) {
      this.banner.hidden = false;
      this.banner.className = `banner ${this.store.banner.kind}`;
      this.banner.textContent = this.store.banner.message + ' ';
      if (this.store.banner.kind === 'session-lost') {
        const recreate = document.createElement('button');
        recreate.textContent = 'start a new session';
        recreate.addEventListener('click', () => {
          void this.store.create(this.options.seed).catch(() => this.showRetryBanner());
        });
        this.banner.appendChild(recreate);
      } else {
        const dismiss = document.createElement('button');
        dismiss.textContent = 'dismiss';
        dismiss.addEventListener('click', () => this.store.clearBanner());
        this.banner.appendChild(dismiss);
      }
    } else {
      this.banner.hidden = true;
    }

    if (!view) return;
    this.sessionLabel.textContent = `session ${view.session_id} seed ${view.seed}`;

    const options = view.nodes
      .map((n) => `<option value="${n.id}">${n.id}: ${n.category}</option>`)
      .join('');
    if (this.subjectSelect.innerHTML !== options) {
      this.subjectSelect.innerHTML = options;
      this.objectSelect.innerHTML = options;
    }

    const refusal = this.store.stepRefusal();
    this.stepButton.disabled = refusal !== null;
    this.stepHint.textContent =
      refusal === 'no-pending'
        ? 'add nodes first'
        : refusal === 'in-flight'
          ? 'generating...'
          : '';

    this.graph.render(view, this.store.lastHighlight);

    this.strip.innerHTML = '';
    for (const card of this.store.strip) {
      const el = document.createElement('figure');
      el.className = 'card';
      el.innerHTML =
        `<img src="${card.url}" width="128" height="128" alt="step ${card.index}">` +
        `<figcaption>step ${card.index} (+${card.newNodeIds.join(', +')})</figcaption>`;
      this.strip.appendChild(el);
    }
  }
}

// SVG node-link rendering with a small force layout. Positions live only in
// the browser; the server never sees them. Dragging a node pins it.

import { SessionView } from './api.js';

interface NodePosition {
  x: number;
  y: number;
  pinned: boolean;
}

const NODE_RADIUS = 26;

export class GraphView {
  private positions = new Map<number, NodePosition>();
  private dragging: { id: number; offsetX: number; offsetY: number } | null = null;
  private lastView: SessionView | null = null;
  private highlight: number[] = [];

  constructor(
    private svg: SVGSVGElement,
    private onRemoveNode: (id: number) => void,
  ) {
    svg.addEventListener('pointermove', (ev) => this.onPointerMove(ev));
    svg.addEventListener('pointerup', () => (this.dragging = null));
    svg.addEventListener('pointerleave', () => (this.dragging = null));
  }

  render(view: SessionView, highlight: number[]): void {
    this.lastView = view;
    this.highlight = highlight;
    this.ensurePositions(view);
    this.runLayout(view, 60);
    this.draw(view);
  }

  private size(): { w: number; h: number } {
    const rect = this.svg.getBoundingClientRect();
    return { w: rect.width || 640, h: rect.height || 420 };
  }

  private ensurePositions(view: SessionView): void {
    const { w, h } = this.size();
    const known = new Set(view.nodes.map((n) => n.id));
    for (const id of [...this.positions.keys()]) {
      if (!known.has(id)) this.positions.delete(id);
    }
    view.nodes.forEach((node, i) => {
      if (!this.positions.has(node.id)) {
        // new nodes enter on a circle so the first layout has no overlaps
        const angle = (i / Math.max(view.nodes.length, 1)) * 2 * Math.PI;
        this.positions.set(node.id, {
          x: w / 2 + Math.cos(angle) * Math.min(w, h) / 4,
          y: h / 2 + Math.sin(angle) * Math.min(w, h) / 4,
          pinned: false,
        });
      }
    });
  }

  private runLayout(view: SessionView, ticks: number): void {
    const { w, h } = this.size();
    const ids = view.nodes.map((n) => n.id);
    for (let t = 0; t < ticks; t++) {
      const force = new Map(ids.map((id) => [id, { fx: 0, fy: 0 }]));
      for (let i = 0; i < ids.length; i++) {
        for (let j = i + 1; j < ids.length; j++) {
          const a = this.positions.get(ids[i])!;
          const b = this.positions.get(ids[j])!;
          const dx = a.x - b.x;
          const dy = a.y - b.y;
          const d2 = Math.max(dx * dx + dy * dy, 25);
          const push = 9000 / d2;
          const d = Math.sqrt(d2);
          force.get(ids[i])!.fx += (dx / d) * push;
          force.get(ids[i])!.fy += (dy / d) * push;
          force.get(ids[j])!.fx -= (dx / d) * push;
          force.get(ids[j])!.fy -= (dy / d) * push;
        }
      }
      for (const edge of view.edges) {
        const a = this.positions.get(edge.s);
        const b = this.positions.get(edge.o);
        if (!a || !b) continue;
        const dx = b.x - a.x;
        const dy = b.y - a.y;
        const d = Math.max(Math.sqrt(dx * dx + dy * dy), 1);
        const pull = (d - 130) * 0.02;
        force.get(edge.s)!.fx += (dx / d) * pull;
        force.get(edge.s)!.fy += (dy / d) * pull;
        force.get(edge.o)!.fx -= (dx / d) * pull;
        force.get(edge.o)!.fy -= (dy / d) * pull;
      }
      for (const id of ids) {
        const pos = this.positions.get(id)!;
        if (pos.pinned) continue;
        const f = force.get(id)!;
        f.fx += (w / 2 - pos.x) * 0.005;
        f.fy += (h / 2 - pos.y) * 0.005;
        pos.x = Math.min(Math.max(pos.x + f.fx, NODE_RADIUS), w - NODE_RADIUS);
        pos.y = Math.min(Math.max(pos.y + f.fy, NODE_RADIUS), h - NODE_RADIUS);
      }
    }
  }

  private draw(view: SessionView): void {
    const ns = 'http://www.w3.org/2000/svg';
    this.svg.textContent = '';

    const defs = document.createElementNS(ns, 'defs');
    defs.innerHTML =
      '<marker id="arrow" viewBox="0 0 10 10" refX="9" refY="5" ' +
      'markerWidth="7" markerHeight="7" orient="auto-start-reverse">' +
      '<path d="M 0 0 L 10 5 L 0 10 z" fill="#7a7a7a"/></marker>';
    this.svg.appendChild(defs);

    for (const edge of view.edges) {
      const a = this.positions.get(edge.s);
      const b = this.positions.get(edge.o);
      if (!a || !b) continue;
      const dx = b.x - a.x;
      const dy = b.y - a.y;
      const d = Math.max(Math.sqrt(dx * dx + dy * dy), 1);
      const x1 = a.x + (dx / d) * NODE_RADIUS;
      const y1 = a.y + (dy / d) * NODE_RADIUS;
      const x2 = b.x - (dx / d) * (NODE_RADIUS + 4);
      const y2 = b.y - (dy / d) * (NODE_RADIUS + 4);
      const line = document.createElementNS(ns, 'line');
      line.setAttribute('x1', String(x1));
      line.setAttribute('y1', String(y1));
      line.setAttribute('x2', String(x2));
      line.setAttribute('y2', String(y2));
      line.setAttribute('class', 'edge');
      line.setAttribute('marker-end', 'url(#arrow)');
      this.svg.appendChild(line);

      const label = document.createElementNS(ns, 'text');
      label.setAttribute('x', String((a.x + b.x) / 2));
      label.setAttribute('y', String((a.y + b.y) / 2 - 6));
      label.setAttribute('class', 'edge-label');
      label.textContent = edge.p;
      this.svg.appendChild(label);
    }

    for (const node of view.nodes) {
      const pos = this.positions.get(node.id)!;
      const group = document.createElementNS(ns, 'g');
      group.setAttribute('transform', `translate(${pos.x},${pos.y})`);
      group.setAttribute(
        'class',
        'node ' +
          (node.generated ? 'generated' : 'pending') +
          (this.highlight.includes(node.id) ? ' highlight' : ''),
      );
      group.setAttribute('data-node-id', String(node.id));

      const circle = document.createElementNS(ns, 'circle');
      circle.setAttribute('r', String(NODE_RADIUS));
      group.appendChild(circle);

      const name = document.createElementNS(ns, 'text');
      name.setAttribute('class', 'node-label');
      name.setAttribute('y', '4');
      name.textContent = `${node.id}: ${node.category}`;
      group.appendChild(name);

      if (node.generated) {
        const lock = document.createElementNS(ns, 'text');
        lock.setAttribute('class', 'lock');
        lock.setAttribute('y', String(-NODE_RADIUS - 6));
        lock.textContent = '\u{1F512}';
        group.appendChild(lock);
      } else {
        // only pending nodes get a remove affordance
        const remove = document.createElementNS(ns, 'g');
        remove.setAttribute('class', 'remove');
        remove.setAttribute('transform', `translate(${NODE_RADIUS - 4},${-NODE_RADIUS + 4})`);
        const dot = document.createElementNS(ns, 'circle');
        dot.setAttribute('r', '8');
        const cross = document.createElementNS(ns, 'text');
        cross.setAttribute('y', '4');
        cross.textContent = 'x';
        remove.appendChild(dot);
        remove.appendChild(cross);
        remove.addEventListener('pointerdown', (ev) => {
          ev.stopPropagation();
          this.onRemoveNode(node.id);
        });
        group.appendChild(remove);
      }

      group.addEventListener('pointerdown', (ev) => {
        const pos2 = this.positions.get(node.id)!;
        this.dragging = {
          id: node.id,
          offsetX: ev.offsetX - pos2.x,
          offsetY: ev.offsetY - pos2.y,
        };
      });

      this.svg.appendChild(group);
    }
  }

  private onPointerMove(ev: PointerEvent): void {
    if (!this.dragging || !this.lastView) return;
    const pos = this.positions.get(this.dragging.id);
    if (!pos) return;
    pos.x = ev.offsetX - this.dragging.offsetX;
    pos.y = ev.offsetY - this.dragging.offsetY;
    pos.pinned = true;
    this.draw(this.lastView);
  }
}

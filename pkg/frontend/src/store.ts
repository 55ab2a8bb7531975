/**
 * Editor state machine, framework- and DOM-free.
 *
 * Rendered boxes always mirror the last server-acknowledged leaf set; gizmo
 * edits accumulate locally in `drag` and commit as exactly one PATCH when the
 * drag ends. At most one mutating request is in flight; reads may overlap.
 */
import { ApiClient, PivotSuggestion, SamplerName, SessionSummary } from "./api.js";

export interface DragState {
  leaf: number;
  params: number[];
  dirty: boolean;
}

export interface ViewState {
  sessionId: string | null;
  family: string;
  boxes: number[][];
  revision: number;
  historyDepth: number;
  selected: number | null;
  suggestion: PivotSuggestion | null;
  drag: DragState | null;
  pending: boolean;
  error: string | null;
  /** acknowledged leaf sets per revision, for granularity-path browsing */
  pathSnapshots: number[][][];
  pathCursor: number | null;
}

type Listener = (state: ViewState) => void;

export class EditorStore {
  state: ViewState = {
    sessionId: null,
    family: "table",
    boxes: [],
    revision: -1,
    historyDepth: 0,
    selected: null,
    suggestion: null,
    drag: null,
    pending: false,
    error: null,
    pathSnapshots: [],
    pathCursor: null,
  };

  private listeners: Listener[] = [];

  constructor(private readonly api: ApiClient) {}

  subscribe(fn: Listener): () => void {
    this.listeners.push(fn);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== fn);
    };
  }

  private emit(): void {
    for (const fn of this.listeners) fn(this.state);
  }

  private set(patch: Partial<ViewState>): void {
    this.state = { ...this.state, ...patch };
    this.emit();
  }

  /** The box list the viewport should render: acked state + live drag override. */
  displayedBoxes(): number[][] {
    const { boxes, drag, pathCursor, pathSnapshots } = this.state;
    if (pathCursor !== null) {
      // revisions advance on RNG events too; show the nearest acked snapshot
      for (let rev = Math.min(pathCursor, pathSnapshots.length - 1); rev >= 0; rev--) {
        if (pathSnapshots[rev]) return pathSnapshots[rev];
      }
      return boxes;
    }
    if (!drag) return boxes;
    return boxes.map((b, i) => (i === drag.leaf ? drag.params : b));
  }

  private acknowledge(summary: SessionSummary): void {
    const snapshots = [...this.state.pathSnapshots];
    snapshots[summary.revision] = summary.boxes;
    this.set({
      sessionId: summary.id,
      family: summary.family,
      boxes: summary.boxes,
      revision: summary.revision,
      historyDepth: summary.history_depth,
      pathSnapshots: snapshots,
      pathCursor: null,
      error: null,
    });
  }

  private requireSession(): string {
    if (!this.state.sessionId) throw new Error("no active session");
    return this.state.sessionId;
  }

  private async mutate(run: () => Promise<SessionSummary>): Promise<void> {
    if (this.state.pending) throw new Error("another mutation is in flight");
    this.set({ pending: true });
    try {
      this.acknowledge(await run());
    } catch (err) {
      this.set({ error: err instanceof Error ? err.message : String(err) });
      throw err;
    } finally {
      this.set({ pending: false });
    }
  }

  async createSession(family: string, seed: number): Promise<void> {
    await this.mutate(() => this.api.createSession(family, seed));
    this.set({ selected: null, suggestion: null, drag: null });
  }

  async sync(): Promise<void> {
    const id = this.requireSession();
    try {
      this.acknowledge(await this.api.getSession(id));
    } catch (err) {
      // malformed or failed fetch: keep the previous state, surface a banner
      this.set({ error: err instanceof Error ? err.message : String(err) });
      throw err;
    }
  }

  select(leaf: number | null): void {
    this.set({ selected: leaf, pathCursor: null });
  }

  browsePath(cursor: number | null): void {
    this.set({ pathCursor: cursor });
  }

  async requestSuggestion(): Promise<PivotSuggestion> {
    const id = this.requireSession();
    const suggestion = await this.api.suggestPivot(id);
    // suggestion advances the server-side RNG event log, so track its revision
    this.set({ suggestion, revision: suggestion.revision });
    return suggestion;
  }

  async requestSplit(sampler: SamplerName = "conditional", pivot?: number): Promise<void> {
    const id = this.requireSession();
    const target = pivot ?? this.state.selected ?? this.state.suggestion?.index;
    if (target === undefined || target === null) throw new Error("no pivot chosen or suggested");
    await this.mutate(() => this.api.split(id, target, sampler, this.state.revision));
    this.set({ suggestion: null, selected: null });
  }

  async undo(): Promise<void> {
    const id = this.requireSession();
    await this.mutate(() => this.api.undo(id, this.state.revision));
    this.set({ suggestion: null, selected: null, drag: null });
  }

  beginDrag(leaf: number): void {
    if (leaf < 0 || leaf >= this.state.boxes.length) throw new Error(`no leaf ${leaf}`);
    this.set({ drag: { leaf, params: [...this.state.boxes[leaf]], dirty: false }, pathCursor: null });
  }

  /** Gizmo motion: update the local, uncommitted copy only (optimistic render). */
  updateDrag(params: number[]): void {
    const drag = this.state.drag;
    if (!drag) throw new Error("no drag in progress");
    if (params.length !== 15) throw new Error("drag params must have 15 entries");
    this.set({ drag: { ...drag, params: [...params], dirty: true } });
  }

  /** Commit on release: exactly one PATCH per completed drag, then reconcile. */
  async endDrag(): Promise<void> {
    const drag = this.state.drag;
    if (!drag) return;
    this.set({ drag: null });
    if (!drag.dirty) return;
    await this.mutate(() =>
      this.api.updateBox(this.requireSession(), drag.leaf, drag.params, this.state.revision),
    );
  }

  cancelDrag(): void {
    this.set({ drag: null });
  }
}

/** Browser bootstrap: wire the store, the viewport, and the toolbar. */
import { ApiClient } from "./api.js";
import { EditorStore } from "./store.js";
import { Viewer } from "./viewer.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

const api = new ApiClient(window.location.origin.replace(/\/$/, ""));
const store = new EditorStore(api);
const canvas = el<HTMLCanvasElement>("viewport");
const viewer = new Viewer(store, canvas);

const status = el<HTMLDivElement>("status");
const errorBanner = el<HTMLDivElement>("error");
const pathSlider = el<HTMLInputElement>("path");

store.subscribe((state) => {
  const n = store.displayedBoxes().length;
  const suggested = state.suggestion ? ` | suggested: #${state.suggestion.index}` : "";
  const browsing = state.pathCursor !== null ? ` | browsing rev ${state.pathCursor}` : "";
  status.textContent = state.sessionId
    ? `session ${state.sessionId} | ${n} boxes | rev ${state.revision}${suggested}${browsing}`
    : "no session";
  errorBanner.textContent = state.error ?? "";
  errorBanner.style.display = state.error ? "block" : "none";
  pathSlider.max = String(Math.max(state.revision, 0));
  if (state.pathCursor === null) pathSlider.value = String(Math.max(state.revision, 0));
});

async function guard(action: () => Promise<unknown>): Promise<void> {
  try {
    await action();
  } catch {
    /* store already recorded the error banner */
  }
}

el<HTMLButtonElement>("new-session").onclick = () =>
  guard(() => store.createSession((el<HTMLSelectElement>("family") as HTMLSelectElement).value, Date.now() % 100000));
el<HTMLButtonElement>("suggest").onclick = () => guard(() => store.requestSuggestion());
el<HTMLButtonElement>("split").onclick = () =>
  guard(() => store.requestSplit((el<HTMLSelectElement>("sampler") as HTMLSelectElement).value as never));
el<HTMLButtonElement>("undo").onclick = () => guard(() => store.undo());
el<HTMLButtonElement>("sync").onclick = () => guard(() => store.sync());

for (const mode of ["translate", "rotate", "scale"] as const) {
  el<HTMLButtonElement>(`mode-${mode}`).onclick = () => viewer.setGizmoMode(mode);
}

pathSlider.oninput = () => {
  const cursor = Number(pathSlider.value);
  store.browsePath(cursor >= store.state.revision ? null : cursor);
};

function layout(): void {
  viewer.resize(canvas.clientWidth, canvas.clientHeight);
}
window.addEventListener("resize", layout);
layout();

function frame(): void {
  viewer.renderFrame();
  requestAnimationFrame(frame);
}
frame();

void guard(() => store.createSession("table", 1));

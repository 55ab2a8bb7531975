/**
 * Three.js viewport: one mesh per leaf box, probability overlay as per-box
 * color intensity, transform gizmo that feeds the store's drag lifecycle.
 * Every rendered box comes from a server payload or an in-progress gizmo edit.
 */
import * as THREE from "three";
import { OrbitControls } from "three/examples/jsm/controls/OrbitControls.js";
import { TransformControls } from "three/examples/jsm/controls/TransformControls.js";

import { EditorStore } from "./store.js";
import { matrixToParams, paramsToMatrix } from "./transforms.js";

const BASE_COLOR = new THREE.Color(0x4a7dbb);
const SELECT_COLOR = new THREE.Color(0xf2a541);
const SUGGEST_COLOR = new THREE.Color(0xd64550);

export class Viewer {
  readonly scene = new THREE.Scene();
  readonly camera: THREE.PerspectiveCamera;
  private readonly renderer: THREE.WebGLRenderer;
  private readonly meshes: THREE.Mesh[] = [];
  private readonly geometry = new THREE.BoxGeometry(1, 1, 1);
  private readonly gizmo: TransformControls;
  private readonly orbit: OrbitControls;
  private readonly raycaster = new THREE.Raycaster();

  constructor(
    private readonly store: EditorStore,
    private readonly canvas: HTMLCanvasElement,
  ) {
    this.renderer = new THREE.WebGLRenderer({ canvas, antialias: true });
    this.camera = new THREE.PerspectiveCamera(42, 1, 0.01, 50);
    this.camera.position.set(1.4, 1.1, 1.4);
    this.scene.background = new THREE.Color(0x10141a);
    this.scene.add(new THREE.AmbientLight(0xffffff, 0.55));
    const key = new THREE.DirectionalLight(0xffffff, 1.1);
    key.position.set(2, 3, 1.5);
    this.scene.add(key);
    this.scene.add(new THREE.GridHelper(2, 8, 0x2c3440, 0x1d232c));

    this.orbit = new OrbitControls(this.camera, canvas);
    this.gizmo = new TransformControls(this.camera, canvas);
    this.scene.add(this.gizmo.getHelper());

    this.gizmo.addEventListener("dragging-changed", (event) => {
      this.orbit.enabled = !event.value;
      const leaf = this.attachedLeaf();
      if (event.value && leaf !== null) {
        this.store.beginDrag(leaf);
      } else if (!event.value) {
        void this.store.endDrag();
      }
    });
    this.gizmo.addEventListener("objectChange", () => {
      const obj = this.gizmo.object as THREE.Mesh | undefined;
      if (obj && this.store.state.drag) {
        obj.updateMatrix();
        this.store.updateDrag(matrixToParams(obj.matrix));
      }
    });

    canvas.addEventListener("pointerdown", (event) => this.pick(event));
    store.subscribe(() => this.refresh());
  }

  setGizmoMode(mode: "translate" | "rotate" | "scale"): void {
    this.gizmo.setMode(mode);
  }

  private attachedLeaf(): number | null {
    const obj = this.gizmo.object as THREE.Mesh | undefined;
    if (!obj) return null;
    const idx = this.meshes.indexOf(obj);
    return idx >= 0 ? idx : null;
  }

  private pick(event: PointerEvent): void {
    if ((this.gizmo as unknown as { dragging: boolean }).dragging) return;
    const rect = this.canvas.getBoundingClientRect();
    const ndc = new THREE.Vector2(
      ((event.clientX - rect.left) / rect.width) * 2 - 1,
      -((event.clientY - rect.top) / rect.height) * 2 + 1,
    );
    this.raycaster.setFromCamera(ndc, this.camera);
    const hits = this.raycaster.intersectObjects(this.meshes, false);
    this.store.select(hits.length ? this.meshes.indexOf(hits[0].object as THREE.Mesh) : null);
  }

  /** Rebuild mesh transforms/colors from the store (authoritative state). */
  refresh(): void {
    const boxes = this.store.displayedBoxes();
    while (this.meshes.length < boxes.length) {
      const mesh = new THREE.Mesh(
        this.geometry,
        new THREE.MeshStandardMaterial({ color: BASE_COLOR.clone(), transparent: true, opacity: 0.82 }),
      );
      mesh.matrixAutoUpdate = false;
      this.meshes.push(mesh);
      this.scene.add(mesh);
    }
    while (this.meshes.length > boxes.length) {
      const mesh = this.meshes.pop()!;
      if (this.gizmo.object === mesh) this.gizmo.detach();
      this.scene.remove(mesh);
      (mesh.material as THREE.Material).dispose();
    }

    const { selected, suggestion, drag } = this.store.state;
    boxes.forEach((params, i) => {
      const mesh = this.meshes[i];
      if (!(drag && drag.leaf === i && this.gizmo.object === mesh)) {
        mesh.matrix.copy(paramsToMatrix(params));
        mesh.matrix.decompose(mesh.position, mesh.quaternion, mesh.scale);
      }
      const material = mesh.material as THREE.MeshStandardMaterial;
      if (i === selected) {
        material.color.copy(SELECT_COLOR);
      } else if (suggestion && i === suggestion.index) {
        material.color.copy(SUGGEST_COLOR);
      } else if (suggestion) {
        // probability overlay: color intensity encodes p(pivot = box)
        const p = suggestion.probabilities[i] ?? 0;
        material.color.copy(BASE_COLOR).lerp(SUGGEST_COLOR, Math.min(1, p * 1.6));
      } else {
        material.color.copy(BASE_COLOR);
      }
    });

    if (selected !== null && this.meshes[selected]) {
      this.gizmo.attach(this.meshes[selected]);
    } else if (!drag) {
      this.gizmo.detach();
    }
  }

  resize(width: number, height: number): void {
    this.renderer.setSize(width, height, false);
    this.camera.aspect = width / height;
    this.camera.updateProjectionMatrix();
  }

  renderFrame(): void {
    this.orbit.update();
    this.renderer.render(this.scene, this.camera);
  }
}

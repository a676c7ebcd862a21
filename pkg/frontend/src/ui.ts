// Interactive manipulation panel: emotion pickers, tau/lambda sliders,
// camera orbit controls, a render view with latency readout, and a keyframe
// timeline with play/pause/scrub. Slider-driven requests are debounced
// (final position always sent); a newer request aborts the in-flight one.

import { buildRenderRequest, clamp, ManipulationState, RenderClient,
         ServiceInfo } from "./api.js";
import { TimelinePlayer } from "./timeline.js";

export const DEBOUNCE_MS = 120;

interface SliderSpec {
  label: string;
  min: number;
  max: number;
  step: number;
  value: number;
  onChange: (v: number) => void;
}

function slider(parent: HTMLElement, spec: SliderSpec): HTMLInputElement {
  const row = document.createElement("div");
  row.style.margin = "6px 0";
  const label = document.createElement("label");
  label.textContent = spec.label;
  label.style.display = "inline-block";
  label.style.width = "110px";
  row.appendChild(label);
  const input = document.createElement("input");
  input.type = "range";
  input.min = String(spec.min);
  input.max = String(spec.max);
  input.step = String(spec.step);
  input.value = String(spec.value);
  input.style.width = "220px";
  row.appendChild(input);
  const value = document.createElement("span");
  value.textContent = Number(spec.value).toFixed(2);
  value.style.marginLeft = "8px";
  row.appendChild(value);
  input.addEventListener("input", () => {
    const v = parseFloat(input.value);
    value.textContent = v.toFixed(2);
    spec.onChange(v);
  });
  parent.appendChild(row);
  return input;
}

function select(parent: HTMLElement, label: string, options: string[],
                onChange: (v: string) => void): HTMLSelectElement {
  const row = document.createElement("div");
  row.style.margin = "6px 0";
  const lab = document.createElement("label");
  lab.textContent = label;
  lab.style.display = "inline-block";
  lab.style.width = "110px";
  row.appendChild(lab);
  const sel = document.createElement("select");
  for (const opt of options) {
    const o = document.createElement("option");
    o.value = opt;
    o.textContent = opt === "" ? "(none)" : opt;
    sel.appendChild(o);
  }
  sel.addEventListener("change", () => onChange(sel.value));
  row.appendChild(sel);
  parent.appendChild(row);
  return sel;
}

export class ManipulationPanel {
  state: ManipulationState;
  private img: HTMLImageElement;
  private status: HTMLElement;
  private inflight: AbortController | null = null;
  private debounceTimer: ReturnType<typeof setTimeout> | null = null;
  private player: TimelinePlayer | null = null;
  private frameLabel: HTMLElement | null = null;
  private scrubber: HTMLInputElement | null = null;

  constructor(private root: HTMLElement, private client: RenderClient,
              private info: ServiceInfo) {
    this.state = {
      emotion: info.emotions[0],
      secondEmotion: null,
      tau: 0,
      lambda: 0,
      camera: { azimuth_deg: 0, elevation_deg: 0, radius: 3 },
      resolution: Math.min(64, info.max_resolution),
      timeline: [],
    };
    this.root.style.fontFamily = "system-ui, sans-serif";
    this.root.style.maxWidth = "640px";

    const view = document.createElement("div");
    this.img = document.createElement("img");
    this.img.width = 256;
    this.img.height = 256;
    this.img.style.imageRendering = "pixelated";
    this.img.style.border = "1px solid #888";
    view.appendChild(this.img);
    this.status = document.createElement("div");
    this.status.style.color = "#555";
    this.status.style.minHeight = "1.2em";
    view.appendChild(this.status);
    this.root.appendChild(view);

    const controls = document.createElement("div");
    this.root.appendChild(controls);
    select(controls, "emotion", info.emotions, (v) => {
      this.state.emotion = v;
      this.requestRender();
    });
    select(controls, "second emotion", ["", ...info.emotions], (v) => {
      this.state.secondEmotion = v === "" ? null : v;
      this.requestRender();
    });
    const [tauLo, tauHi] = info.tau_range;
    slider(controls, { label: "tau", min: tauLo, max: tauHi, step: 0.05,
                       value: 0, onChange: (v) => {
                         this.state.tau = v;
                         this.debouncedRender();
                       } });
    slider(controls, { label: "lambda", min: 0, max: 1, step: 0.01, value: 0,
                       onChange: (v) => {
                         this.state.lambda = clamp(v, 0, 1);
                         this.debouncedRender();
                       } });
    slider(controls, { label: "azimuth", min: -180, max: 180, step: 1, value: 0,
                       onChange: (v) => {
                         this.state.camera.azimuth_deg = v;
                         this.debouncedRender();
                       } });
    slider(controls, { label: "elevation", min: -60, max: 60, step: 1, value: 0,
                       onChange: (v) => {
                         this.state.camera.elevation_deg = v;
                         this.debouncedRender();
                       } });
    slider(controls, { label: "radius", min: 2, max: 6, step: 0.1, value: 3,
                       onChange: (v) => {
                         this.state.camera.radius = v;
                         this.debouncedRender();
                       } });
    const resolutions = [32, 64, 128, 256].filter(
      (r) => r <= info.max_resolution);
    select(controls, "resolution", resolutions.map(String), (v) => {
      this.state.resolution = parseInt(v, 10);
      this.requestRender();
    });

    this.buildTimeline();
  }

  private buildTimeline(): void {
    const box = document.createElement("div");
    box.style.marginTop = "14px";
    box.style.borderTop = "1px solid #ccc";
    const title = document.createElement("div");
    title.textContent = "timeline";
    title.style.fontWeight = "bold";
    box.appendChild(title);

    const addBtn = document.createElement("button");
    addBtn.textContent = "add keyframe";
    addBtn.addEventListener("click", () => {
      const frame = this.state.timeline.length
        ? Math.max(...this.state.timeline.map((k) => k.frame)) + 25
        : 0;
      this.state.timeline.push({ frame, emotion: this.state.emotion,
                                 tau: this.state.tau });
      list.textContent = this.state.timeline
        .map((k) => `${k.frame}:${k.emotion}(${k.tau.toFixed(1)})`).join("  ");
      this.resetPlayer();
    });
    box.appendChild(addBtn);

    const playBtn = document.createElement("button");
    playBtn.textContent = "play";
    playBtn.style.marginLeft = "6px";
    playBtn.addEventListener("click", () => {
      if (!this.player) {
        return;
      }
      if (this.player.isPlaying) {
        this.player.pause();
        playBtn.textContent = "play";
      } else {
        this.player.play();
        playBtn.textContent = "pause";
      }
    });
    box.appendChild(playBtn);

    const list = document.createElement("div");
    list.style.color = "#555";
    box.appendChild(list);

    this.scrubber = document.createElement("input");
    this.scrubber.type = "range";
    this.scrubber.min = "0";
    this.scrubber.max = "100";
    this.scrubber.value = "0";
    this.scrubber.style.width = "300px";
    this.scrubber.addEventListener("input", () => {
      this.player?.scrub(parseInt(this.scrubber!.value, 10));
    });
    box.appendChild(this.scrubber);
    this.frameLabel = document.createElement("span");
    this.frameLabel.textContent = " frame 0";
    box.appendChild(this.frameLabel);
    this.root.appendChild(box);
  }

  private resetPlayer(): void {
    this.player?.pause();
    this.player = new TimelinePlayer(this.state, (frame, body) => {
      if (this.frameLabel) {
        this.frameLabel.textContent = ` frame ${frame}`;
      }
      if (this.scrubber) {
        this.scrubber.max = String(this.player!.frameCount - 1);
        this.scrubber.value = String(frame);
      }
      void this.send(body);
    });
  }

  debouncedRender(): void {
    if (this.debounceTimer !== null) {
      clearTimeout(this.debounceTimer);
    }
    this.debounceTimer = setTimeout(() => {
      this.debounceTimer = null;
      this.requestRender();
    }, DEBOUNCE_MS);
  }

  requestRender(): void {
    void this.send(buildRenderRequest(this.state));
  }

  private async send(body: ReturnType<typeof buildRenderRequest>): Promise<void> {
    this.inflight?.abort();
    const controller = new AbortController();
    this.inflight = controller;
    try {
      const result = await this.client.render(body, controller.signal);
      if (controller.signal.aborted) {
        return;
      }
      const url = URL.createObjectURL(result.blob);
      this.img.onload = () => URL.revokeObjectURL(url);
      this.img.src = url;
      this.status.textContent = `rendered in ${result.latencyMs.toFixed(0)} ms`;
    } catch (err) {
      if (!controller.signal.aborted) {
        // surface the failure inline; slider state stays untouched
        this.status.textContent = String(err);
      }
    }
  }
}

export async function mountPanel(root: HTMLElement,
                                 client: RenderClient): Promise<ManipulationPanel> {
  const info = await client.info();
  const panel = new ManipulationPanel(root, client, info);
  panel.requestRender();
  return panel;
}

// Canvas waveform panel with pan and zoom.
//
// The panel never transforms sample values: drawing maps data to pixels,
// and every number shown (readout, extent labels) is the exact value the
// gateway sent, rendered with shortest-round-trip formatting.

import { formatSample } from "./logic.js";
import type { SignalData } from "./types.js";

interface View {
    t0: number;
    t1: number;
    v0: number;
    v1: number;
}

function fullExtent(data: SignalData): View {
    const t0 = data.t_us[0] ?? 0;
    const t1 = data.t_us[data.t_us.length - 1] ?? 1;
    let v0 = Infinity;
    let v1 = -Infinity;
    for (const v of data.v) {
        if (v < v0) v0 = v;
        if (v > v1) v1 = v;
    }
    if (!Number.isFinite(v0) || v0 === v1) {
        v0 = (v0 === v1 ? v0 : 0) - 1;
        v1 = v0 + 2;
    }
    return { t0, t1: t1 > t0 ? t1 : t0 + 1, v0, v1 };
}

export class WaveformPanel {
    readonly element: HTMLDivElement;
    private canvas: HTMLCanvasElement;
    private readout: HTMLDivElement;
    private data: SignalData | null = null;
    private message = "loading";
    private view: View | null = null;
    private dragging: { x: number; y: number; view: View } | null = null;

    constructor(public path: string, width = 320, height = 200) {
        this.element = document.createElement("div");
        this.element.className = "panel";
        const title = document.createElement("div");
        title.className = "panel-title";
        title.textContent = path;
        this.canvas = document.createElement("canvas");
        this.canvas.width = width;
        this.canvas.height = height;
        this.readout = document.createElement("div");
        this.readout.className = "panel-readout";
        this.readout.textContent = " ";
        this.element.append(title, this.canvas, this.readout);
        this.bindInteractions();
    }

    setData(data: SignalData): void {
        this.data = data;
        this.view = fullExtent(data);
        this.readout.textContent =
            `${data.v.length} pts, units ${data.units || "-"}`;
        this.draw();
    }

    setMessage(message: string): void {
        this.data = null;
        this.message = message;
        this.readout.textContent = message;
        this.draw();
    }

    resetView(): void {
        if (this.data) {
            this.view = fullExtent(this.data);
            this.draw();
        }
    }

    currentView(): View | null {
        return this.view ? { ...this.view } : null;
    }

    // value under the cursor, exactly as the gateway sent it
    sampleAt(index: number): string {
        if (!this.data || index < 0 || index >= this.data.v.length) {
            return "";
        }
        return formatSample(this.data.v[index]);
    }

    private bindInteractions(): void {
        this.canvas.addEventListener("wheel", (ev) => {
            if (!this.view) return;
            ev.preventDefault();
            const factor = ev.deltaY < 0 ? 0.8 : 1.25;
            const frac = ev.offsetX / this.canvas.width;
            const { t0, t1 } = this.view;
            const pivot = t0 + frac * (t1 - t0);
            this.view.t0 = pivot - (pivot - t0) * factor;
            this.view.t1 = pivot + (t1 - pivot) * factor;
            this.draw();
        });
        this.canvas.addEventListener("mousedown", (ev) => {
            if (!this.view) return;
            this.dragging = { x: ev.offsetX, y: ev.offsetY,
                              view: { ...this.view } };
        });
        this.canvas.addEventListener("mousemove", (ev) => {
            if (this.dragging && this.view) {
                const dt = (this.dragging.x - ev.offsetX) / this.canvas.width
                    * (this.dragging.view.t1 - this.dragging.view.t0);
                const dv = (ev.offsetY - this.dragging.y) / this.canvas.height
                    * (this.dragging.view.v1 - this.dragging.view.v0);
                this.view = {
                    t0: this.dragging.view.t0 + dt,
                    t1: this.dragging.view.t1 + dt,
                    v0: this.dragging.view.v0 + dv,
                    v1: this.dragging.view.v1 + dv,
                };
                this.draw();
            } else if (this.data) {
                this.hover(ev.offsetX);
            }
        });
        const stop = () => { this.dragging = null; };
        this.canvas.addEventListener("mouseup", stop);
        this.canvas.addEventListener("mouseleave", stop);
        this.canvas.addEventListener("dblclick", () => this.resetView());
    }

    private hover(px: number): void {
        if (!this.data || !this.view) return;
        const t = this.view.t0 + px / this.canvas.width
            * (this.view.t1 - this.view.t0);
        // nearest sample by time; t_us is ascending
        let best = 0;
        let bestDist = Infinity;
        for (let i = 0; i < this.data.t_us.length; i++) {
            const d = Math.abs(this.data.t_us[i] - t);
            if (d < bestDist) {
                bestDist = d;
                best = i;
            }
        }
        this.readout.textContent =
            `t=${this.data.t_us[best]} us  v=${this.sampleAt(best)}`;
    }

    private draw(): void {
        const ctx = this.canvas.getContext("2d");
        if (!ctx) {
            return;  // jsdom tests have no 2d context; fine
        }
        const { width, height } = this.canvas;
        ctx.fillStyle = "#10151d";
        ctx.fillRect(0, 0, width, height);
        if (!this.data || !this.view) {
            ctx.fillStyle = "#7a8699";
            ctx.font = "12px monospace";
            ctx.fillText(this.message, 10, height / 2);
            return;
        }
        const { t0, t1, v0, v1 } = this.view;
        ctx.strokeStyle = "#2a3342";
        ctx.strokeRect(0.5, 0.5, width - 1, height - 1);
        ctx.strokeStyle = "#58a6ff";
        ctx.beginPath();
        let started = false;
        for (let i = 0; i < this.data.t_us.length; i++) {
            const x = (this.data.t_us[i] - t0) / (t1 - t0) * width;
            const y = height - (this.data.v[i] - v0) / (v1 - v0) * height;
            if (started) {
                ctx.lineTo(x, y);
            } else {
                ctx.moveTo(x, y);
                started = true;
            }
        }
        ctx.stroke();
        ctx.fillStyle = "#7a8699";
        ctx.font = "10px monospace";
        ctx.fillText(formatSample(v1), 4, 12);
        ctx.fillText(formatSample(v0), 4, height - 4);
    }
}

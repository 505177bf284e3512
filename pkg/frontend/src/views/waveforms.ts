// Post-shot waveform browser: up to 64 pan/zoom panels per shot.

import { ApiError } from "../api.js";
import { canAddPanel, MAX_PANELS } from "../logic.js";
import { WaveformPanel } from "../plot.js";
import { ConsoleSession } from "../session.js";

const DEFAULT_PATHS = [
    "\\TOP.RTCTRL.Z",
    "\\TOP.RTCTRL.COIL:CMD",
];

export class WaveformView {
    readonly element: HTMLElement;
    readonly panels: WaveformPanel[] = [];
    readonly addButton: HTMLButtonElement;
    private grid: HTMLDivElement;
    private pathInput: HTMLInputElement;
    private pathList: HTMLDataListElement;
    private shotLabel: HTMLSpanElement;
    private notice: HTMLDivElement;
    private shownShot: number | null = null;

    constructor(private session: ConsoleSession) {
        this.element = document.createElement("section");
        this.element.id = "view-waveforms";
        const heading = document.createElement("h2");
        heading.textContent = "Waveforms";
        this.shotLabel = document.createElement("span");
        this.shotLabel.className = "shot-label";
        this.shotLabel.textContent = "no shot selected";

        this.pathInput = document.createElement("input");
        this.pathInput.placeholder = "\\TOP.RTCTRL.Z";
        this.pathInput.setAttribute("list", "signal-paths");
        this.pathList = document.createElement("datalist");
        this.pathList.id = "signal-paths";
        this.addButton = document.createElement("button");
        this.addButton.textContent = "Add panel";
        this.addButton.addEventListener("click", () => {
            void this.addPanel(this.pathInput.value.trim());
        });
        const resetAll = document.createElement("button");
        resetAll.textContent = "Reset zoom";
        resetAll.addEventListener("click", () => {
            for (const p of this.panels) {
                p.resetView();
            }
        });

        this.notice = document.createElement("div");
        this.notice.className = "banner";
        this.grid = document.createElement("div");
        this.grid.className = "panel-grid";
        const controls = document.createElement("div");
        controls.className = "button-bar";
        controls.append(this.shotLabel, this.pathInput, this.addButton,
                        resetAll, this.pathList);
        this.element.append(heading, controls, this.notice, this.grid);

        session.onChange(() => void this.maybeReload());
    }

    private async maybeReload(): Promise<void> {
        const shot = this.session.selectedShot;
        if (shot === null || shot === this.shownShot) {
            return;
        }
        this.shownShot = shot;
        await this.loadShot(shot);
    }

    async loadShot(shot: number): Promise<void> {
        this.shownShot = shot;
        this.shotLabel.textContent = `shot ${shot}`;
        const wanted = this.panels.length
            ? this.panels.map((p) => p.path)
            : DEFAULT_PATHS;
        this.panels.length = 0;
        this.grid.replaceChildren();
        for (const path of wanted) {
            await this.addPanel(path);
        }
        try {
            const nodes = await this.session.client.nodes(shot);
            this.pathList.replaceChildren(...nodes
                .filter((n) => n.usage === "SIGNAL" && n.has_data)
                .map((n) => {
                    const opt = document.createElement("option");
                    opt.value = n.path;
                    return opt;
                }));
        } catch {
            // path suggestions are a nicety; panels already report errors
        }
    }

    async addPanel(path: string): Promise<void> {
        this.notice.textContent = "";
        this.notice.className = "banner";
        if (!path) {
            return;
        }
        if (!canAddPanel(this.panels.length)) {
            // hard client-side stop: the gateway is never asked for a 65th
            this.notice.className = "banner error";
            this.notice.textContent =
                `panel limit is ${MAX_PANELS}; remove one first`;
            return;
        }
        const panel = new WaveformPanel(path);
        this.panels.push(panel);
        this.grid.append(panel.element);
        const shot = this.shownShot;
        if (shot === null) {
            panel.setMessage("no shot selected");
            return;
        }
        try {
            panel.setData(await this.session.client.signal(shot, path));
        } catch (err) {
            panel.setMessage(err instanceof ApiError
                ? `${err.serverError}: no data here`
                : String(err));
        }
    }
}

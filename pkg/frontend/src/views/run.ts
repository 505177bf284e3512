// Arm / Trigger / Abort / Reset controls plus the live state timeline.
// Buttons follow the sequencer's legal-edge table; the timeline appends
// one row per SEQ_STATE envelope, in arrival order.

import { ApiError } from "../api.js";
import { appendTimeline, commandEnabled } from "../logic.js";
import { ConsoleSession } from "../session.js";
import type { Command, Envelope, TimelineEntry } from "../types.js";

export class RunView {
    readonly element: HTMLElement;
    readonly buttons = new Map<Command, HTMLButtonElement>();
    timeline: TimelineEntry[] = [];
    private list: HTMLOListElement;
    private status: HTMLDivElement;
    private banner: HTMLDivElement;

    constructor(private session: ConsoleSession) {
        this.element = document.createElement("section");
        this.element.id = "view-run";
        const heading = document.createElement("h2");
        heading.textContent = "Run Controls";
        this.status = document.createElement("div");
        this.status.className = "seq-status";
        const bar = document.createElement("div");
        bar.className = "button-bar";
        bar.append(
            this.commandButton("arm", "Arm", () => this.session.client.arm()),
            this.commandButton("trigger", "Trigger",
                               () => this.session.client.trigger()),
            this.commandButton("abort", "Abort",
                               () => this.session.client.abort()),
        );
        this.banner = document.createElement("div");
        this.banner.className = "banner";
        this.list = document.createElement("ol");
        this.list.className = "timeline";
        this.element.append(heading, this.status, bar, this.banner, this.list);

        session.onChange(() => this.refresh());
        session.onEnvelope((env) => this.takeEnvelope(env));
        this.refresh();
    }

    private commandButton(command: Command, label: string,
                          action: () => Promise<unknown>): HTMLButtonElement {
        const btn = document.createElement("button");
        btn.textContent = label;
        btn.dataset.command = command;
        btn.addEventListener("click", () => {
            this.banner.textContent = "";
            this.banner.className = "banner";
            void action().catch((err) => {
                this.banner.className = "banner error";
                this.banner.textContent = err instanceof ApiError
                    ? `${err.serverError}: ${err.serverMessage}`
                    : String(err);
            });
        });
        this.buttons.set(command, btn);
        return btn;
    }

    takeEnvelope(env: Envelope): void {
        const before = this.timeline.length;
        this.timeline = appendTimeline(this.timeline, env);
        if (this.timeline.length === before) {
            return;
        }
        const entry = this.timeline[this.timeline.length - 1];
        const li = document.createElement("li");
        li.textContent = `${entry.state} (shot ${entry.shot})`;
        this.list.append(li);
    }

    refresh(): void {
        const live = this.session.wsStatus === "open";
        this.status.textContent =
            `sequencer: ${this.session.state ?? "?"} | shot: `
            + `${this.session.shot} | stream: ${this.session.wsStatus}`;
        for (const [command, btn] of this.buttons) {
            // a dead stream blanks every mutating control
            btn.disabled = !live || !commandEnabled(
                command, this.session.state, this.session.haveToken);
        }
    }
}

// Logbook: entries for the selected shot, plus a submit form.

import { ApiError } from "../api.js";
import { ConsoleSession } from "../session.js";

export class LogbookView {
    readonly element: HTMLElement;
    readonly submit: HTMLButtonElement;
    readonly author: HTMLInputElement;
    readonly body: HTMLTextAreaElement;
    private list: HTMLUListElement;
    private banner: HTMLDivElement;
    private shownShot: number | null = null;

    constructor(private session: ConsoleSession) {
        this.element = document.createElement("section");
        this.element.id = "view-logbook";
        const heading = document.createElement("h2");
        heading.textContent = "Logbook";
        this.list = document.createElement("ul");
        this.list.className = "logbook";
        const form = document.createElement("form");
        this.author = document.createElement("input");
        this.author.placeholder = "author";
        this.body = document.createElement("textarea");
        this.body.placeholder = "what happened?";
        this.submit = document.createElement("button");
        this.submit.type = "submit";
        this.submit.textContent = "Add entry";
        form.append(this.author, this.body, this.submit);
        this.banner = document.createElement("div");
        this.banner.className = "banner";
        this.element.append(heading, this.list, form, this.banner);

        form.addEventListener("submit", (ev) => {
            ev.preventDefault();
            void this.add();
        });
        session.onChange(() => void this.maybeReload());
    }

    private async maybeReload(): Promise<void> {
        const shot = this.session.selectedShot;
        if (shot === null || shot === this.shownShot) {
            return;
        }
        await this.reload();
    }

    async reload(): Promise<void> {
        const shot = this.session.selectedShot;
        this.shownShot = shot;
        if (shot === null) {
            this.list.replaceChildren();
            return;
        }
        const entries = await this.session.client.logbook(shot);
        this.list.replaceChildren(...entries.map((e) => {
            const li = document.createElement("li");
            li.textContent = `#${e.id} [${e.author}] ${e.body}`;
            return li;
        }));
    }

    async add(): Promise<void> {
        this.banner.textContent = "";
        this.banner.className = "banner";
        const body = this.body.value;
        if (!body.trim()) {
            this.banner.className = "banner error";
            this.banner.textContent = "entry body must not be empty";
            return;  // never sent to the server
        }
        const shot = this.session.selectedShot;
        if (shot === null) {
            this.banner.className = "banner error";
            this.banner.textContent = "select a shot first";
            return;
        }
        try {
            await this.session.client.addLogbook(
                shot, this.author.value || "operator", body);
            this.body.value = "";
            await this.reload();
        } catch (err) {
            this.banner.className = "banner error";
            this.banner.textContent = err instanceof ApiError
                ? `${err.serverError}: ${err.serverMessage}`
                : String(err);
        }
    }
}

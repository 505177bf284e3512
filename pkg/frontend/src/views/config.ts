// Shot configuration form.  Validates locally with the same bounds the
// sequencer enforces; anything the server still rejects is shown verbatim.

import { ApiError } from "../api.js";
import {
    commandEnabled,
    configRequestBody,
    validateConfigForm,
} from "../logic.js";
import { ConsoleSession } from "../session.js";
import type { ConfigFormFields } from "../types.js";

const DEFAULTS: ConfigFormFields = {
    pulse_len_us: 500_000,
    cooldown_us: 2_000_000,
    z_ref: 0,
    n_ref: 0.5,
};

export class ConfigView {
    readonly element: HTMLElement;
    readonly submit: HTMLButtonElement;
    private inputs = new Map<keyof ConfigFormFields, HTMLInputElement>();
    private errors: HTMLUListElement;
    private banner: HTMLDivElement;

    constructor(private session: ConsoleSession) {
        this.element = document.createElement("section");
        this.element.id = "view-config";
        const heading = document.createElement("h2");
        heading.textContent = "Shot Configuration";
        const form = document.createElement("form");
        form.append(
            this.field("pulse_len_us", "Pulse length (us)"),
            this.field("cooldown_us", "Cooldown (us)"),
            this.field("z_ref", "Position reference (m)"),
            this.field("n_ref", "Density reference"),
        );
        this.submit = document.createElement("button");
        this.submit.type = "submit";
        this.submit.textContent = "Configure";
        form.append(this.submit);
        this.errors = document.createElement("ul");
        this.errors.className = "errors";
        this.banner = document.createElement("div");
        this.banner.className = "banner";
        this.element.append(heading, form, this.errors, this.banner);

        form.addEventListener("submit", (ev) => {
            ev.preventDefault();
            void this.configure();
        });
        session.onChange(() => this.refresh());
        this.refresh();
    }

    private field(name: keyof ConfigFormFields, label: string): HTMLElement {
        const wrap = document.createElement("label");
        wrap.textContent = label + " ";
        const input = document.createElement("input");
        input.name = name;
        input.value = String(DEFAULTS[name]);
        this.inputs.set(name, input);
        wrap.append(input);
        return wrap;
    }

    fields(): ConfigFormFields {
        const num = (name: keyof ConfigFormFields) =>
            Number(this.inputs.get(name)!.value);
        return {
            pulse_len_us: num("pulse_len_us"),
            cooldown_us: num("cooldown_us"),
            z_ref: num("z_ref"),
            n_ref: num("n_ref"),
        };
    }

    setField(name: keyof ConfigFormFields, value: string): void {
        this.inputs.get(name)!.value = value;
    }

    refresh(): void {
        this.submit.disabled = !commandEnabled(
            "configure", this.session.state, this.session.haveToken);
    }

    async configure(): Promise<void> {
        this.banner.textContent = "";
        this.banner.className = "banner";
        const fields = this.fields();
        const problems = validateConfigForm(fields);
        this.errors.replaceChildren(...problems.map((p) => {
            const li = document.createElement("li");
            li.textContent = p;
            return li;
        }));
        if (problems.length > 0) {
            return;  // invalid forms never reach the wire
        }
        try {
            const reply = await this.session.client.configure(
                configRequestBody(fields));
            this.banner.textContent = `configured, sequencer ${reply.state}`;
            this.banner.className = "banner ok";
        } catch (err) {
            this.banner.className = "banner error";
            this.banner.textContent = err instanceof ApiError
                ? `${err.serverError}: ${err.serverMessage}`
                : String(err);
        }
    }
}

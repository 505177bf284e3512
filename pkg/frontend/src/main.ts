// Console entry point: header chrome plus the four operator views.

import { ConsoleSession } from "./session.js";
import { ConfigView } from "./views/config.js";
import { LogbookView } from "./views/logbook.js";
import { RunView } from "./views/run.js";
import { WaveformView } from "./views/waveforms.js";

function defaultGateway(): string {
    if (location.protocol.startsWith("http") && location.host) {
        return `${location.protocol}//${location.host}`;
    }
    return "http://127.0.0.1:8080";
}

export function mountConsole(root: HTMLElement,
                             session?: ConsoleSession): ConsoleSession {
    const sess = session ?? new ConsoleSession(defaultGateway());

    const header = document.createElement("header");
    const title = document.createElement("h1");
    title.textContent = "pulselab operator console";
    const urlInput = document.createElement("input");
    urlInput.id = "gateway-url";
    urlInput.value = sess.client.baseUrl;
    const tokenInput = document.createElement("input");
    tokenInput.id = "auth-token";
    tokenInput.type = "password";
    tokenInput.placeholder = "auth token";
    tokenInput.addEventListener("input", () => {
        sess.setToken(tokenInput.value);
    });
    const connectBtn = document.createElement("button");
    connectBtn.textContent = "Connect";
    const wsDot = document.createElement("span");
    wsDot.className = "ws-dot closed";
    wsDot.title = "event stream status";
    header.append(title, urlInput, tokenInput, connectBtn, wsDot);

    const views = document.createElement("main");
    const config = new ConfigView(sess);
    const run = new RunView(sess);
    const waveforms = new WaveformView(sess);
    const logbook = new LogbookView(sess);
    views.append(config.element, run.element, waveforms.element,
                 logbook.element);
    root.append(header, views);

    sess.onChange(() => {
        wsDot.className = `ws-dot ${sess.wsStatus}`;
    });
    connectBtn.addEventListener("click", () => {
        sess.client.baseUrl = urlInput.value.replace(/\/+$/, "");
        void sess.connect().catch((err) => {
            wsDot.className = "ws-dot closed";
            console.error("gateway unreachable:", err);
        });
    });
    return sess;
}

if (typeof document !== "undefined" && document.getElementById("app")) {
    mountConsole(document.getElementById("app")!);
}

// Live event stream with automatic reconnect.

import { reconnectDelayMs } from "./logic.js";
import type { Envelope } from "./types.js";

export type StreamStatus = "connecting" | "open" | "closed";

// The subset of the browser WebSocket the stream needs; node tests
// substitute the `ws` package through the factory.
export interface WebSocketLike {
    onopen: ((ev?: unknown) => void) | null;
    onmessage: ((ev: { data: unknown }) => void) | null;
    onclose: ((ev?: unknown) => void) | null;
    onerror: ((ev?: unknown) => void) | null;
    close(): void;
}

export type WsFactory = (url: string) => WebSocketLike;

const domFactory: WsFactory = (url) =>
    new WebSocket(url) as unknown as WebSocketLike;

export class EventStream {
    private socket: WebSocketLike | null = null;
    private attempt = 0;
    private stopped = false;
    private timer: ReturnType<typeof setTimeout> | null = null;

    constructor(private url: string,
                private onEnvelope: (env: Envelope) => void,
                private onStatus: (status: StreamStatus) => void = () => {},
                private factory: WsFactory = domFactory) {}

    start(): void {
        this.stopped = false;
        this.connect();
    }

    private connect(): void {
        if (this.stopped) {
            return;
        }
        this.onStatus("connecting");
        let socket: WebSocketLike;
        try {
            socket = this.factory(this.url);
        } catch {
            this.scheduleReconnect();
            return;
        }
        this.socket = socket;
        socket.onopen = () => {
            this.attempt = 0;
            this.onStatus("open");
        };
        socket.onmessage = (ev) => {
            try {
                this.onEnvelope(JSON.parse(String(ev.data)) as Envelope);
            } catch (err) {
                console.error("bad envelope from gateway:", err);
            }
        };
        socket.onerror = () => { /* onclose follows */ };
        socket.onclose = () => {
            this.socket = null;
            this.onStatus("closed");
            this.scheduleReconnect();
        };
    }

    private scheduleReconnect(): void {
        if (this.stopped || this.timer !== null) {
            return;
        }
        const delay = reconnectDelayMs(this.attempt);
        this.attempt += 1;
        this.timer = setTimeout(() => {
            this.timer = null;
            this.connect();
        }, delay);
    }

    stop(): void {
        this.stopped = true;
        if (this.timer !== null) {
            clearTimeout(this.timer);
            this.timer = null;
        }
        if (this.socket !== null) {
            const sock = this.socket;
            this.socket = null;
            sock.onclose = null;
            sock.close();
        }
        this.onStatus("closed");
    }
}

// One operator session: gateway client + live event stream + shared
// UI state (sequencer state, selected shot, connection health).

import { GatewayClient } from "./api.js";
import { parseSeqState } from "./logic.js";
import { EventStream, StreamStatus, WsFactory } from "./ws.js";
import type { Envelope, SeqStateName } from "./types.js";

export class ConsoleSession {
    client: GatewayClient;
    state: SeqStateName | null = null;
    shot = "-";
    lastShot: number | null = null;
    selectedShot: number | null = null;
    wsStatus: StreamStatus = "closed";

    private stream: EventStream | null = null;
    private changeListeners = new Set<() => void>();
    private envelopeListeners = new Set<(env: Envelope) => void>();

    constructor(baseUrl: string, private wsFactory?: WsFactory,
                fetchImpl?: typeof fetch) {
        this.client = new GatewayClient(baseUrl, fetchImpl);
    }

    get haveToken(): boolean {
        return Boolean(this.client.token);
    }

    setToken(token: string): void {
        // kept in memory only; a reload forgets it
        this.client.token = token.trim() || null;
        this.emitChange();
    }

    onChange(fn: () => void): void {
        this.changeListeners.add(fn);
    }

    onEnvelope(fn: (env: Envelope) => void): void {
        this.envelopeListeners.add(fn);
    }

    emitChange(): void {
        for (const fn of this.changeListeners) {
            fn();
        }
    }

    async connect(): Promise<void> {
        const snapshot = await this.client.state();
        this.state = snapshot.state;
        this.shot = snapshot.shot === null ? "-" : String(snapshot.shot);
        this.lastShot = snapshot.last_shot;
        if (this.selectedShot === null && snapshot.last_shot !== null) {
            this.selectedShot = snapshot.last_shot;
        }
        this.stream?.stop();
        this.stream = new EventStream(
            this.client.wsUrl,
            (env) => this.handleEnvelope(env),
            (status) => {
                this.wsStatus = status;
                this.emitChange();
            },
            this.wsFactory);
        this.stream.start();
        this.emitChange();
    }

    disconnect(): void {
        this.stream?.stop();
        this.stream = null;
    }

    handleEnvelope(env: Envelope): void {
        if (env.kind === "SEQ_STATE" && typeof env.payload === "string") {
            const { state, shot } = parseSeqState(env.payload);
            this.state = state;
            this.shot = shot;
        } else if (env.kind === "SHOT_DONE"
                   && typeof env.payload === "string") {
            // a finished shot becomes the one the waveform view shows
            this.selectedShot = parseInt(env.payload, 10);
            this.lastShot = this.selectedShot;
        }
        for (const fn of this.envelopeListeners) {
            fn(env);
        }
        this.emitChange();
    }

    selectShot(shot: number): void {
        this.selectedShot = shot;
        this.emitChange();
    }
}

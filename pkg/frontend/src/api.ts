// Thin typed client for the gateway's HTTP endpoints.

import type {
    LogbookEntry,
    NodeInfo,
    SignalData,
    StateSnapshot,
} from "./types.js";

export class ApiError extends Error {
    constructor(public status: number, public body: unknown) {
        super(`HTTP ${status}: ${JSON.stringify(body)}`);
    }

    // the server's own error label, e.g. "WrongState" or "InvalidConfig"
    get serverError(): string {
        const detail = (this.body as { detail?: { error?: string } })?.detail;
        return detail?.error ?? `HTTP ${this.status}`;
    }

    get serverMessage(): string {
        const detail = (this.body as { detail?: { message?: string } })?.detail;
        return detail?.message ?? JSON.stringify(this.body);
    }
}

type FetchLike = typeof fetch;

export class GatewayClient {
    token: string | null = null;

    constructor(public baseUrl: string,
                private fetchImpl: FetchLike = fetch) {
        this.baseUrl = baseUrl.replace(/\/+$/, "");
    }

    get wsUrl(): string {
        return this.baseUrl.replace(/^http/, "ws") + "/api/events";
    }

    private async request<T>(method: string, path: string,
                             body?: object): Promise<T> {
        const headers: Record<string, string> = {};
        if (body !== undefined) {
            headers["Content-Type"] = "application/json";
        }
        if (method !== "GET") {
            headers["X-Auth-Token"] = this.token ?? "";
        }
        const resp = await this.fetchImpl(this.baseUrl + path, {
            method,
            headers,
            body: body === undefined ? undefined : JSON.stringify(body),
        });
        const data = await resp.json().catch(() => ({}));
        if (!resp.ok) {
            throw new ApiError(resp.status, data);
        }
        return data as T;
    }

    state(): Promise<StateSnapshot> {
        return this.request("GET", "/api/state");
    }

    async shots(): Promise<number[]> {
        const body = await this.request<{ shots: number[] }>("GET", "/api/shots");
        return body.shots;
    }

    async nodes(shot: number): Promise<NodeInfo[]> {
        const body = await this.request<{ nodes: NodeInfo[] }>(
            "GET", `/api/shot/${shot}/nodes`);
        return body.nodes;
    }

    signal(shot: number, path: string): Promise<SignalData> {
        return this.request("GET",
            `/api/shot/${shot}/signal?path=${encodeURIComponent(path)}`);
    }

    async logbook(shot?: number): Promise<LogbookEntry[]> {
        const query = shot === undefined ? "" : `?shot=${shot}`;
        const body = await this.request<{ entries: LogbookEntry[] }>(
            "GET", `/api/logbook${query}`);
        return body.entries;
    }

    addLogbook(shot: number, author: string, body: string): Promise<{ id: number }> {
        return this.request("POST", "/api/logbook", { shot, author, body });
    }

    engineering(): Promise<Record<string, number>> {
        return this.request("GET", "/api/engineering");
    }

    configure(config: object): Promise<{ state: string }> {
        return this.request("POST", "/api/shot/configure", config);
    }

    arm(): Promise<{ shot: number }> {
        return this.request("POST", "/api/shot/arm");
    }

    trigger(): Promise<{ ok: boolean; shot: number | null }> {
        return this.request("POST", "/api/shot/trigger");
    }

    abort(): Promise<{ ok: boolean }> {
        return this.request("POST", "/api/shot/abort");
    }
}

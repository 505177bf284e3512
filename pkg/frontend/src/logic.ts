// Pure console logic: button enablement, envelope parsing, form
// validation.  Everything here is unit-tested without a DOM.

import type {
    Command,
    ConfigFormFields,
    Envelope,
    SeqStateName,
    TimelineEntry,
} from "./types.js";

// Which operator commands are legal in which sequencer states.  This is a
// verbatim copy of the sequencer's own table; tests/fixtures/
// command_sources.json pins both sides to the same fixture.
export const COMMAND_SOURCES: Record<Command, SeqStateName[]> = {
    configure: ["IDLE", "CONFIGURED", "COOLDOWN"],
    arm: ["CONFIGURED"],
    trigger: ["ARMED"],
    abort: ["ARMED", "PULSING"],
    reset: ["FAULT"],
};

export const SEQ_STATES: SeqStateName[] = [
    "IDLE", "CONFIGURED", "ARMED", "PULSING", "ACQUIRING", "ARCHIVING",
    "COOLDOWN", "FAULT",
];

export function commandEnabled(command: Command, state: SeqStateName | null,
                               haveToken: boolean): boolean {
    if (!haveToken || state === null) {
        return false;  // mutating actions stay dark until a token is entered
    }
    return COMMAND_SOURCES[command].includes(state);
}

// SEQ_STATE payloads look like "PULSING:1" or "IDLE:-".
export function parseSeqState(payload: string): { state: SeqStateName; shot: string } {
    const idx = payload.lastIndexOf(":");
    if (idx < 0) {
        throw new Error(`malformed SEQ_STATE payload: ${payload}`);
    }
    const state = payload.slice(0, idx) as SeqStateName;
    if (!SEQ_STATES.includes(state)) {
        throw new Error(`unknown sequencer state: ${payload}`);
    }
    return { state, shot: payload.slice(idx + 1) };
}

export function appendTimeline(timeline: TimelineEntry[],
                               envelope: Envelope): TimelineEntry[] {
    if (envelope.kind !== "SEQ_STATE" || typeof envelope.payload !== "string") {
        return timeline;
    }
    const { state, shot } = parseSeqState(envelope.payload);
    return [...timeline, { state, shot, wall_t_us: envelope.t_us }];
}

// Client-side mirror of the shot-config bounds; the server revalidates.
export function validateConfigForm(fields: ConfigFormFields): string[] {
    const errors: string[] = [];
    if (!Number.isFinite(fields.pulse_len_us) || fields.pulse_len_us < 1000) {
        errors.push("pulse length must be at least 1000 us");
    }
    if (!Number.isInteger(fields.pulse_len_us)) {
        errors.push("pulse length must be an integer microsecond count");
    } else if (fields.pulse_len_us % 1000 !== 0) {
        errors.push("pulse length must be a whole number of 1 ms cycles");
    }
    if (!Number.isFinite(fields.cooldown_us) || fields.cooldown_us < 0) {
        errors.push("cooldown must be zero or positive");
    }
    if (!Number.isFinite(fields.z_ref)) {
        errors.push("position reference must be a finite number");
    }
    if (!Number.isFinite(fields.n_ref)) {
        errors.push("density reference must be a finite number");
    }
    return errors;
}

// The gateway builds the clock program from pulse_len_us when omitted, so
// the form only ships what it edits.
export function configRequestBody(fields: ConfigFormFields): object {
    return {
        pulse_len_us: fields.pulse_len_us,
        cooldown_us: fields.cooldown_us,
        control: { z_ref: fields.z_ref, n_ref: fields.n_ref },
    };
}

export const MAX_PANELS = 64;

export function canAddPanel(current: number): boolean {
    return current < MAX_PANELS;
}

// Reconnect backoff: 0.5 s, 1 s, 2 s, ... capped at 10 s.
export function reconnectDelayMs(attempt: number): number {
    const base = 500 * Math.pow(2, Math.max(0, attempt));
    return Math.min(base, 10_000);
}

// Rendered sample values must equal the gateway JSON exactly.  JS number
// formatting is shortest-round-trip; the one case String() loses is the
// sign of negative zero, which the gateway's JSON does carry.
export function formatSample(v: number): string {
    if (Object.is(v, -0)) {
        return "-0";
    }
    return String(v);
}

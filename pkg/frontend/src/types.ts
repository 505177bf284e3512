// Shapes exchanged with the gateway; these mirror its JSON exactly.

export type SeqStateName =
    | "IDLE" | "CONFIGURED" | "ARMED" | "PULSING"
    | "ACQUIRING" | "ARCHIVING" | "COOLDOWN" | "FAULT";

export type Command = "configure" | "arm" | "trigger" | "abort" | "reset";

export type EnvelopeKind = "SEQ_STATE" | "SHOT_DONE" | "CLOCK" | "TREE_WRITE";

export interface ClockPayload {
    code: number;
    t_us: number;
}

export interface Envelope {
    kind: EnvelopeKind;
    payload: string | ClockPayload;
    t_us: number;
}

export interface StateSnapshot {
    state: SeqStateName;
    shot: number | null;
    last_shot: number | null;
    sim_time_us: number;
}

export interface NodeInfo {
    path: string;
    usage: "SIGNAL" | "PARAMETER" | "STRUCTURE";
    has_data: boolean;
}

export interface SignalData {
    shot: number;
    path: string;
    units: string;
    t_us: number[];
    v: number[];
}

export interface LogbookEntry {
    id: number;
    shot: number;
    author: string;
    body: string;
    time_us: number;
}

export interface TimelineEntry {
    state: SeqStateName;
    shot: string;          // shot number as text, "-" when none
    wall_t_us: number;
}

export interface ConfigFormFields {
    pulse_len_us: number;
    cooldown_us: number;
    z_ref: number;
    n_ref: number;
}

/** Shapes served by the operator API. */

export type TeState = "online" | "offline";

export interface Te {
  te_id: number;
  state: TeState;
  last_seen: number;
  armed: boolean | null;
}

export interface AlarmEvent {
  event_id: number;
  te_id: number;
  zone: number;
  alarm_type: number;
  te_timestamp: number;
  received_at: number;
  acked_by: string | null;
  acked_at: number | null;
}

export interface StatusFields {
  te_id: number;
  armed: boolean;
  alarm_active: boolean;
  battery: number;
  uptime_s: number;
}

export interface ControlResult {
  request_id: number;
  result: string; // ok | timeout | queued_offline | error
  result_code: number | null;
}

export type StreamRecord =
  | { type: "alarm"; event: AlarmEvent }
  | { type: "te_state_change"; te_id: number; state: TeState; at: number }
  | { type: "end_of_scenario"; at: number };

export const ALARM_TYPE_NAMES: Record<number, string> = {
  1: "IR",
  2: "SMOKE",
  3: "TEMPERATURE",
};

export type ControlCmd = "arm" | "disarm" | "siren_on" | "siren_off" | "reboot";

/**
 * Console state: a pure reducer over API snapshots and stream records.
 *
 * The grid is a function of the latest /tes snapshot plus stream deltas,
 * so reloading the page (fresh snapshot, then deltas) reproduces the same
 * view.  Alarm banners persist until acknowledged and deduplicate on
 * event_id: the same stream record pushed twice renders once.
 */

import { AlarmEvent, StreamRecord, Te, TeState } from "./types.js";

export interface Banner {
  event: AlarmEvent;
  acked: boolean;
  ackedBy: string | null;
}

export interface ConsoleState {
  tes: Map<number, Te>;
  banners: Map<number, Banner>; // keyed by event_id, insertion-ordered
  connected: boolean;
  scenarioEnded: boolean;
  selectedTe: number | null;
}

export function initialState(): ConsoleState {
  return {
    tes: new Map(),
    banners: new Map(),
    connected: false,
    scenarioEnded: false,
    selectedTe: null,
  };
}

export function applySnapshot(state: ConsoleState, tes: Te[]): ConsoleState {
  const next = new Map<number, Te>();
  for (const te of tes) next.set(te.te_id, te);
  return { ...state, tes: next };
}

export function applyEvents(state: ConsoleState, events: AlarmEvent[]): ConsoleState {
  const banners = new Map(state.banners);
  for (const event of events) {
    const existing = banners.get(event.event_id);
    if (existing === undefined) {
      banners.set(event.event_id, {
        event,
        acked: event.acked_by !== null,
        ackedBy: event.acked_by,
      });
    } else if (event.acked_by !== null && !existing.acked) {
      banners.set(event.event_id, { ...existing, acked: true, ackedBy: event.acked_by });
    }
  }
  return { ...state, banners };
}

export function applyStream(state: ConsoleState, record: StreamRecord): ConsoleState {
  switch (record.type) {
    case "alarm":
      return applyEvents(state, [record.event]);
    case "te_state_change": {
      const tes = new Map(state.tes);
      const existing = tes.get(record.te_id);
      if (existing !== undefined) {
        tes.set(record.te_id, { ...existing, state: record.state, last_seen: record.at });
      } else {
        tes.set(record.te_id, {
          te_id: record.te_id,
          state: record.state,
          last_seen: record.at,
          armed: null,
        });
      }
      return { ...state, tes };
    }
    case "end_of_scenario":
      return { ...state, scenarioEnded: true };
  }
}

export function markAcked(
  state: ConsoleState,
  eventId: number,
  operator: string,
): ConsoleState {
  const banner = state.banners.get(eventId);
  if (banner === undefined || banner.acked) return state;
  const banners = new Map(state.banners);
  banners.set(eventId, { ...banner, acked: true, ackedBy: operator });
  return { ...state, banners };
}

export function setConnected(state: ConsoleState, connected: boolean): ConsoleState {
  return state.connected === connected ? state : { ...state, connected };
}

export function selectTe(state: ConsoleState, teId: number | null): ConsoleState {
  return { ...state, selectedTe: teId };
}

// -- view model ---------------------------------------------------------------

export interface Tile {
  teId: number;
  state: TeState;
  color: "black" | "red"; // the on-line/off-line colour convention
  armed: boolean | null;
  alarmBadge: boolean;
  selected: boolean;
}

export function tiles(state: ConsoleState): Tile[] {
  const alarmed = new Set<number>();
  for (const banner of state.banners.values()) {
    if (!banner.acked) alarmed.add(banner.event.te_id);
  }
  return [...state.tes.values()]
    .sort((a, b) => a.te_id - b.te_id)
    .map((te) => ({
      teId: te.te_id,
      state: te.state,
      color: te.state === "online" ? "black" : "red",
      armed: te.armed,
      alarmBadge: alarmed.has(te.te_id),
      selected: state.selectedTe === te.te_id,
    }));
}

export function unackedBanners(state: ConsoleState): Banner[] {
  return [...state.banners.values()].filter((b) => !b.acked);
}

export function allBanners(state: ConsoleState): Banner[] {
  return [...state.banners.values()].reverse(); // newest first
}

/** The alarm tone plays while any banner is unacknowledged. */
export function shouldSound(state: ConsoleState): boolean {
  return unackedBanners(state).length > 0;
}

export function onlineCount(state: ConsoleState): number {
  return [...state.tes.values()].filter((te) => te.state === "online").length;
}

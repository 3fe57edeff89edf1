/**
 * Thin client for the operator API; same-origin by default.
 *
 * The stream uses EventSource with automatic resubscription; every
 * (re)connect triggers onConnect so the owner can refetch the snapshot
 * (the grid is snapshot + deltas).
 */

import {
  AlarmEvent,
  ControlCmd,
  ControlResult,
  StatusFields,
  StreamRecord,
  Te,
} from "./types.js";

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

async function asJson<T>(response: Response): Promise<T> {
  const body = await response.json().catch(() => ({}));
  if (!response.ok) {
    const detail = (body as { error?: string }).error ?? response.statusText;
    throw new ApiError(response.status, detail);
  }
  return body as T;
}

export class ApiClient {
  constructor(private base: string = "") {}

  url(path: string): string {
    return this.base + path;
  }

  listTes(): Promise<Te[]> {
    return fetch(this.url("/tes")).then((r) => asJson<Te[]>(r));
  }

  events(since = 0): Promise<AlarmEvent[]> {
    return fetch(this.url(`/events?since=${since}`)).then((r) =>
      asJson<AlarmEvent[]>(r),
    );
  }

  status(teId: number): Promise<StatusFields> {
    return fetch(this.url(`/tes/${teId}/status`)).then((r) =>
      asJson<StatusFields>(r),
    );
  }

  control(teId: number, cmd: ControlCmd, operator: string): Promise<ControlResult> {
    return fetch(this.url(`/tes/${teId}/control`), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ cmd, operator }),
    }).then((r) => asJson<ControlResult>(r));
  }

  ack(eventId: number, operator: string): Promise<AlarmEvent> {
    return fetch(this.url(`/events/${eventId}/ack`), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ operator }),
    }).then((r) => asJson<AlarmEvent>(r));
  }

  /**
   * Subscribe to the server-push stream. Returns a disposer.
   */
  stream(
    onRecord: (record: StreamRecord) => void,
    onConnect: () => void,
    onDisconnect: () => void,
  ): () => void {
    const source = new EventSource(this.url("/stream"));
    source.onopen = onConnect;
    source.onerror = onDisconnect; // EventSource retries by itself
    source.onmessage = (message) => {
      const record = parseStreamData(message.data);
      if (record !== null) onRecord(record);
    };
    return () => source.close();
  }
}

/** Parse one SSE data payload; null for anything unrecognized. */
export function parseStreamData(data: string): StreamRecord | null {
  let parsed: unknown;
  try {
    parsed = JSON.parse(data);
  } catch {
    return null;
  }
  if (typeof parsed !== "object" || parsed === null) return null;
  const type = (parsed as { type?: string }).type;
  if (type === "alarm" || type === "te_state_change" || type === "end_of_scenario") {
    return parsed as StreamRecord;
  }
  return null;
}

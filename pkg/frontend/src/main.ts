/**
 * Wiring: fetch the snapshot, subscribe to the stream, route clicks to the
 * API, re-render on every state change.  On every (re)connect the snapshot
 * and the event backlog are refetched, so a reload reproduces the view.
 */

import { ApiClient, ApiError } from "./api.js";
import {
  applyEvents,
  applySnapshot,
  applyStream,
  ConsoleState,
  initialState,
  markAcked,
  selectTe,
  setConnected,
  shouldSound,
} from "./state.js";
import { AlarmSound } from "./sound.js";
import { ConsoleView } from "./ui.js";
import { ControlCmd, StatusFields } from "./types.js";

const OPERATOR = "console";

class ConsoleApp {
  private state: ConsoleState = initialState();
  private api = new ApiClient();
  private sound = new AlarmSound();
  private view: ConsoleView;
  private panelStatus: StatusFields | null = null;
  private panelNote = "";

  constructor(root: HTMLElement) {
    this.view = new ConsoleView(root, {
      onSelectTe: (teId) => this.selectTe(teId),
      onAck: (eventId) => this.ack(eventId),
      onControl: (teId, cmd) => this.control(teId, cmd),
      onStatusQuery: (teId) => this.queryStatus(teId),
      onToggleMute: () => {
        this.sound.toggleMute();
        this.render();
      },
    });
    this.api.stream(
      (record) => this.update(applyStream(this.state, record)),
      () => this.onConnected(),
      () => this.update(setConnected(this.state, false)),
    );
  }

  private async onConnected(): Promise<void> {
    this.update(setConnected(this.state, true));
    try {
      const [tes, events] = await Promise.all([
        this.api.listTes(),
        this.api.events(0),
      ]);
      this.update(applyEvents(applySnapshot(this.state, tes), events));
    } catch {
      this.update(setConnected(this.state, false));
    }
  }

  private update(next: ConsoleState): void {
    this.state = next;
    this.render();
  }

  private render(): void {
    this.sound.setActive(shouldSound(this.state));
    this.view.render(this.state, this.sound.isMuted);
    this.view.renderPanel(this.state.selectedTe, this.panelStatus, this.panelNote);
  }

  private selectTe(teId: number): void {
    this.panelStatus = null;
    this.panelNote = "";
    this.update(selectTe(this.state, teId));
    void this.queryStatus(teId);
  }

  private async ack(eventId: number): Promise<void> {
    try {
      const event = await this.api.ack(eventId, OPERATOR);
      this.update(markAcked(this.state, eventId, event.acked_by ?? OPERATOR));
    } catch (error) {
      this.panelNote = describe(error);
      this.render();
    }
  }

  private async control(teId: number, cmd: ControlCmd): Promise<void> {
    this.panelNote = `${cmd}: sending…`;
    this.render();
    try {
      const result = await this.api.control(teId, cmd, OPERATOR);
      this.panelNote =
        result.result === "ok"
          ? `${cmd}: ok`
          : result.result === "queued_offline"
            ? `${cmd}: queued — TE offline`
            : `${cmd}: ${result.result}`;
      if (result.result === "ok") void this.queryStatus(teId);
    } catch (error) {
      this.panelNote = `${cmd}: ${describe(error)}`;
    }
    this.render();
  }

  private async queryStatus(teId: number): Promise<void> {
    try {
      this.panelStatus = await this.api.status(teId);
    } catch (error) {
      this.panelStatus = null;
      this.panelNote = describe(error);
    }
    this.render();
  }
}

function describe(error: unknown): string {
  if (error instanceof ApiError) return `${error.message} (${error.status})`;
  return String(error);
}

new ConsoleApp(document.getElementById("app") as HTMLElement);

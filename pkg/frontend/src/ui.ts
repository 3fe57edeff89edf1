/**
 * DOM layer: renders the grid, banners and control panel from the current
 * state.  Deliberately dumb; everything interesting lives in state.ts.
 */

import { allBanners, ConsoleState, onlineCount, Tile, tiles } from "./state.js";
import { ALARM_TYPE_NAMES, ControlCmd, StatusFields } from "./types.js";

export interface Handlers {
  onSelectTe(teId: number): void;
  onAck(eventId: number): void;
  onControl(teId: number, cmd: ControlCmd): void;
  onStatusQuery(teId: number): void;
  onToggleMute(): void;
}

export class ConsoleView {
  private grid: HTMLElement;
  private bannerList: HTMLElement;
  private panel: HTMLElement;
  private statusBar: HTMLElement;
  private overlay: HTMLElement;
  private muteButton: HTMLButtonElement;

  constructor(root: HTMLElement, private handlers: Handlers) {
    root.innerHTML = "";
    const top = document.createElement("header");
    top.className = "topbar";
    const title = document.createElement("h1");
    title.textContent = "Alarm fleet console";
    this.statusBar = document.createElement("div");
    this.statusBar.className = "statusbar";
    this.muteButton = document.createElement("button");
    this.muteButton.className = "mute";
    this.muteButton.textContent = "mute";
    this.muteButton.onclick = () => this.handlers.onToggleMute();
    const legend = document.createElement("span");
    legend.className = "legend";
    legend.innerHTML =
      '<span class="swatch online"></span>on-line ' +
      '<span class="swatch offline"></span>off-line';
    top.append(title, legend, this.statusBar, this.muteButton);

    this.bannerList = document.createElement("div");
    this.bannerList.className = "banners";
    const body = document.createElement("div");
    body.className = "body";
    this.grid = document.createElement("div");
    this.grid.className = "grid";
    this.panel = document.createElement("aside");
    this.panel.className = "panel";
    body.append(this.grid, this.panel);

    this.overlay = document.createElement("div");
    this.overlay.className = "overlay hidden";
    this.overlay.textContent = "connection lost — retrying";

    root.append(top, this.bannerList, body, this.overlay);
  }

  render(state: ConsoleState, muted: boolean): void {
    this.renderStatus(state, muted);
    this.renderGrid(state);
    this.renderBanners(state);
    this.overlay.classList.toggle("hidden", state.connected);
  }

  private renderStatus(state: ConsoleState, muted: boolean): void {
    const online = onlineCount(state);
    const total = state.tes.size;
    this.statusBar.textContent = state.scenarioEnded
      ? `scenario finished — ${online}/${total} on-line`
      : `${online}/${total} on-line`;
    this.muteButton.textContent = muted ? "unmute" : "mute";
    this.muteButton.classList.toggle("muted", muted);
  }

  private renderGrid(state: ConsoleState): void {
    this.grid.innerHTML = "";
    const all = tiles(state);
    if (all.length === 0) {
      const empty = document.createElement("div");
      empty.className = "empty";
      empty.textContent = "no terminals registered yet";
      this.grid.append(empty);
      return;
    }
    for (const tile of all) {
      this.grid.append(this.tileNode(tile));
    }
  }

  private tileNode(tile: Tile): HTMLElement {
    const node = document.createElement("button");
    node.className = `tile ${tile.state}`;
    if (tile.selected) node.classList.add("selected");
    if (tile.alarmBadge) node.classList.add("alarmed");
    node.dataset.teId = String(tile.teId);
    const id = document.createElement("span");
    id.className = "te-id";
    id.textContent = String(tile.teId);
    const badge = document.createElement("span");
    badge.className = "badge";
    badge.textContent = tile.alarmBadge ? "ALARM" : tile.armed === null ? "" :
      tile.armed ? "armed" : "disarmed";
    node.append(id, badge);
    node.onclick = () => this.handlers.onSelectTe(tile.teId);
    return node;
  }

  private renderBanners(state: ConsoleState): void {
    this.bannerList.innerHTML = "";
    for (const banner of allBanners(state)) {
      const event = banner.event;
      const node = document.createElement("div");
      node.className = banner.acked ? "banner acked" : "banner";
      const text = document.createElement("span");
      const kind = ALARM_TYPE_NAMES[event.alarm_type] ?? `type ${event.alarm_type}`;
      text.textContent =
        `ALARM #${event.event_id} — TE ${event.te_id}, zone ${event.zone}, ${kind}`;
      node.append(text);
      if (banner.acked) {
        const who = document.createElement("span");
        who.className = "acked-by";
        who.textContent = `acked by ${banner.ackedBy}`;
        node.append(who);
      } else {
        const button = document.createElement("button");
        button.textContent = "acknowledge";
        button.onclick = () => this.handlers.onAck(event.event_id);
        node.append(button);
      }
      this.bannerList.append(node);
    }
  }

  renderPanel(
    teId: number | null,
    status: StatusFields | null,
    note: string,
  ): void {
    this.panel.innerHTML = "";
    if (teId === null) {
      const hint = document.createElement("p");
      hint.className = "hint";
      hint.textContent = "select a terminal to control it";
      this.panel.append(hint);
      return;
    }
    const heading = document.createElement("h2");
    heading.textContent = `TE ${teId}`;
    this.panel.append(heading);

    const buttons = document.createElement("div");
    buttons.className = "controls";
    const cmds: ControlCmd[] = ["arm", "disarm", "siren_on", "siren_off", "reboot"];
    for (const cmd of cmds) {
      const button = document.createElement("button");
      button.textContent = cmd.replace("_", " ");
      button.onclick = () => this.handlers.onControl(teId, cmd);
      buttons.append(button);
    }
    const query = document.createElement("button");
    query.textContent = "query status";
    query.onclick = () => this.handlers.onStatusQuery(teId);
    buttons.append(query);
    this.panel.append(buttons);

    if (status !== null) {
      const dl = document.createElement("dl");
      dl.className = "status";
      const rows: [string, string][] = [
        ["armed", status.armed ? "yes" : "no"],
        ["alarm active", status.alarm_active ? "yes" : "no"],
        ["battery", `${status.battery}/15`],
        ["uptime", `${status.uptime_s} s`],
      ];
      for (const [k, v] of rows) {
        const dt = document.createElement("dt");
        dt.textContent = k;
        const dd = document.createElement("dd");
        dd.textContent = v;
        dl.append(dt, dd);
      }
      this.panel.append(dl);
    }
    if (note) {
      const p = document.createElement("p");
      p.className = "note";
      p.textContent = note;
      this.panel.append(p);
    }
  }
}

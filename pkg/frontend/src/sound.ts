/**
 * Repeating alarm tone.  Plays while any banner is unacknowledged, stops
 * on ack or mute.  The tone itself is two short beeps per second from a
 * WebAudio oscillator; the mute toggle survives start/stop cycles.
 */

type AudioContextCtor = typeof AudioContext;

export class AlarmSound {
  private context: AudioContext | null = null;
  private timer: ReturnType<typeof setInterval> | null = null;
  private muted = false;
  private active = false;

  constructor(private contextCtor: AudioContextCtor | null = defaultCtor()) {}

  get isMuted(): boolean {
    return this.muted;
  }

  get isActive(): boolean {
    return this.active;
  }

  /** True when the tone is actually audible right now. */
  get isAudible(): boolean {
    return this.active && !this.muted && this.contextCtor !== null;
  }

  setActive(active: boolean): void {
    this.active = active;
    this.sync();
  }

  toggleMute(): boolean {
    this.muted = !this.muted;
    this.sync();
    return this.muted;
  }

  private sync(): void {
    if (this.isAudible) this.startTimer();
    else this.stopTimer();
  }

  private startTimer(): void {
    if (this.timer !== null || this.contextCtor === null) return;
    if (this.context === null) this.context = new this.contextCtor();
    this.beep();
    this.timer = setInterval(() => this.beep(), 1000);
  }

  private stopTimer(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }

  private beep(): void {
    const ctx = this.context;
    if (ctx === null) return;
    for (const offset of [0, 0.25]) {
      const osc = ctx.createOscillator();
      const gain = ctx.createGain();
      osc.type = "square";
      osc.frequency.value = 880;
      gain.gain.setValueAtTime(0.12, ctx.currentTime + offset);
      gain.gain.exponentialRampToValueAtTime(0.001, ctx.currentTime + offset + 0.18);
      osc.connect(gain).connect(ctx.destination);
      osc.start(ctx.currentTime + offset);
      osc.stop(ctx.currentTime + offset + 0.2);
    }
  }
}

function defaultCtor(): AudioContextCtor | null {
  if (typeof window === "undefined") return null;
  return window.AudioContext ?? null;
}

import { describe, expect, it } from "vitest";

import { AlarmSound } from "../src/sound.js";

// constructed with no AudioContext: the control logic still runs, it just
// cannot be audible

describe("alarm tone control", () => {
  it("is silent until activated", () => {
    const sound = new AlarmSound(null);
    expect(sound.isActive).toBe(false);
    sound.setActive(true);
    expect(sound.isActive).toBe(true);
    expect(sound.isAudible).toBe(false); // no audio backend here
  });

  it("mute survives activation cycles", () => {
    const sound = new AlarmSound(null);
    expect(sound.toggleMute()).toBe(true);
    sound.setActive(true);
    sound.setActive(false);
    sound.setActive(true);
    expect(sound.isMuted).toBe(true);
    expect(sound.toggleMute()).toBe(false);
  });
});

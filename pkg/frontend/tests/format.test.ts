import { describe, expect, it } from "vitest";

import { formatPercent } from "../src/format.js";

describe("formatPercent", () => {
  it("rounds to whole percentages", () => {
    expect(formatPercent(0.914)).toBe("91%");
    expect(formatPercent(0.9)).toBe("90%");
    expect(formatPercent(0.004)).toBe("0%");
  });

  it("rounds halves away from zero", () => {
    expect(formatPercent(0.915)).toBe("92%");
    expect(formatPercent(0.125)).toBe("13%");
  });

  it("handles the endpoints", () => {
    expect(formatPercent(0)).toBe("0%");
    expect(formatPercent(1)).toBe("100%");
  });
});

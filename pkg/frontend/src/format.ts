/** Confidence shown as a whole percentage, half rounded away from zero. */
export function formatPercent(confidence: number): string {
  const scaled = confidence * 100;
  const rounded = Math.sign(scaled) * Math.round(Math.abs(scaled));
  // normalize -0 so the display never shows "-0%"
  return `${rounded === 0 ? 0 : rounded}%`;
}

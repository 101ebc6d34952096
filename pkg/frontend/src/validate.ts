// Client-side command validation: invalid commands never reach the wire.

export function validateWeight(value: number): string | null {
  if (!Number.isFinite(value)) return "weight must be a number";
  if (value < 0 || value > 1) return "weight must lie in [0, 1]";
  return null;
}

export function validateIntensity(value: number): string | null {
  if (!Number.isFinite(value)) return "intensity must be a number";
  if (value < 0 || value > 1) return "intensity must lie in [0, 1]";
  return null;
}

export function validateMode(mode: string): string | null {
  return mode === "supervised" || mode === "auto"
    ? null
    : "mode must be 'supervised' or 'auto'";
}

export function validateSpeed(speed: number): string | null {
  if (!Number.isFinite(speed) || speed <= 0) return "speed must be positive";
  return null;
}

/** Studio state: slider values that can never leave the served bounds.
 *
 * Every write path clamps against the bounds from /model/meta, so any vector
 * handed to the render client is in bounds by construction. The last vector
 * the service acknowledged is tracked separately, so the UI can tell "what the
 * sliders say" apart from "what the image shows" while a render is pending.
 */

import type { ModelMeta, Preset } from './types.js'

export class StudioState {
  private readonly lower: number
  private readonly upper: number
  private values: number[]
  private acknowledged: number[] | null = null

  constructor(readonly meta: ModelMeta, initial?: number[]) {
    const [lower, upper] = meta.expression_bounds
    this.lower = lower
    this.upper = upper
    this.values = new Array(meta.n_expression).fill(this.clamp(0))
    if (initial) this.setAll(initial)
  }

  private clamp(value: number): number {
    if (!Number.isFinite(value)) return this.lower
    return Math.min(this.upper, Math.max(this.lower, value))
  }

  /** Clamp and store one slider; returns the value actually stored. */
  setSlider(index: number, value: number): number {
    if (index < 0 || index >= this.values.length) {
      throw new RangeError(`no expression unit ${index}`)
    }
    const clamped = this.clamp(value)
    this.values[index] = clamped
    return clamped
  }

  /** Replace the whole vector atomically (clamping each entry). */
  setAll(values: number[]): void {
    if (values.length !== this.values.length) {
      throw new RangeError(
        `expected ${this.values.length} coefficients, got ${values.length}`,
      )
    }
    this.values = values.map((v) => this.clamp(v))
  }

  loadPreset(preset: Preset): void {
    this.setAll(preset.expression)
  }

  /** Defensive copy; always within bounds. */
  snapshot(): number[] {
    return this.values.slice()
  }

  /** Record the vector of the render the service last answered. */
  acknowledge(values: number[]): void {
    this.acknowledged = values.slice()
  }

  lastAcknowledged(): number[] | null {
    return this.acknowledged ? this.acknowledged.slice() : null
  }

  /** True when the shown image matches the sliders (nothing left to render). */
  settled(): boolean {
    if (this.acknowledged === null) return false
    return (
      this.acknowledged.length === this.values.length &&
      this.acknowledged.every((v, i) => v === this.values[i])
    )
  }
}

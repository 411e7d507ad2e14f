import { describe, expect, it } from 'vitest'

import { StudioState } from '../src/state.js'
import type { ModelMeta } from '../src/types.js'

const META: ModelMeta = {
  model: 'small',
  n_vertices: 120,
  n_identity: 6,
  n_expression: 5,
  n_landmarks: 20,
  expression_bounds: [0, 1],
  semantic_legend: ['other', 'eyes', 'lips'],
  expression_groups: ['other', 'eyes', 'eyes', 'lips', 'other'],
}

describe('StudioState', () => {
  it('starts at the lower bound and accepts a fitted vector', () => {
    const state = new StudioState(META)
    expect(state.snapshot()).toEqual([0, 0, 0, 0, 0])
    const fitted = new StudioState(META, [1, 0.5, 0, 0, 0.25])
    expect(fitted.snapshot()).toEqual([1, 0.5, 0, 0, 0.25])
  })

  it('clamps every write path so snapshots never leave the bounds', () => {
    const state = new StudioState(META, [0, 2, -1, 0.5, 0])
    expect(state.snapshot()).toEqual([0, 1, 0, 0.5, 0])

    expect(state.setSlider(2, 1.7)).toBe(1)
    expect(state.setSlider(2, -0.2)).toBe(0)
    expect(state.setSlider(2, Number.NaN)).toBe(0)
    state.setAll([9, 9, 9, 9, -9])
    for (const value of state.snapshot()) {
      expect(value).toBeGreaterThanOrEqual(0)
      expect(value).toBeLessThanOrEqual(1)
    }
  })

  it('rejects wrong-length vectors and unknown slider indices', () => {
    const state = new StudioState(META)
    expect(() => state.setAll([0, 0])).toThrow(RangeError)
    expect(() => state.setSlider(5, 0.5)).toThrow(RangeError)
    expect(() => state.setSlider(-1, 0.5)).toThrow(RangeError)
  })

  it('snapshots are defensive copies', () => {
    const state = new StudioState(META, [0.1, 0.2, 0.3, 0.4, 0.5])
    const snap = state.snapshot()
    snap[0] = 99
    expect(state.snapshot()[0]).toBe(0.1)
  })

  it('tracks the last acknowledged render separately from the sliders', () => {
    const state = new StudioState(META, [0.5, 0, 0, 0, 0])
    expect(state.settled()).toBe(false)

    state.acknowledge(state.snapshot())
    expect(state.settled()).toBe(true)
    expect(state.lastAcknowledged()).toEqual([0.5, 0, 0, 0, 0])

    state.setSlider(1, 0.9)
    expect(state.settled()).toBe(false) // image now lags the sliders
    state.acknowledge(state.snapshot())
    expect(state.settled()).toBe(true)
  })

  it('applies presets atomically with clamping', () => {
    const state = new StudioState(META)
    state.loadPreset({ expression: [0.2, 0.4, 1.5, 0.8, -0.1], name: 'smile' })
    expect(state.snapshot()).toEqual([0.2, 0.4, 1, 0.8, 0])
  })
})

/** Preset files: named coefficient vectors in the transfer CLI's format.
 *
 * A preset is `{"expression": [..], "name"?: ".."}` — exactly what
 * `morphfit transfer --target-expression` reads, so anything exported here
 * feeds the offline pipeline unchanged.
 */

import type { Preset } from './types.js'

export class PresetError extends Error {
  constructor(message: string) {
    super(message)
    this.name = 'PresetError'
  }
}

export function parsePreset(text: string, expectedLength: number): Preset {
  let raw: unknown
  try {
    raw = JSON.parse(text)
  } catch {
    throw new PresetError('preset is not valid JSON')
  }
  if (typeof raw !== 'object' || raw === null || Array.isArray(raw)) {
    throw new PresetError('preset must be a JSON object')
  }
  const record = raw as Record<string, unknown>
  const expression = record['expression']
  if (!Array.isArray(expression)) {
    throw new PresetError('preset is missing an "expression" array')
  }
  if (expression.length !== expectedLength) {
    throw new PresetError(
      `expression has ${expression.length} coefficients, expected ${expectedLength}`,
    )
  }
  if (!expression.every((v) => typeof v === 'number' && Number.isFinite(v))) {
    throw new PresetError('expression coefficients must be finite numbers')
  }
  const preset: Preset = { expression: expression.slice() }
  if (typeof record['name'] === 'string') preset.name = record['name']
  return preset
}

export function serializePreset(expression: number[], name?: string): string {
  const body: Preset = { expression: expression.slice() }
  if (name !== undefined && name !== '') body.name = name
  return JSON.stringify(body, null, 2) + '\n'
}

/** In-memory named presets with save/load/export; order of saving preserved. */
export class PresetList {
  private readonly items = new Map<string, number[]>()

  save(name: string, expression: number[]): void {
    if (!name) throw new PresetError('preset needs a name')
    this.items.set(name, expression.slice())
  }

  load(name: string): number[] {
    const found = this.items.get(name)
    if (!found) throw new PresetError(`no preset named "${name}"`)
    return found.slice()
  }

  remove(name: string): void {
    this.items.delete(name)
  }

  names(): string[] {
    return [...this.items.keys()]
  }

  export(name: string): string {
    return serializePreset(this.load(name), name)
  }
}

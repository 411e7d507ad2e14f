/** DOM construction for the studio: slider groups, blend options, banner.
 *
 * Pure DOM + injected callbacks; no network code lives here. Sliders are
 * grouped by each unit's dominant semantic region as served by /model/meta,
 * in legend order, so the coefficient panel stays navigable.
 */

import type { BlendOptions, ModelMeta } from './types.js'

export interface SliderPanel {
  /** Reflect a (clamped) value back into one slider and its readout. */
  set(index: number, value: number): void
  setAll(values: number[]): void
  readonly inputs: HTMLInputElement[]
}

export function buildSliderPanel(
  root: HTMLElement,
  meta: ModelMeta,
  initial: number[],
  onInput: (index: number, value: number) => void,
): SliderPanel {
  const [lower, upper] = meta.expression_bounds
  const inputs: HTMLInputElement[] = []
  const readouts: HTMLElement[] = []

  const groups = new Map<string, number[]>()
  meta.expression_groups.forEach((group, index) => {
    const members = groups.get(group) ?? []
    members.push(index)
    groups.set(group, members)
  })

  // Legend order first, then any group name the legend does not mention.
  const order = [
    ...meta.semantic_legend.filter((name) => groups.has(name)),
    ...[...groups.keys()].filter((name) => !meta.semantic_legend.includes(name)),
  ]

  for (const groupName of order) {
    const section = document.createElement('section')
    section.className = 'slider-group'
    section.dataset['group'] = groupName
    const heading = document.createElement('h3')
    heading.textContent = groupName
    section.appendChild(heading)

    for (const index of groups.get(groupName) ?? []) {
      const row = document.createElement('label')
      row.className = 'slider-row'

      const title = document.createElement('span')
      title.textContent = `e${index}`
      row.appendChild(title)

      const input = document.createElement('input')
      input.type = 'range'
      input.min = String(lower)
      input.max = String(upper)
      input.step = '0.01'
      input.value = String(initial[index] ?? lower)
      input.dataset['unit'] = String(index)
      input.addEventListener('input', () => {
        onInput(index, Number(input.value))
      })
      row.appendChild(input)

      const readout = document.createElement('span')
      readout.className = 'readout'
      readout.textContent = Number(input.value).toFixed(2)
      row.appendChild(readout)

      inputs[index] = input
      readouts[index] = readout
      section.appendChild(row)
    }
    root.appendChild(section)
  }

  const set = (index: number, value: number): void => {
    const input = inputs[index]
    const readout = readouts[index]
    if (!input || !readout) return
    input.value = String(value)
    readout.textContent = value.toFixed(2)
  }
  return {
    set,
    setAll(values) {
      values.forEach((value, index) => set(index, value))
    },
    inputs,
  }
}

export interface BlendPanel {
  current(): BlendOptions
}

export function buildBlendPanel(
  root: HTMLElement,
  onChange: () => void,
): BlendPanel {
  const section = document.createElement('section')
  section.className = 'blend-panel'
  const heading = document.createElement('h3')
  heading.textContent = 'blend'
  section.appendChild(heading)

  const sigma = document.createElement('input')
  sigma.type = 'number'
  sigma.step = '0.5'
  sigma.min = '0.1'
  sigma.placeholder = 'sigma2 (default 4)'
  sigma.dataset['option'] = 'sigma2'

  const kernel = document.createElement('input')
  kernel.type = 'number'
  kernel.step = '1'
  kernel.min = '1'
  kernel.placeholder = 'margin kernel (default 12)'
  kernel.dataset['option'] = 'kernel_size'

  const orient = document.createElement('input')
  orient.type = 'checkbox'
  orient.checked = true
  orient.dataset['option'] = 'alpha_weights_input'
  const orientLabel = document.createElement('label')
  orientLabel.appendChild(orient)
  orientLabel.appendChild(document.createTextNode(' alpha weights input'))

  for (const el of [sigma, kernel]) {
    el.addEventListener('change', onChange)
    section.appendChild(el)
  }
  orient.addEventListener('change', onChange)
  section.appendChild(orientLabel)
  root.appendChild(section)

  return {
    current(): BlendOptions {
      const options: BlendOptions = {}
      if (sigma.value !== '') options.sigma2 = Number(sigma.value)
      if (kernel.value !== '') options.kernel_size = Number(kernel.value)
      if (!orient.checked) options.alpha_weights_input = false
      return options
    },
  }
}

export interface Banner {
  show(message: string): void
  clear(): void
}

/** Non-blocking error strip: overlays nothing and disables nothing. */
export function buildBanner(root: HTMLElement): Banner {
  const strip = document.createElement('div')
  strip.className = 'banner'
  strip.setAttribute('role', 'alert')
  strip.hidden = true

  const text = document.createElement('span')
  strip.appendChild(text)

  const dismiss = document.createElement('button')
  dismiss.textContent = 'dismiss'
  dismiss.addEventListener('click', () => {
    strip.hidden = true
  })
  strip.appendChild(dismiss)

  root.prepend(strip)
  return {
    show(message) {
      text.textContent = message
      strip.hidden = false
    },
    clear() {
      strip.hidden = true
    },
  }
}

export interface Viewport {
  showImage(blob: Blob): void
  showStatus(text: string): void
}

export function buildViewport(root: HTMLElement): Viewport {
  const figure = document.createElement('figure')
  figure.className = 'viewport'
  const img = document.createElement('img')
  img.alt = 'rendered face'
  figure.appendChild(img)
  const status = document.createElement('figcaption')
  figure.appendChild(status)
  root.appendChild(figure)

  let url: string | null = null
  return {
    showImage(blob) {
      const next = URL.createObjectURL(blob)
      img.src = next
      if (url !== null) URL.revokeObjectURL(url)
      url = next
    },
    showStatus(text) {
      status.textContent = text
    },
  }
}

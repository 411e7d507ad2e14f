/** Studio bootstrap: open a session from landmark/image files, wire sliders
 * through the debounced scheduler, keep presets in the CLI's file format.
 */

import { ServiceError, StudioClient } from './api.js'
import { parsePreset, PresetError, PresetList, serializePreset } from './presets.js'
import { RenderScheduler } from './schedule.js'
import { StudioState } from './state.js'
import {
  buildBanner,
  buildBlendPanel,
  buildSliderPanel,
  buildViewport,
} from './ui.js'
import type { BlendOptions } from './types.js'

interface RenderSnapshot {
  expression: number[]
  blend: BlendOptions
}

function serviceBase(): string {
  const params = new URLSearchParams(window.location.search)
  return params.get('service') ?? ''
}

async function fileText(input: HTMLInputElement): Promise<string | null> {
  const file = input.files?.[0]
  if (!file) return null
  return file.text()
}

async function fileBase64(input: HTMLInputElement): Promise<string | null> {
  const file = input.files?.[0]
  if (!file) return null
  const bytes = new Uint8Array(await file.arrayBuffer())
  let binary = ''
  for (const byte of bytes) binary += String.fromCharCode(byte)
  return btoa(binary)
}

function downloadText(filename: string, text: string): void {
  const anchor = document.createElement('a')
  anchor.href = URL.createObjectURL(new Blob([text], { type: 'application/json' }))
  anchor.download = filename
  anchor.click()
  URL.revokeObjectURL(anchor.href)
}

export async function startStudio(root: HTMLElement): Promise<void> {
  const client = new StudioClient(serviceBase())
  const banner = buildBanner(root)

  const meta = await client.modelMeta().catch((error) => {
    banner.show(`service unreachable: ${String(error)}`)
    throw error
  })

  const loader = document.createElement('form')
  loader.className = 'loader'
  const landmarksInput = document.createElement('input')
  landmarksInput.type = 'file'
  landmarksInput.accept = '.json'
  const imageInput = document.createElement('input')
  imageInput.type = 'file'
  imageInput.accept = '.png'
  const start = document.createElement('button')
  start.type = 'submit'
  start.textContent = 'start session'
  loader.append('landmarks.json ', landmarksInput, ' image (optional) ', imageInput, start)
  root.appendChild(loader)

  loader.addEventListener('submit', (event) => {
    event.preventDefault()
    void openSession()
  })

  async function openSession(): Promise<void> {
    const landmarksText = await fileText(landmarksInput)
    if (landmarksText === null) {
      banner.show('choose a landmarks.json file first')
      return
    }
    let landmarks: number[][]
    try {
      const parsed = JSON.parse(landmarksText)
      landmarks = parsed.points
      if (!Array.isArray(landmarks)) throw new Error('missing "points"')
    } catch (error) {
      banner.show(`could not read landmarks: ${String(error)}`)
      return
    }
    const image = await fileBase64(imageInput)
    try {
      const fit = await client.createSession({
        landmarks,
        ...(image ? { image_png: image } : {}),
      })
      banner.clear()
      loader.hidden = true
      buildEditor(fit.session, fit.expression)
    } catch (error) {
      banner.show(
        error instanceof ServiceError
          ? `fit failed (${error.status}): ${error.message}`
          : `fit failed: ${String(error)}`,
      )
    }
  }

  function buildEditor(session: string, fitted: number[]): void {
    const state = new StudioState(meta, fitted)
    const viewport = buildViewport(root)

    const scheduler = new RenderScheduler<RenderSnapshot>({
      perform: async (snapshot) => {
        const result = await client.render(session, snapshot.expression, snapshot.blend)
        state.acknowledge(snapshot.expression)
        viewport.showImage(result.blob)
        viewport.showStatus(
          `${result.renderMillis.toFixed(1)} ms, ` +
            `max displacement ${result.maxDisplacementMm.toFixed(2)} mm`,
        )
        banner.clear()
      },
      onError: (error) => {
        banner.show(
          error instanceof ServiceError
            ? `render failed (${error.status}): ${error.message}`
            : `render failed: ${String(error)}`,
        )
      },
    })

    const requestRender = (): void => {
      scheduler.request({ expression: state.snapshot(), blend: blendPanel.current() })
    }

    const sliders = buildSliderPanel(root, meta, state.snapshot(), (index, raw) => {
      const clamped = state.setSlider(index, raw)
      sliders.set(index, clamped)
      requestRender()
    })
    const blendPanel = buildBlendPanel(root, requestRender)

    const presets = new PresetList()
    const bar = document.createElement('form')
    bar.className = 'preset-bar'
    const nameInput = document.createElement('input')
    nameInput.placeholder = 'preset name'
    const saveButton = document.createElement('button')
    saveButton.textContent = 'save'
    saveButton.type = 'submit'
    const select = document.createElement('select')
    const loadButton = document.createElement('button')
    loadButton.textContent = 'load'
    loadButton.type = 'button'
    const exportButton = document.createElement('button')
    exportButton.textContent = 'export'
    exportButton.type = 'button'
    const importInput = document.createElement('input')
    importInput.type = 'file'
    importInput.accept = '.json'
    bar.append(nameInput, saveButton, select, loadButton, exportButton, importInput)
    root.appendChild(bar)

    const refreshSelect = (): void => {
      select.replaceChildren(
        ...presets.names().map((name) => new Option(name, name)),
      )
    }

    bar.addEventListener('submit', (event) => {
      event.preventDefault()
      try {
        presets.save(nameInput.value, state.snapshot())
        refreshSelect()
        select.value = nameInput.value
      } catch (error) {
        banner.show(String(error))
      }
    })
    loadButton.addEventListener('click', () => {
      try {
        state.setAll(presets.load(select.value))
        sliders.setAll(state.snapshot())
        requestRender()
        scheduler.flush()
      } catch (error) {
        banner.show(String(error))
      }
    })
    exportButton.addEventListener('click', () => {
      const name = select.value || nameInput.value || 'preset'
      downloadText(`${name}.json`, serializePreset(state.snapshot(), name))
    })
    importInput.addEventListener('change', () => {
      void (async () => {
        const text = await fileText(importInput)
        if (text === null) return
        try {
          const preset = parsePreset(text, meta.n_expression)
          state.loadPreset(preset)
          sliders.setAll(state.snapshot())
          requestRender()
          scheduler.flush()
          banner.clear()
        } catch (error) {
          banner.show(
            error instanceof PresetError ? error.message : String(error),
          )
        }
      })()
    })

    requestRender()
    scheduler.flush()
  }
}

const mount = document.getElementById('studio')
if (mount) {
  void startStudio(mount)
}

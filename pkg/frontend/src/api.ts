/** Typed fetch client for the three service routes the studio uses. */

import type {
  BlendOptions,
  FitSummary,
  ModelMeta,
  RenderResponse,
  SessionRequest,
} from './types.js'

export class ServiceError extends Error {
  constructor(readonly status: number, detail: string) {
    super(detail)
    this.name = 'ServiceError'
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>

async function errorDetail(response: Response): Promise<string> {
  try {
    const body = await response.json()
    if (typeof body.detail === 'string') return body.detail
    return JSON.stringify(body.detail ?? body)
  } catch {
    return response.statusText || `HTTP ${response.status}`
  }
}

export class StudioClient {
  private readonly fetchFn: FetchLike

  constructor(readonly baseUrl: string = '', fetchFn?: FetchLike) {
    // Bind lazily so a fetch mocked in later (as tests do) is still picked up.
    this.fetchFn = fetchFn ?? ((input, init) => fetch(input, init))
  }

  async modelMeta(model?: string): Promise<ModelMeta> {
    const query = model ? `?model=${encodeURIComponent(model)}` : ''
    return this.json<ModelMeta>(`/model/meta${query}`, { method: 'GET' })
  }

  async createSession(request: SessionRequest): Promise<FitSummary> {
    return this.json<FitSummary>('/sessions', {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify(request),
    })
  }

  async render(
    session: string,
    expression: number[],
    blend?: BlendOptions,
  ): Promise<RenderResponse> {
    const body: { expression: number[]; blend?: BlendOptions } = { expression }
    if (blend && Object.keys(blend).length > 0) body.blend = blend
    const response = await this.fetchFn(`${this.baseUrl}/sessions/${session}/render`, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify(body),
    })
    if (!response.ok) {
      throw new ServiceError(response.status, await errorDetail(response))
    }
    return {
      blob: await response.blob(),
      renderMillis: Number(response.headers.get('X-Render-Millis') ?? NaN),
      maxDisplacementMm: Number(response.headers.get('X-Max-Displacement-Mm') ?? NaN),
    }
  }

  private async json<T>(path: string, init: RequestInit): Promise<T> {
    const response = await this.fetchFn(`${this.baseUrl}${path}`, init)
    if (!response.ok) {
      throw new ServiceError(response.status, await errorDetail(response))
    }
    return (await response.json()) as T
  }
}

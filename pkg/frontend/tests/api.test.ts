import { describe, expect, it, vi } from 'vitest'

import { ServiceError, StudioClient } from '../src/api.js'

const META = {
  model: 'synthetic',
  n_vertices: 1220,
  n_identity: 50,
  n_expression: 46,
  n_landmarks: 96,
  expression_bounds: [0, 1],
  semantic_legend: ['other', 'eyes'],
  expression_groups: ['other', 'eyes'],
}

function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { 'content-type': 'application/json' },
  })
}

describe('StudioClient', () => {
  it('fetches model metadata from the configured base url', async () => {
    const fetchFn = vi.fn().mockResolvedValue(jsonResponse(META))
    const client = new StudioClient('http://svc:8000', fetchFn)
    const meta = await client.modelMeta()
    expect(meta.n_expression).toBe(46)
    expect(fetchFn).toHaveBeenCalledWith(
      'http://svc:8000/model/meta',
      expect.objectContaining({ method: 'GET' }),
    )
  })

  it('posts landmarks as JSON and returns the fit summary', async () => {
    const summary = {
      session: 's000001',
      landmark_rmse: 0.01,
      iterations: 12,
      converged: true,
      identity: [1, 0],
      expression: [0.5, 0.5],
    }
    const fetchFn = vi.fn().mockResolvedValue(jsonResponse(summary, 201))
    const client = new StudioClient('', fetchFn)
    const fit = await client.createSession({ landmarks: [[1, 2], [3, 4]] })
    expect(fit.session).toBe('s000001')

    const [url, init] = fetchFn.mock.calls[0]!
    expect(url).toBe('/sessions')
    expect(JSON.parse(init.body)).toEqual({ landmarks: [[1, 2], [3, 4]] })
  })

  it('parses the PNG blob and metric headers from a render', async () => {
    const png = new Uint8Array([0x89, 0x50, 0x4e, 0x47])
    const fetchFn = vi.fn().mockResolvedValue(
      new Response(png, {
        status: 200,
        headers: {
          'content-type': 'image/png',
          'X-Render-Millis': '12.34',
          'X-Max-Displacement-Mm': '5.600000',
        },
      }),
    )
    const client = new StudioClient('', fetchFn)
    const result = await client.render('s000001', [0.5, 0.5])
    expect(result.renderMillis).toBeCloseTo(12.34)
    expect(result.maxDisplacementMm).toBeCloseTo(5.6)
    expect(new Uint8Array(await result.blob.arrayBuffer())).toEqual(png)

    const [url, init] = fetchFn.mock.calls[0]!
    expect(url).toBe('/sessions/s000001/render')
    expect(JSON.parse(init.body)).toEqual({ expression: [0.5, 0.5] })
  })

  it('only sends blend options that are actually set', async () => {
    const fetchFn = vi
      .fn()
      .mockImplementation(() => Promise.resolve(new Response(new Uint8Array([1]))))
    const client = new StudioClient('', fetchFn)
    await client.render('s1', [0.1], { sigma2: 2.5 })
    await client.render('s1', [0.1], {})
    expect(JSON.parse(fetchFn.mock.calls[0]![1].body)).toEqual({
      expression: [0.1],
      blend: { sigma2: 2.5 },
    })
    expect(JSON.parse(fetchFn.mock.calls[1]![1].body)).toEqual({
      expression: [0.1],
    })
  })

  it('turns service failures into ServiceError with status and detail', async () => {
    const fetchFn = vi
      .fn()
      .mockResolvedValueOnce(jsonResponse({ detail: 'expression must have length 46' }, 422))
      .mockResolvedValueOnce(new Response('gateway soup', { status: 502 }))
    const client = new StudioClient('', fetchFn)

    const failure = await client.render('s1', [0]).catch((e) => e)
    expect(failure).toBeInstanceOf(ServiceError)
    expect(failure.status).toBe(422)
    expect(failure.message).toBe('expression must have length 46')

    const gateway = await client.modelMeta().catch((e) => e)
    expect(gateway).toBeInstanceOf(ServiceError)
    expect(gateway.status).toBe(502)
  })
})

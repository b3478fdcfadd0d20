import assert from 'node:assert/strict'
import test from 'node:test'

import { ApiClient, ApiError, type FetchLike, type MinimalResponse } from '../src/api.js'

interface Recorded {
  url: string
  method: string
  body: unknown
}

function stub(requests: Recorded[], payload: unknown = {}, ok = true): FetchLike {
  return async (url, init): Promise<MinimalResponse> => {
    requests.push({
      url,
      method: init?.method ?? 'GET',
      body: init?.body ? JSON.parse(init.body) : null,
    })
    return { ok, status: ok ? 200 : 400, json: async () => payload }
  }
}

test('createSession posts the manifest path and options', async () => {
  const requests: Recorded[] = []
  const api = new ApiClient('http://svc', stub(requests, { session_id: 's0001' }))
  const created = await api.createSession('/data/manifest.json', { seed: 7, depth: 4 })
  assert.equal(created.session_id, 's0001')
  assert.deepEqual(requests[0], {
    url: 'http://svc/sessions',
    method: 'POST',
    body: { manifest_path: '/data/manifest.json', seed: 7, depth: 4 },
  })
})

test('review posts frame, class, and action', async () => {
  const requests: Recorded[] = []
  const api = new ApiClient('', stub(requests, { decision: 'accepted', pending_remaining: 2 }))
  await api.review('s0001', '000003', 2, 'accept')
  assert.deepEqual(requests[0], {
    url: '/sessions/s0001/review',
    method: 'POST',
    body: { frame_id: '000003', class_id: 2, action: 'accept' },
  })
})

test('propagate omits depth unless overridden', async () => {
  const requests: Recorded[] = []
  const api = new ApiClient('', stub(requests, { job_id: 'j0001' }))
  await api.propagate('s0001')
  await api.propagate('s0001', 0)
  assert.deepEqual(requests[0]!.body, {})
  assert.deepEqual(requests[1]!.body, { depth: 0 })
})

test('urls embed the session id where the service expects it', () => {
  const api = new ApiClient('http://svc')
  assert.equal(
    api.frameImageUrl('s0001', '000002'),
    'http://svc/frames/000002/image?session_id=s0001',
  )
  assert.equal(api.maskUrl('s0001', '000002', 3), 'http://svc/sessions/s0001/masks/000002/3')
  assert.equal(api.exportUrl('s0001'), 'http://svc/sessions/s0001/export')
})

test('non-ok responses raise ApiError with the status', async () => {
  const api = new ApiClient('', stub([], { detail: 'nope' }, false))
  await assert.rejects(
    () => api.frames('s0001'),
    (err: unknown) => err instanceof ApiError && err.status === 400,
  )
})

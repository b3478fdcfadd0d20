/**
 * Typed client for the annotation service. All label math happens server
 * side; this module only moves JSON and PNG payloads. The fetch
 * implementation is injectable so tests can record requests.
 */

import type { ClickResponse, FramesResponse, JobResponse, Polarity } from './types.js'

export interface MinimalResponse {
  ok: boolean
  status: number
  json(): Promise<unknown>
}

export type FetchLike = (
  url: string,
  init?: { method?: string; headers?: Record<string, string>; body?: string },
) => Promise<MinimalResponse>

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message)
  }
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async request<T>(path: string, init?: Parameters<FetchLike>[1]): Promise<T> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, init)
    if (!response.ok) {
      const detail = await response
        .json()
        .then((body) => JSON.stringify(body))
        .catch(() => '')
      throw new ApiError(response.status, `${path} failed (${response.status}) ${detail}`)
    }
    return (await response.json()) as T
  }

  private post<T>(path: string, body: unknown): Promise<T> {
    return this.request<T>(path, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify(body),
    })
  }

  createSession(manifestPath: string, options: Record<string, unknown> = {}) {
    return this.post<{ session_id: string }>('/sessions', {
      manifest_path: manifestPath,
      ...options,
    })
  }

  frames(sessionId: string) {
    return this.request<FramesResponse>(`/sessions/${sessionId}/frames`)
  }

  frameImageUrl(sessionId: string, frameId: string): string {
    return `${this.baseUrl}/frames/${frameId}/image?session_id=${encodeURIComponent(sessionId)}`
  }

  maskUrl(sessionId: string, frameId: string, classId: number): string {
    return `${this.baseUrl}/sessions/${sessionId}/masks/${frameId}/${classId}`
  }

  exportUrl(sessionId: string): string {
    return `${this.baseUrl}/sessions/${sessionId}/export`
  }

  submitClick(
    sessionId: string,
    click: { frame_id: string; u: number; v: number; class_id: number; polarity: Polarity },
  ) {
    return this.post<ClickResponse>(`/sessions/${sessionId}/clicks`, click)
  }

  propagate(sessionId: string, depth?: number) {
    return this.post<{ job_id: string }>(
      `/sessions/${sessionId}/propagate`,
      depth === undefined ? {} : { depth },
    )
  }

  job(jobId: string) {
    return this.request<JobResponse>(`/jobs/${jobId}`)
  }

  review(sessionId: string, frameId: string, classId: number, action: 'accept' | 'reject') {
    return this.post<{ decision: string; pending_remaining: number }>(
      `/sessions/${sessionId}/review`,
      { frame_id: frameId, class_id: classId, action },
    )
  }
}

/**
 * Event-to-service glue, kept DOM-free so it runs under node tests.
 *
 * The click path is: pointer event -> canvas-local point -> exact image
 * pixel via the view transform -> POST to the service -> render whatever
 * the service answered. Optimistic marker updates roll back when the
 * service rejects the click.
 */

import type { ApiClient } from './api.js'
import type { UiSessionState } from './state.js'
import { pushToast } from './state.js'
import type { Polarity } from './types.js'
import { eventToCanvasPoint, screenToImagePixel, type ViewTransform } from './viewport.js'

export interface Marker {
  frameId: string
  u: number
  v: number
  classId: number
  polarity: Polarity
}

export interface ClickContext {
  frameId: string
  imageWidth: number
  imageHeight: number
  transform: ViewTransform
  rect: { left: number; top: number }
}

export interface ClickOutcome {
  state: UiSessionState
  marker: Marker | null
  previewPngBase64: string | null
}

/**
 * Handle a canvas click: resolve the image pixel under the cursor and post
 * it with the active class and polarity. Returns the unchanged state when
 * the click lands outside the image.
 */
export async function handleCanvasClick(
  api: ApiClient,
  state: UiSessionState,
  ctx: ClickContext,
  ev: { clientX: number; clientY: number },
  markers: Marker[],
): Promise<ClickOutcome> {
  const point = eventToCanvasPoint(ev, ctx.rect)
  const pixel = screenToImagePixel(
    ctx.transform,
    point.x,
    point.y,
    ctx.imageWidth,
    ctx.imageHeight,
  )
  if (pixel === null) {
    return { state, marker: null, previewPngBase64: null }
  }
  const marker: Marker = {
    frameId: ctx.frameId,
    u: pixel.u,
    v: pixel.v,
    classId: state.selectedClass,
    polarity: state.polarity,
  }
  markers.push(marker) // optimistic; rolled back on failure
  try {
    const response = await api.submitClick(state.sessionId, {
      frame_id: ctx.frameId,
      u: pixel.u,
      v: pixel.v,
      class_id: state.selectedClass,
      polarity: state.polarity,
    })
    let next = state
    if (response.warning) {
      next = pushToast(next, response.warning)
    }
    return { state: next, marker, previewPngBase64: response.preview_png_base64 }
  } catch (err) {
    markers.pop()
    return {
      state: pushToast(state, err instanceof Error ? err.message : String(err)),
      marker: null,
      previewPngBase64: null,
    }
  }
}

/** Poll a propagation job until it settles. */
export async function waitForJob(
  api: ApiClient,
  jobId: string,
  sleep: (ms: number) => Promise<void> = (ms) => new Promise((r) => setTimeout(r, ms)),
  intervalMs = 250,
  maxPolls = 2400,
): Promise<'done' | 'failed'> {
  for (let i = 0; i < maxPolls; i += 1) {
    const job = await api.job(jobId)
    if (job.status === 'done' || job.status === 'failed') return job.status
    await sleep(intervalMs)
  }
  throw new Error(`job ${jobId} did not settle`)
}

/**
 * Browser bootstrap: wires the canvas, class palette, review queue, and
 * export button to the service. One session per tab.
 *
 * Keyboard: digits 1-9 select a class, `n` toggles positive/negative,
 * arrow keys move the frame cursor, +/- zoom, 0 resets the view.
 */

import { ApiClient } from './api.js'
import { handleCanvasClick, waitForJob, type Marker } from './controller.js'
import { classColor, markerStyle, tintMaskPixels } from './overlay.js'
import * as state from './state.js'
import type { UiSessionState } from './state.js'
import {
  IDENTITY,
  imagePixelCenter,
  pan,
  zoomAround,
  type ViewTransform,
} from './viewport.js'

const api = new ApiClient('')

let ui: UiSessionState | null = null
let transform: ViewTransform = { ...IDENTITY }
let markers: Marker[] = []
const maskCache = new Map<string, HTMLCanvasElement>()

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id)
  if (!node) throw new Error(`missing element #${id}`)
  return node as T
}

const canvas = () => el<HTMLCanvasElement>('canvas')

function currentFrame() {
  if (!ui || ui.frames.length === 0) return null
  return ui.frames[ui.cursor] ?? null
}

async function loadMaskCanvas(frameId: string, classId: number): Promise<HTMLCanvasElement> {
  const key = `${frameId}:${classId}`
  const cached = maskCache.get(key)
  if (cached) return cached
  const image = new Image()
  image.src = api.maskUrl(ui!.sessionId, frameId, classId)
  await image.decode()
  const off = document.createElement('canvas')
  off.width = image.naturalWidth
  off.height = image.naturalHeight
  const ctx = off.getContext('2d')!
  ctx.drawImage(image, 0, 0)
  const data = ctx.getImageData(0, 0, off.width, off.height)
  tintMaskPixels(data.data, classColor(classId), 1.0)
  ctx.putImageData(data, 0, 0)
  maskCache.set(key, off)
  return off
}

async function render(): Promise<void> {
  const frame = currentFrame()
  if (!ui || !frame) return
  const cv = canvas()
  const ctx = cv.getContext('2d')!
  ctx.setTransform(1, 0, 0, 1, 0, 0)
  ctx.clearRect(0, 0, cv.width, cv.height)
  ctx.imageSmoothingEnabled = false

  const image = new Image()
  image.src = api.frameImageUrl(ui.sessionId, frame.frame_id)
  await image.decode()
  ctx.setTransform(transform.zoom, 0, 0, transform.zoom, transform.panX, transform.panY)
  ctx.drawImage(image, 0, 0)

  ctx.globalAlpha = ui.overlayOpacity
  for (const mask of state.visibleOverlays(ui, frame.frame_id)) {
    ctx.drawImage(await loadMaskCanvas(mask.frame_id, mask.class_id), 0, 0)
  }
  ctx.globalAlpha = 1.0

  ctx.setTransform(1, 0, 0, 1, 0, 0)
  for (const marker of markers) {
    if (marker.frameId !== frame.frame_id) continue
    const { x, y } = imagePixelCenter(transform, marker.u, marker.v)
    const style = markerStyle(marker.polarity, marker.classId)
    ctx.strokeStyle = ctx.fillStyle = style.color
    ctx.lineWidth = 2
    if (style.shape === 'dot') {
      ctx.beginPath()
      ctx.arc(x, y, 4, 0, Math.PI * 2)
      ctx.fill()
    } else {
      ctx.strokeRect(x - 4, y - 4, 8, 8)
    }
  }
  renderSidebar()
}

function renderSidebar(): void {
  if (!ui) return
  const frame = currentFrame()
  el<HTMLSpanElement>('status').textContent = frame
    ? `frame ${frame.frame_id} (${ui.cursor + 1}/${ui.frames.length})  class: ` +
      `${ui.classNames[ui.selectedClass]}  mode: ${ui.polarity}`
    : 'no frames'

  const palette = el<HTMLDivElement>('palette')
  palette.replaceChildren(
    ...ui.classNames.map((name, classId) => {
      const button = document.createElement('button')
      const [r, g, b] = classColor(classId)
      button.textContent = `${classId + 1} ${name}`
      button.style.borderLeft = `12px solid rgb(${r},${g},${b})`
      button.classList.toggle('active', classId === ui!.selectedClass)
      button.onclick = () => {
        ui = state.selectClass(ui!, classId)
        renderSidebar()
      }
      return button
    }),
  )

  const timeline = el<HTMLDivElement>('timeline')
  timeline.replaceChildren(
    ...ui.frames.map((f, index) => {
      const chip = document.createElement('button')
      chip.textContent = `${f.frame_id} [${state.frameBadge(ui!, f.frame_id)}]`
      chip.classList.toggle('active', index === ui!.cursor)
      chip.onclick = () => {
        ui = state.setCursor(ui!, index)
        void render()
      }
      return chip
    }),
  )

  const queue = el<HTMLDivElement>('queue')
  const next = state.nextPending(ui)
  queue.textContent = next
    ? `review: frame ${next.frame_id}, class ${ui.classNames[next.class_id]} ` +
      `(${state.pendingCount(ui)} left)`
    : 'review queue empty'

  const exportLink = el<HTMLAnchorElement>('export')
  if (state.canExport(ui)) {
    exportLink.removeAttribute('aria-disabled')
    exportLink.href = api.exportUrl(ui.sessionId)
  } else {
    exportLink.setAttribute('aria-disabled', 'true')
    exportLink.removeAttribute('href')
  }

  const toasts = el<HTMLDivElement>('toasts')
  toasts.replaceChildren(
    ...ui.toasts.map((toast) => {
      const node = document.createElement('div')
      node.className = 'toast'
      node.textContent = toast.text
      node.onclick = () => {
        ui = state.dismissToast(ui!, toast.id)
        renderSidebar()
      }
      return node
    }),
  )
}

async function refresh(): Promise<void> {
  if (!ui) return
  ui = state.refreshFromServer(ui, await api.frames(ui.sessionId))
  maskCache.clear()
  await render()
}

async function reviewNext(action: 'accept' | 'reject'): Promise<void> {
  if (!ui) return
  const next = state.nextPending(ui)
  if (!next) return
  const optimistic = state.applyReview(
    ui,
    next.frame_id,
    next.class_id,
    action === 'accept' ? 'accepted' : 'rejected',
  )
  ui = optimistic
  const cursorTarget = ui.frames.findIndex((f) => f.frame_id === next.frame_id)
  if (cursorTarget >= 0) ui = state.setCursor(ui, cursorTarget)
  try {
    await api.review(ui.sessionId, next.frame_id, next.class_id, action)
  } catch (err) {
    ui = state.pushToast(ui, `review failed: ${err}`)
  }
  await refresh()
}

async function propagate(): Promise<void> {
  if (!ui) return
  const { job_id } = await api.propagate(ui.sessionId)
  el<HTMLSpanElement>('status').textContent = `propagating (job ${job_id})`
  const status = await waitForJob(api, job_id)
  if (status === 'failed') {
    ui = state.pushToast(ui, `propagation job ${job_id} failed`)
  }
  await refresh()
}

function bindEvents(): void {
  const cv = canvas()
  cv.addEventListener('click', async (ev) => {
    const frame = currentFrame()
    if (!ui || !frame) return
    const outcome = await handleCanvasClick(
      api,
      ui,
      {
        frameId: frame.frame_id,
        imageWidth: frame.image_width,
        imageHeight: frame.image_height,
        transform,
        rect: cv.getBoundingClientRect(),
      },
      ev,
      markers,
    )
    ui = outcome.state
    await render()
  })
  cv.addEventListener('wheel', (ev) => {
    ev.preventDefault()
    const rect = cv.getBoundingClientRect()
    transform = zoomAround(
      transform,
      ev.deltaY < 0 ? 1.25 : 0.8,
      ev.clientX - rect.left,
      ev.clientY - rect.top,
    )
    void render()
  })
  window.addEventListener('keydown', (ev) => {
    if (!ui) return
    if (ev.key >= '1' && ev.key <= '9') ui = state.selectClass(ui, Number(ev.key) - 1)
    else if (ev.key === 'n') ui = state.togglePolarity(ui)
    else if (ev.key === 'ArrowRight') ui = state.setCursor(ui, ui.cursor + 1)
    else if (ev.key === 'ArrowLeft') ui = state.setCursor(ui, ui.cursor - 1)
    else if (ev.key === '+') transform = zoomAround(transform, 1.25, 0, 0)
    else if (ev.key === '-') transform = zoomAround(transform, 0.8, 0, 0)
    else if (ev.key === '0') transform = { ...IDENTITY }
    else if (ev.key === 'ArrowUp') transform = pan(transform, 0, 20)
    else if (ev.key === 'ArrowDown') transform = pan(transform, 0, -20)
    else return
    void render()
  })
  el<HTMLButtonElement>('propagate').onclick = () => void propagate()
  el<HTMLButtonElement>('accept').onclick = () => void reviewNext('accept')
  el<HTMLButtonElement>('reject').onclick = () => void reviewNext('reject')
}

async function start(): Promise<void> {
  const params = new URLSearchParams(window.location.search)
  const sessionId = params.get('session')
  const manifest = params.get('manifest')
  let sid = sessionId
  if (!sid && manifest) {
    sid = (await api.createSession(manifest)).session_id
    params.set('session', sid)
    window.history.replaceState(null, '', `?${params.toString()}`)
  }
  if (!sid) {
    el<HTMLSpanElement>('status').textContent =
      'open with ?manifest=/path/to/manifest.json or ?session=<id>'
    return
  }
  ui = state.buildState(await api.frames(sid))
  bindEvents()
  await render()
}

void start()

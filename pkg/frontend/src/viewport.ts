/**
 * Zoom/pan view transform and the screen<->image pixel mapping.
 *
 * The canvas shows the image scaled by `zoom` (screen pixels per image
 * pixel) with the image's (0,0) corner at screen offset (panX, panY).
 * Clicks must land on the exact pixel the user sees, so the mapping is a
 * pure floor over the inverse transform; the round trip through
 * imagePixelCenter -> screenToImagePixel is exact for every pixel.
 */

export interface ViewTransform {
  zoom: number
  panX: number
  panY: number
}

export const IDENTITY: ViewTransform = { zoom: 1, panX: 0, panY: 0 }

/** Screen point of an image pixel's top-left corner. */
export function imagePixelToScreen(
  t: ViewTransform,
  u: number,
  v: number,
): { x: number; y: number } {
  return { x: t.panX + u * t.zoom, y: t.panY + v * t.zoom }
}

/** Screen point of an image pixel's center (where a marker is drawn). */
export function imagePixelCenter(
  t: ViewTransform,
  u: number,
  v: number,
): { x: number; y: number } {
  return { x: t.panX + (u + 0.5) * t.zoom, y: t.panY + (v + 0.5) * t.zoom }
}

/**
 * Image pixel under a canvas-local screen point, or null when the point
 * falls outside the image.
 */
export function screenToImagePixel(
  t: ViewTransform,
  x: number,
  y: number,
  imageWidth: number,
  imageHeight: number,
): { u: number; v: number } | null {
  const u = Math.floor((x - t.panX) / t.zoom)
  const v = Math.floor((y - t.panY) / t.zoom)
  if (u < 0 || v < 0 || u >= imageWidth || v >= imageHeight) return null
  return { u, v }
}

/** Zoom around a fixed screen point so the pixel under the cursor stays put. */
export function zoomAround(
  t: ViewTransform,
  factor: number,
  x: number,
  y: number,
  minZoom = 0.25,
  maxZoom = 32,
): ViewTransform {
  const zoom = Math.min(Math.max(t.zoom * factor, minZoom), maxZoom)
  const scale = zoom / t.zoom
  return {
    zoom,
    panX: x - (x - t.panX) * scale,
    panY: y - (y - t.panY) * scale,
  }
}

export function pan(t: ViewTransform, dx: number, dy: number): ViewTransform {
  return { zoom: t.zoom, panX: t.panX + dx, panY: t.panY + dy }
}

/** Canvas-local coordinates of a pointer event, given the canvas rect. */
export function eventToCanvasPoint(
  ev: { clientX: number; clientY: number },
  rect: { left: number; top: number },
): { x: number; y: number } {
  return { x: ev.clientX - rect.left, y: ev.clientY - rect.top }
}

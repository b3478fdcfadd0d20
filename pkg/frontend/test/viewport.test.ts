import assert from 'node:assert/strict'
import test from 'node:test'

import {
  IDENTITY,
  eventToCanvasPoint,
  imagePixelCenter,
  imagePixelToScreen,
  pan,
  screenToImagePixel,
  zoomAround,
} from '../src/viewport.js'

const ZOOMS = [0.25, 0.5, 1, 2, 3, 4, 8]
const PANS = [0, 17, -23, 5.5, -0.25]

test('every displayed pixel round-trips exactly through zoom/pan', () => {
  for (const zoom of ZOOMS) {
    for (const panX of PANS) {
      for (const panY of PANS) {
        const t = { zoom, panX, panY }
        for (let v = 0; v < 24; v += 1) {
          for (let u = 0; u < 32; u += 1) {
            const center = imagePixelCenter(t, u, v)
            const pixel = screenToImagePixel(t, center.x, center.y, 32, 24)
            assert.deepEqual(pixel, { u, v }, `zoom=${zoom} pan=(${panX},${panY}) pixel=(${u},${v})`)
          }
        }
      }
    }
  }
})

test('points outside the image map to null', () => {
  const t = { zoom: 2, panX: 10, panY: 10 }
  assert.equal(screenToImagePixel(t, 9, 10, 32, 24), null) // left of image
  assert.equal(screenToImagePixel(t, 10 + 32 * 2, 10, 32, 24), null) // right edge
  assert.equal(screenToImagePixel(t, 10, 10 + 24 * 2, 32, 24), null) // below
  assert.notEqual(screenToImagePixel(t, 10, 10, 32, 24), null) // (0,0) corner
})

test('pixel corner maps back to that pixel (floor semantics)', () => {
  const t = { zoom: 4, panX: 0, panY: 0 }
  const corner = imagePixelToScreen(t, 5, 7)
  assert.deepEqual(screenToImagePixel(t, corner.x, corner.y, 32, 24), { u: 5, v: 7 })
  // one screen pixel before the corner belongs to the previous column
  assert.deepEqual(screenToImagePixel(t, corner.x - 1, corner.y, 32, 24), { u: 4, v: 7 })
})

test('zoomAround keeps the anchored image point fixed', () => {
  let t = { zoom: 1, panX: 3, panY: -4 }
  const anchor = { x: 120, y: 80 }
  const before = screenToImagePixel(t, anchor.x, anchor.y, 1000, 1000)
  t = zoomAround(t, 2, anchor.x, anchor.y)
  assert.equal(t.zoom, 2)
  const after = screenToImagePixel(t, anchor.x, anchor.y, 1000, 1000)
  assert.deepEqual(after, before)
})

test('zoomAround clamps to its limits', () => {
  let t = { ...IDENTITY }
  for (let i = 0; i < 40; i += 1) t = zoomAround(t, 2, 0, 0)
  assert.equal(t.zoom, 32)
  for (let i = 0; i < 80; i += 1) t = zoomAround(t, 0.5, 0, 0)
  assert.equal(t.zoom, 0.25)
})

test('pan shifts the view linearly', () => {
  const t = pan({ zoom: 2, panX: 1, panY: 2 }, 10, -5)
  assert.deepEqual(t, { zoom: 2, panX: 11, panY: -3 })
})

test('eventToCanvasPoint subtracts the canvas rect origin', () => {
  const point = eventToCanvasPoint({ clientX: 105, clientY: 62 }, { left: 100, top: 60 })
  assert.deepEqual(point, { x: 5, y: 2 })
})

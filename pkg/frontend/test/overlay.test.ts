import assert from 'node:assert/strict'
import test from 'node:test'

import { CLASS_COLORS, classColor, markerStyle, tintMaskPixels } from '../src/overlay.js'

test('tint recolors covered pixels and clears uncovered ones', () => {
  // two pixels: covered (255 gray) then uncovered (0)
  const rgba = new Uint8ClampedArray([255, 255, 255, 255, 0, 0, 0, 255])
  tintMaskPixels(rgba, [10, 20, 30], 0.5)
  assert.deepEqual([...rgba.slice(0, 4)], [10, 20, 30, 128])
  assert.equal(rgba[7], 0)
})

test('opacity is clamped to [0, 1]', () => {
  const covered = () => new Uint8ClampedArray([128, 128, 128, 255])
  assert.equal(tintMaskPixels(covered(), [1, 2, 3], 4)[3], 255)
  assert.equal(tintMaskPixels(covered(), [1, 2, 3], -1)[3], 0)
})

test('class colors cycle past the palette length', () => {
  assert.deepEqual(classColor(0), CLASS_COLORS[0])
  assert.deepEqual(classColor(CLASS_COLORS.length + 2), CLASS_COLORS[2])
})

test('marker style distinguishes polarity', () => {
  assert.equal(markerStyle('positive', 0).shape, 'dot')
  assert.equal(markerStyle('negative', 0).shape, 'square')
  assert.equal(markerStyle('positive', 1).color, 'rgb(60, 180, 75)')
})

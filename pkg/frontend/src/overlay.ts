/**
 * Client-side tinting of service mask PNGs. The mask arrives as a grayscale
 * PNG (255 inside, 0 outside); tinting recolors covered pixels with the
 * class color at the chosen opacity and leaves the rest transparent.
 */

export type Rgb = readonly [number, number, number]

/** Distinct per-class palette, cycled when a taxonomy has more classes. */
export const CLASS_COLORS: readonly Rgb[] = [
  [230, 25, 75],
  [60, 180, 75],
  [0, 130, 200],
  [255, 225, 25],
  [245, 130, 48],
  [145, 30, 180],
  [70, 240, 240],
  [240, 50, 230],
]

export function classColor(classId: number): Rgb {
  return CLASS_COLORS[classId % CLASS_COLORS.length]!
}

/**
 * Turn decoded grayscale-mask RGBA data into a tinted RGBA overlay,
 * in place. A pixel counts as covered when its red channel is nonzero.
 */
export function tintMaskPixels(
  rgba: Uint8ClampedArray,
  color: Rgb,
  opacity: number,
): Uint8ClampedArray {
  const alpha = Math.round(Math.min(Math.max(opacity, 0), 1) * 255)
  for (let i = 0; i < rgba.length; i += 4) {
    const covered = rgba[i]! > 0
    rgba[i] = color[0]
    rgba[i + 1] = color[1]
    rgba[i + 2] = color[2]
    rgba[i + 3] = covered ? alpha : 0
  }
  return rgba
}

/** Marker styling: positives are filled dots, negatives hollow squares. */
export function markerStyle(polarity: 'positive' | 'negative', classId: number): {
  shape: 'dot' | 'square'
  color: string
} {
  const [r, g, b] = classColor(classId)
  return {
    shape: polarity === 'positive' ? 'dot' : 'square',
    color: `rgb(${r}, ${g}, ${b})`,
  }
}

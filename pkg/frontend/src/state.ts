/**
 * UI session state and its pure update functions.
 *
 * Everything here derives from service responses plus local view
 * preferences (selected class, polarity, overlay opacity, viewport), so
 * rebuilding from a fresh frames listing after a page refresh restores the
 * same state. No label math: masks and labels only ever come from the
 * service.
 */

import type { FramesResponse, MaskState, Polarity, ReviewDecision } from './types.js'

export interface Toast {
  id: number
  text: string
}

export interface UiSessionState {
  sessionId: string
  classNames: string[]
  frames: FramesResponse['frames']
  masks: MaskState[]
  selectedClass: number
  polarity: Polarity
  overlayOpacity: number
  cursor: number
  toasts: Toast[]
  nextToastId: number
}

export function buildState(
  listing: FramesResponse,
  prefs: { selectedClass?: number; polarity?: Polarity; overlayOpacity?: number; cursor?: number } = {},
): UiSessionState {
  return {
    sessionId: listing.session_id,
    classNames: listing.class_names,
    frames: listing.frames,
    masks: listing.masks,
    selectedClass: prefs.selectedClass ?? 0,
    polarity: prefs.polarity ?? 'positive',
    overlayOpacity: prefs.overlayOpacity ?? 0.5,
    cursor: prefs.cursor ?? 0,
    toasts: [],
    nextToastId: 1,
  }
}

/** Re-sync server-owned fields after any mutation, keeping view prefs. */
export function refreshFromServer(state: UiSessionState, listing: FramesResponse): UiSessionState {
  return {
    ...state,
    classNames: listing.class_names,
    frames: listing.frames,
    masks: listing.masks,
  }
}

export function selectClass(state: UiSessionState, classId: number): UiSessionState {
  if (classId < 0 || classId >= state.classNames.length) return state
  return { ...state, selectedClass: classId }
}

export function togglePolarity(state: UiSessionState): UiSessionState {
  return { ...state, polarity: state.polarity === 'positive' ? 'negative' : 'positive' }
}

export function setCursor(state: UiSessionState, index: number): UiSessionState {
  const clamped = Math.min(Math.max(index, 0), Math.max(state.frames.length - 1, 0))
  return { ...state, cursor: clamped }
}

export function pushToast(state: UiSessionState, text: string): UiSessionState {
  return {
    ...state,
    toasts: [...state.toasts, { id: state.nextToastId, text }],
    nextToastId: state.nextToastId + 1,
  }
}

export function dismissToast(state: UiSessionState, id: number): UiSessionState {
  return { ...state, toasts: state.toasts.filter((t) => t.id !== id) }
}

/** The review queue: non-auto masks in stable (frame, class) order. */
export function reviewQueue(state: UiSessionState): MaskState[] {
  return state.masks
    .filter((m) => !m.auto)
    .slice()
    .sort((a, b) =>
      a.frame_id === b.frame_id ? a.class_id - b.class_id : a.frame_id < b.frame_id ? -1 : 1,
    )
}

export function nextPending(state: UiSessionState): MaskState | null {
  return reviewQueue(state).find((m) => m.decision === null) ?? null
}

export function pendingCount(state: UiSessionState): number {
  return reviewQueue(state).filter((m) => m.decision === null).length
}

/** Export stays disabled until every queued mask has been reviewed. */
export function canExport(state: UiSessionState): boolean {
  return pendingCount(state) === 0
}

/** Record a review decision locally (optimistic; server is source of truth). */
export function applyReview(
  state: UiSessionState,
  frameId: string,
  classId: number,
  decision: Exclude<ReviewDecision, null>,
): UiSessionState {
  return {
    ...state,
    masks: state.masks.map((m) =>
      m.frame_id === frameId && m.class_id === classId ? { ...m, decision } : m,
    ),
  }
}

/**
 * Overlays to draw on a frame: accepted and undecided masks tint the canvas,
 * rejected ones disappear.
 */
export function visibleOverlays(state: UiSessionState, frameId: string): MaskState[] {
  return state.masks.filter((m) => m.frame_id === frameId && m.decision !== 'rejected')
}

/** Timeline badge for a frame thumbnail. */
export function frameBadge(
  state: UiSessionState,
  frameId: string,
): 'unlabeled' | 'pending' | 'accepted' | 'rejected' | 'mixed' {
  const entries = state.masks.filter((m) => m.frame_id === frameId && !m.auto)
  if (entries.length === 0) {
    return state.masks.some((m) => m.frame_id === frameId) ? 'accepted' : 'unlabeled'
  }
  if (entries.some((m) => m.decision === null)) return 'pending'
  const accepted = entries.filter((m) => m.decision === 'accepted').length
  if (accepted === entries.length) return 'accepted'
  if (accepted === 0) return 'rejected'
  return 'mixed'
}

/** Wire types mirroring the annotation service's JSON payloads. */

export type Polarity = 'positive' | 'negative'
export type ReviewDecision = 'accepted' | 'rejected' | null

export interface AnnotationOut {
  frame_id: string
  u: number
  v: number
  class_id: number
  polarity: Polarity
  origin: 'manual' | 'propagated'
  source_frame_id: string
}

export interface FrameInfo {
  frame_id: string
  index: number
  image_width: number
  image_height: number
  manual_annotations: number
  propagated_annotations: number
  pending_masks: number
  has_ground_truth: boolean
  annotations: AnnotationOut[]
}

export interface MaskState {
  frame_id: string
  class_id: number
  auto: boolean
  decision: ReviewDecision
  pixels: number
}

export interface FramesResponse {
  session_id: string
  class_names: string[]
  frames: FrameInfo[]
  masks: MaskState[]
}

export interface ClickResponse {
  annotations: AnnotationOut[]
  warning: string | null
  preview_png_base64: string | null
}

export interface JobResponse {
  job_id: string
  status: 'queued' | 'running' | 'done' | 'failed'
  error: string | null
  pending: Array<{ frame_id: string; class_id: number; decision: ReviewDecision; pixels: number }>
}

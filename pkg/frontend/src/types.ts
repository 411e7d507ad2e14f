/** Wire types for the morphfit session service, matching its JSON responses. */

export interface ModelMeta {
  model: string
  n_vertices: number
  n_identity: number
  n_expression: number
  n_landmarks: number
  /** [lower, upper] bounds every expression coefficient must stay within. */
  expression_bounds: [number, number]
  semantic_legend: string[]
  /** Dominant semantic region per expression unit; drives slider grouping. */
  expression_groups: string[]
}

export interface FitSummary {
  session: string
  landmark_rmse: number
  iterations: number
  converged: boolean
  identity: number[]
  expression: number[]
}

export interface BlendOptions {
  sigma2?: number
  kernel_size?: number
  alpha_weights_input?: boolean
}

export interface SessionRequest {
  model?: string
  landmarks: number[][]
  /** Base64-encoded PNG; when absent the service uses a procedural texture. */
  image_png?: string
  /** Canvas [width, height] for imageless sessions. */
  frame?: [number, number]
}

export interface RenderResponse {
  blob: Blob
  renderMillis: number
  maxDisplacementMm: number
}

/** One named coefficient vector; the file format the transfer CLI reads. */
export interface Preset {
  expression: number[]
  name?: string
}

/** Debounced, latest-wins render scheduling with at most one request in flight.
 *
 * Slider drags fire far faster than the service renders. The scheduler
 * collapses them: a request is sent `debounceMs` after the last change, a
 * change arriving mid-flight only marks the state dirty, and when the flight
 * settles the newest snapshot is sent immediately. At every instant there is
 * at most one unresolved perform() call.
 */

export interface RenderJob<T> {
  payload: T
}

export interface SchedulerOptions<T> {
  /** Sends one snapshot to the service and applies the result. */
  perform: (payload: T) => Promise<void>
  /** Trailing-edge debounce window in milliseconds. */
  debounceMs?: number
  /** Called when perform rejects; scheduling continues afterwards. */
  onError?: (error: unknown) => void
  /** Called after every settled flight (success or failure). */
  onSettled?: () => void
}

export class RenderScheduler<T> {
  private readonly perform: (payload: T) => Promise<void>
  private readonly debounceMs: number
  private readonly onError: (error: unknown) => void
  private readonly onSettled: () => void

  private latest: T | undefined
  private dirty = false
  private timer: ReturnType<typeof setTimeout> | null = null
  private flying = false
  private disposed = false

  constructor(options: SchedulerOptions<T>) {
    this.perform = options.perform
    this.debounceMs = options.debounceMs ?? 80
    this.onError = options.onError ?? (() => {})
    this.onSettled = options.onSettled ?? (() => {})
  }

  /** True while a perform() call is unresolved. */
  get inFlight(): boolean {
    return this.flying
  }

  /** Record the newest snapshot and (re)arm the debounce timer. */
  request(payload: T): void {
    if (this.disposed) return
    this.latest = payload
    this.dirty = true
    if (this.timer !== null) clearTimeout(this.timer)
    this.timer = setTimeout(() => {
      this.timer = null
      this.launch()
    }, this.debounceMs)
  }

  /** Send the newest snapshot without waiting out the debounce window. */
  flush(): void {
    if (this.disposed) return
    if (this.timer !== null) {
      clearTimeout(this.timer)
      this.timer = null
    }
    this.launch()
  }

  dispose(): void {
    this.disposed = true
    if (this.timer !== null) clearTimeout(this.timer)
    this.timer = null
  }

  private launch(): void {
    if (this.flying || !this.dirty || this.latest === undefined) return
    const payload = this.latest
    this.dirty = false
    this.flying = true
    this.perform(payload)
      .catch((error) => this.onError(error))
      .finally(() => {
        this.flying = false
        this.onSettled()
        // A change that arrived mid-flight is stale by a full round trip
        // already; send it now rather than debouncing again.
        if (this.dirty && !this.disposed) this.launch()
      })
  }
}

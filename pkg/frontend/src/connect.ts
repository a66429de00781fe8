/**
 * Connection lifecycle: open a transport, feed its lines to the session,
 * and on any drop keep retrying with doubling delays until the server
 * says done or the caller stops us. Timers are injectable so tests can
 * drive the schedule by hand.
 */

import { ConsoleSession } from "./session.js"

export interface Transport {
  send(line: string): void
  close(): void
  onOpen: (() => void) | null
  onLine: ((line: string) => void) | null
  onClose: ((reason?: string) => void) | null
}

export type TransportFactory = (endpoint: string) => Transport

export interface ConnectorOptions {
  baseDelayMs?: number
  maxDelayMs?: number
  setTimer?: (fn: () => void, ms: number) => unknown
  clearTimer?: (handle: unknown) => void
}

const DEFAULTS = { baseDelayMs: 500, maxDelayMs: 8000 }

export class Connector {
  private readonly baseDelayMs: number
  private readonly maxDelayMs: number
  private readonly setTimer: (fn: () => void, ms: number) => unknown
  private readonly clearTimer: (handle: unknown) => void

  private attempt = 0
  private timer: unknown = null
  private transport: Transport | null = null
  private stopped = false

  constructor(
    private readonly session: ConsoleSession,
    private readonly factory: TransportFactory,
    opts: ConnectorOptions = {},
  ) {
    this.baseDelayMs = opts.baseDelayMs ?? DEFAULTS.baseDelayMs
    this.maxDelayMs = opts.maxDelayMs ?? DEFAULTS.maxDelayMs
    this.setTimer = opts.setTimer ?? ((fn, ms) => setTimeout(fn, ms))
    this.clearTimer = opts.clearTimer ?? (h => clearTimeout(h as Parameters<typeof clearTimeout>[0]))
  }

  start(): void {
    this.stopped = false
    this.attempt = 0
    this.open()
  }

  stop(): void {
    this.stopped = true
    if (this.timer !== null) {
      this.clearTimer(this.timer)
      this.timer = null
    }
    if (this.transport !== null) {
      const t = this.transport
      this.transport = null
      t.onClose = null
      t.close()
    }
    this.session.detach()
    if (this.session.connection !== "done") this.session.connection = "closed"
  }

  private open(): void {
    const s = this.session
    s.connection = this.attempt === 0 ? "connecting" : "reconnecting"
    s.retryInMs = null

    let t: Transport
    try {
      t = this.factory(s.endpoint)
    } catch (err) {
      this.dropped(String(err))
      return
    }
    this.transport = t
    t.onOpen = () => {
      this.attempt = 0
      s.attach(t)
    }
    t.onLine = line => s.feedLine(line)
    t.onClose = reason => {
      this.transport = null
      s.detach()
      this.dropped(reason)
    }
  }

  private dropped(reason?: string): void {
    const s = this.session
    if (this.stopped) return
    // A done frame before the close is a clean shutdown, not a drop.
    if (s.connection === "done") return
    const delay = Math.min(this.baseDelayMs * 2 ** this.attempt, this.maxDelayMs)
    this.attempt += 1
    s.connection = "reconnecting"
    s.retryInMs = delay
    s.lastError = reason ?? null
    this.timer = this.setTimer(() => {
      this.timer = null
      this.open()
    }, delay)
  }
}

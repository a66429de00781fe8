/**
 * Client-side state for one paced run.
 *
 * Frames from the transport land here and nowhere else. The event buffer
 * is append-only and kept ordered by sim time; rendering reads it without
 * touching the network, so replaying a recorded stream through a fresh
 * session reproduces the same view. The session talks back to the server
 * exactly once, for the trigger.
 */

import { parseFrame, ServerFrame, TelemetryEvent, TRIGGER_LINE } from "./protocol.js"

export type ConnectionState =
  | "idle"
  | "connecting"
  | "connected"
  | "reconnecting"
  | "done"
  | "closed"

export interface DepthSample {
  t: number
  depth_m: number
}

/** The one outbound path; the live connector plugs the socket in here. */
export interface SendPort {
  send(line: string): void
}

export class ConsoleSession {
  readonly endpoint: string
  connection: ConnectionState = "idle"
  /** Delay until the next reconnect attempt, for the status banner. */
  retryInMs: number | null = null
  lastError: string | null = null

  readonly events: TelemetryEvent[] = []
  readonly depths = new Map<string, DepthSample[]>()
  readonly warnings: string[] = []
  malformed = 0

  triggerSent = false
  toast: string | null = null

  private port: SendPort | null = null

  constructor(endpoint: string) {
    this.endpoint = endpoint
  }

  attach(port: SendPort): void {
    this.port = port
    this.connection = "connected"
    this.retryInMs = null
    this.lastError = null
  }

  detach(): void {
    this.port = null
  }

  feedLine(line: string): void {
    const frame = parseFrame(line)
    if (frame === null) {
      this.malformed += 1
      return
    }
    this.apply(frame)
  }

  apply(frame: ServerFrame): void {
    switch (frame.k) {
      case "telemetry":
        this.insert(frame.event)
        break
      case "vehicle": {
        let series = this.depths.get(frame.node)
        if (!series) {
          series = []
          this.depths.set(frame.node, series)
        }
        series.push({ t: frame.t, depth_m: frame.depth_m })
        break
      }
      case "warn":
        this.warnings.push(frame.msg)
        break
      case "done":
        this.connection = "done"
        this.retryInMs = null
        break
    }
  }

  /**
   * Fire the operator trigger. Returns true when the command went out;
   * false leaves the button armed (not connected, or already sent).
   */
  sendTrigger(): boolean {
    if (this.triggerSent || this.connection === "done") return false
    if (this.connection !== "connected" || this.port === null) {
      this.toast = "not connected: trigger not sent"
      return false
    }
    try {
      this.port.send(TRIGGER_LINE)
    } catch (err) {
      this.toast = `trigger send failed: ${String(err)}`
      return false
    }
    this.triggerSent = true
    this.toast = null
    return true
  }

  /** Latest sim time seen on any frame, or 0 before the first one. */
  latestT(): number {
    let t = this.events.length > 0 ? this.events[this.events.length - 1].t : 0
    for (const series of this.depths.values()) {
      if (series.length > 0 && series[series.length - 1].t > t) t = series[series.length - 1].t
    }
    return t
  }

  // Frames arrive in sim order from a live run, so this is almost always
  // a push; the splice path covers replays stitched from multiple files.
  private insert(ev: TelemetryEvent): void {
    const buf = this.events
    if (buf.length === 0 || ev.t >= buf[buf.length - 1].t) {
      buf.push(ev)
      return
    }
    let lo = 0
    let hi = buf.length
    while (lo < hi) {
      const mid = (lo + hi) >> 1
      if (buf[mid].t <= ev.t) lo = mid + 1
      else hi = mid
    }
    buf.splice(lo, 0, ev)
  }
}

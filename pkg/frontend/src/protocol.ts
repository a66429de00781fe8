/**
 * Line protocol spoken by `auvnetsim serve`.
 *
 * The server pushes one JSON document per line (or per WebSocket text
 * frame): telemetry events mirroring events.jsonl, 1 Hz vehicle depth
 * samples, warn notices, and a final done. The only thing a client may
 * send back is the trigger command. Anything that fails to parse into
 * one of the known shapes is reported as null and the caller drops it;
 * the run on the other end does not care what we make of its output.
 */

export interface TelemetryEvent {
  t: number
  node: string
  ev: string
  seq?: number
  depth_m?: number
  detail?: Record<string, unknown>
}

export type ServerFrame =
  | { k: "telemetry"; event: TelemetryEvent }
  | { k: "vehicle"; node: string; depth_m: number; t: number }
  | { k: "done" }
  | { k: "warn"; msg: string }

export const TRIGGER_LINE = '{"k": "trigger"}'

function isRecord(v: unknown): v is Record<string, unknown> {
  return typeof v === "object" && v !== null && !Array.isArray(v)
}

function num(v: unknown): number | null {
  return typeof v === "number" && Number.isFinite(v) ? v : null
}

export function parseEvent(v: unknown): TelemetryEvent | null {
  if (!isRecord(v)) return null
  const t = num(v.t)
  if (t === null || typeof v.node !== "string" || typeof v.ev !== "string") return null
  const ev: TelemetryEvent = { t, node: v.node, ev: v.ev }
  if (typeof v.seq === "number" && Number.isInteger(v.seq)) ev.seq = v.seq
  const depth = num(v.depth_m)
  if (depth !== null) ev.depth_m = depth
  if (isRecord(v.detail)) ev.detail = v.detail
  return ev
}

/** One line in, one frame out; null for anything malformed or unknown. */
export function parseFrame(line: string): ServerFrame | null {
  let doc: unknown
  try {
    doc = JSON.parse(line)
  } catch {
    return null
  }
  if (!isRecord(doc)) return null
  switch (doc.k) {
    case "telemetry": {
      const event = parseEvent(doc.event)
      return event ? { k: "telemetry", event } : null
    }
    case "vehicle": {
      const t = num(doc.t)
      const depth = num(doc.depth_m)
      if (t === null || depth === null || typeof doc.node !== "string") return null
      return { k: "vehicle", node: doc.node, depth_m: depth, t }
    }
    case "done":
      return { k: "done" }
    case "warn":
      return typeof doc.msg === "string" ? { k: "warn", msg: doc.msg } : null
    default:
      return null
  }
}

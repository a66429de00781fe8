// Pure view derivation: session state in, plain serializable view model
// out. No DOM, no clocks, no network. Painting happens in app.ts.

import { TelemetryEvent } from "./protocol.js"
import { ConnectionState, ConsoleSession } from "./session.js"

export const TIMELINE_SPAN_S = 180
export const OVERHEARD_CUE_COUNT = 100

const STEM_KINDS = ["pkt_tx", "pkt_rx", "pkt_overheard"] as const
export type StemKind = (typeof STEM_KINDS)[number]

export interface StemVM {
  t: number
  kind: StemKind
}

export interface MarkerVM {
  t: number
  label: string
}

export type LaneRole = "leader" | "follower" | "buoy" | "other"

export interface LaneVM {
  node: string
  role: LaneRole
  stems: StemVM[]
  markers: MarkerVM[]
}

export interface DepthRowVM {
  node: string
  depth_m: number | null
}

export interface ViewModel {
  connection: ConnectionState
  banner: string | null
  done: boolean
  window: { t0: number; t1: number }
  lanes: LaneVM[]
  overheard: { count: number; highlight: boolean }
  depthPanel: { rows: DepthRowVM[]; optimalDepth: number | null; floor: number }
  trigger: { enabled: boolean; sent: boolean; toast: string | null }
  warnings: string[]
}

function roleOf(node: string): LaneRole {
  if (node.startsWith("leader")) return "leader"
  if (node.startsWith("follower")) return "follower"
  if (node.startsWith("buoy")) return "buoy"
  return "other"
}

const ROLE_ORDER: Record<LaneRole, number> = { leader: 0, follower: 1, buoy: 2, other: 3 }

function markerLabel(ev: TelemetryEvent): string | null {
  switch (ev.ev) {
    case "trigger_tx":
      return "trigger"
    case "trigger_rx":
      return "trigger rx"
    case "optimal_depth":
      return ev.depth_m != null ? `optimal ${ev.depth_m.toFixed(1)} m` : "optimal depth"
    case "repos_cmd_tx":
      return ev.depth_m != null ? `repos ${ev.depth_m.toFixed(1)} m` : "repos cmd"
    case "repos_cmd_rx":
      return "repos rx"
    default:
      return null
  }
}

function bannerFor(s: ConsoleSession): string | null {
  switch (s.connection) {
    case "idle":
      return "not connected"
    case "connecting":
      return `connecting to ${s.endpoint}`
    case "reconnecting": {
      const base = s.lastError ? `connection lost (${s.lastError})` : "connection lost"
      if (s.retryInMs !== null) return `${base}, retry in ${Math.ceil(s.retryInMs / 1000)} s`
      return `${base}, reconnecting`
    }
    case "done":
      return "run complete"
    case "closed":
      return "disconnected"
    case "connected":
      return null
  }
}

export function render(s: ConsoleSession): ViewModel {
  const laneIndex = new Map<string, LaneVM>()
  const lane = (node: string): LaneVM => {
    let l = laneIndex.get(node)
    if (!l) {
      l = { node, role: roleOf(node), stems: [], markers: [] }
      laneIndex.set(node, l)
    }
    return l
  }

  for (const node of s.depths.keys()) lane(node)

  let overheard = 0
  for (const ev of s.events) {
    if (ev.node === "sim") continue
    if ((STEM_KINDS as readonly string[]).includes(ev.ev)) {
      lane(ev.node).stems.push({ t: ev.t, kind: ev.ev as StemKind })
      if (ev.ev === "pkt_overheard") overheard += 1
      continue
    }
    const label = markerLabel(ev)
    if (label !== null) lane(ev.node).markers.push({ t: ev.t, label })
  }

  const lanes = [...laneIndex.values()].sort(
    (a, b) => ROLE_ORDER[a.role] - ROLE_ORDER[b.role] || a.node.localeCompare(b.node),
  )

  const rows: DepthRowVM[] = lanes.map(l => {
    const series = s.depths.get(l.node)
    return {
      node: l.node,
      depth_m: series && series.length > 0 ? series[series.length - 1].depth_m : null,
    }
  })

  let optimalDepth: number | null = null
  for (const ev of s.events) {
    if (ev.ev === "optimal_depth" && ev.depth_m != null) optimalDepth = ev.depth_m
  }

  let deepest = 40
  for (const series of s.depths.values()) {
    for (const p of series) if (p.depth_m > deepest) deepest = p.depth_m
  }
  if (optimalDepth !== null && optimalDepth > deepest) deepest = optimalDepth
  const floor = Math.ceil(deepest / 10) * 10

  const t1 = Math.max(s.latestT(), TIMELINE_SPAN_S)

  return {
    connection: s.connection,
    banner: bannerFor(s),
    done: s.connection === "done",
    window: { t0: t1 - TIMELINE_SPAN_S, t1 },
    lanes,
    overheard: { count: overheard, highlight: overheard >= OVERHEARD_CUE_COUNT },
    depthPanel: { rows, optimalDepth, floor },
    trigger: {
      enabled: !s.triggerSent && s.connection !== "done",
      sent: s.triggerSent,
      toast: s.toast,
    },
    warnings: [...s.warnings],
  }
}

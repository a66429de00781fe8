// DOM wiring and canvas painting. Everything here is presentation; state
// lives in ConsoleSession and the shapes to draw come from render().

import { Connector } from "./connect.js"
import { ConsoleSession } from "./session.js"
import { render, StemKind, ViewModel } from "./view.js"
import { wsTransport } from "./ws.js"

const STEM_COLOR: Record<StemKind, string> = {
  pkt_tx: "#4f9cf7",
  pkt_rx: "#53c26b",
  pkt_overheard: "#9a9a9a",
}
const MARKER_COLOR = "#e8b34b"
const GRID_COLOR = "#2c3440"
const TEXT_COLOR = "#c8d0da"

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id)
  if (!node) throw new Error(`missing #${id}`)
  return node as T
}

function sizeCanvas(canvas: HTMLCanvasElement): CanvasRenderingContext2D {
  const dpr = window.devicePixelRatio || 1
  const w = canvas.clientWidth
  const h = canvas.clientHeight
  if (canvas.width !== w * dpr || canvas.height !== h * dpr) {
    canvas.width = w * dpr
    canvas.height = h * dpr
  }
  const ctx = canvas.getContext("2d")!
  ctx.setTransform(dpr, 0, 0, dpr, 0, 0)
  return ctx
}

function paintTimeline(canvas: HTMLCanvasElement, vm: ViewModel): void {
  const ctx = sizeCanvas(canvas)
  const w = canvas.clientWidth
  const h = canvas.clientHeight
  ctx.clearRect(0, 0, w, h)

  const left = 70
  const right = w - 12
  const { t0, t1 } = vm.window
  const x = (t: number) => left + ((t - t0) / (t1 - t0)) * (right - left)

  ctx.font = "11px system-ui, sans-serif"

  // time axis, one tick every 30 s
  ctx.strokeStyle = GRID_COLOR
  ctx.fillStyle = TEXT_COLOR
  const tickStep = 30
  for (let t = Math.ceil(t0 / tickStep) * tickStep; t <= t1; t += tickStep) {
    ctx.beginPath()
    ctx.moveTo(x(t), 14)
    ctx.lineTo(x(t), h - 18)
    ctx.stroke()
    ctx.fillText(`${t}s`, x(t) - 12, h - 5)
  }

  const lanes = vm.lanes
  const laneH = lanes.length > 0 ? (h - 40) / lanes.length : 0
  lanes.forEach((lane, i) => {
    const yMid = 20 + laneH * i + laneH / 2
    ctx.strokeStyle = GRID_COLOR
    ctx.beginPath()
    ctx.moveTo(left, yMid)
    ctx.lineTo(right, yMid)
    ctx.stroke()
    ctx.fillStyle = TEXT_COLOR
    ctx.fillText(lane.node, 8, yMid + 4)

    const stemLen = Math.min(laneH * 0.38, 26)
    for (const stem of lane.stems) {
      if (stem.t < t0 || stem.t > t1) continue
      const up = stem.kind === "pkt_tx"
      const len = stem.kind === "pkt_overheard" ? stemLen * 0.6 : stemLen
      ctx.strokeStyle = STEM_COLOR[stem.kind]
      ctx.beginPath()
      ctx.moveTo(x(stem.t), yMid)
      ctx.lineTo(x(stem.t), up ? yMid - len : yMid + len)
      ctx.stroke()
    }

    for (const marker of lane.markers) {
      if (marker.t < t0 || marker.t > t1) continue
      ctx.strokeStyle = MARKER_COLOR
      ctx.setLineDash([4, 3])
      ctx.beginPath()
      ctx.moveTo(x(marker.t), 14)
      ctx.lineTo(x(marker.t), h - 18)
      ctx.stroke()
      ctx.setLineDash([])
      ctx.fillStyle = MARKER_COLOR
      ctx.save()
      ctx.translate(x(marker.t) + 4, yMid - laneH * 0.32)
      ctx.rotate(-Math.PI / 6)
      ctx.fillText(marker.label, 0, 0)
      ctx.restore()
    }
  })
}

function paintProfile(canvas: HTMLCanvasElement, vm: ViewModel): void {
  const ctx = sizeCanvas(canvas)
  const w = canvas.clientWidth
  const h = canvas.clientHeight
  ctx.clearRect(0, 0, w, h)
  ctx.font = "11px system-ui, sans-serif"

  const top = 12
  const bottom = h - 14
  const axisX = 34
  const y = (depth: number) => top + (depth / vm.depthPanel.floor) * (bottom - top)

  ctx.strokeStyle = GRID_COLOR
  ctx.beginPath()
  ctx.moveTo(axisX, top)
  ctx.lineTo(axisX, bottom)
  ctx.stroke()
  ctx.fillStyle = TEXT_COLOR
  ctx.fillText("0", axisX - 12, top + 4)
  ctx.fillText(`${vm.depthPanel.floor}`, axisX - 28, bottom + 4)

  if (vm.depthPanel.optimalDepth !== null) {
    const yo = y(vm.depthPanel.optimalDepth)
    ctx.strokeStyle = MARKER_COLOR
    ctx.setLineDash([4, 3])
    ctx.beginPath()
    ctx.moveTo(axisX, yo)
    ctx.lineTo(w - 8, yo)
    ctx.stroke()
    ctx.setLineDash([])
    ctx.fillStyle = MARKER_COLOR
    ctx.fillText(`optimal ${vm.depthPanel.optimalDepth.toFixed(1)} m`, axisX + 6, yo - 4)
  }

  vm.depthPanel.rows.forEach((row, i) => {
    if (row.depth_m === null) return
    const px = axisX + 24 + i * 34
    ctx.fillStyle = "#6fb3e0"
    ctx.beginPath()
    ctx.arc(px, y(row.depth_m), 4, 0, Math.PI * 2)
    ctx.fill()
    ctx.fillStyle = TEXT_COLOR
    ctx.fillText(row.node.slice(0, 3), px - 8, bottom + 12)
  })
}

function main(): void {
  const endpointInput = el<HTMLInputElement>("endpoint")
  const connectBtn = el<HTMLButtonElement>("connect")
  const banner = el<HTMLDivElement>("banner")
  const counterBox = el<HTMLDivElement>("counter-box")
  const counter = el<HTMLDivElement>("overheard")
  const depthRows = el<HTMLTableSectionElement>("depth-rows")
  const triggerBtn = el<HTMLButtonElement>("trigger")
  const toast = el<HTMLDivElement>("toast")
  const warnList = el<HTMLUListElement>("warnings")
  const timeline = el<HTMLCanvasElement>("timeline")
  const profile = el<HTMLCanvasElement>("profile")

  const params = new URLSearchParams(window.location.search)
  endpointInput.value = params.get("endpoint") ?? "127.0.0.1:8765"

  let session = new ConsoleSession(endpointInput.value)
  let connector: Connector | null = null

  connectBtn.onclick = () => {
    connector?.stop()
    session = new ConsoleSession(endpointInput.value.trim())
    connector = new Connector(session, wsTransport)
    connector.start()
    endpointInput.disabled = true
    connectBtn.disabled = true
  }

  triggerBtn.onclick = () => {
    session.sendTrigger()
  }
  toast.onclick = () => {
    session.toast = null
  }

  const paint = () => {
    const vm = render(session)

    banner.textContent = vm.banner ?? ""
    banner.hidden = vm.banner === null
    banner.className = vm.done ? "done" : vm.connection === "connected" ? "" : "alert"

    counter.textContent = String(vm.overheard.count)
    counterBox.classList.toggle("cue", vm.overheard.highlight)

    const rowsHtml = vm.depthPanel.rows
      .map(r => `<tr><td>${r.node}</td><td>${r.depth_m === null ? "?" : r.depth_m.toFixed(1) + " m"}</td></tr>`)
      .join("")
    if (depthRows.innerHTML !== rowsHtml) depthRows.innerHTML = rowsHtml

    triggerBtn.disabled = !vm.trigger.enabled
    triggerBtn.textContent = vm.trigger.sent ? "trigger sent" : "start optimization"

    toast.hidden = vm.trigger.toast === null
    toast.textContent = vm.trigger.toast ?? ""

    const warnHtml = vm.warnings.map(wtext => `<li>${wtext}</li>`).join("")
    if (warnList.innerHTML !== warnHtml) warnList.innerHTML = warnHtml

    if (vm.done) {
      endpointInput.disabled = true
      connectBtn.disabled = true
    }

    paintTimeline(timeline, vm)
    paintProfile(profile, vm)
    window.requestAnimationFrame(paint)
  }
  window.requestAnimationFrame(paint)
}

main()

// Browser transport: the serve endpoint upgrades any connection whose
// first byte is "G", so a plain WebSocket works with one JSON document
// per text frame.

import { Transport } from "./connect.js"

export function wsTransport(endpoint: string): Transport {
  const url = /^wss?:\/\//.test(endpoint) ? endpoint : `ws://${endpoint}/`
  const sock = new WebSocket(url)
  const t: Transport = {
    send(line: string): void {
      sock.send(line)
    },
    close(): void {
      sock.close()
    },
    onOpen: null,
    onLine: null,
    onClose: null,
  }
  let closed = false
  const drop = (reason?: string) => {
    if (closed) return
    closed = true
    t.onClose?.(reason)
  }
  sock.onopen = () => t.onOpen?.()
  sock.onmessage = m => {
    for (const piece of String(m.data).split("\n")) {
      const line = piece.trim()
      if (line) t.onLine?.(line)
    }
  }
  sock.onerror = () => drop("socket error")
  sock.onclose = e => drop(e.reason || (e.wasClean ? "closed" : `closed (${e.code})`))
  return t
}
